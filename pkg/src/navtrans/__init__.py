"""navtrans: natural-language navigation instructions to behavior sequences
over behavioral navigation graphs."""

from .graph import (
    BEHAVIORS,
    DECODER_ALPHABET,
    LANDMARKS,
    LOCATION_TYPES,
    STOP,
    BehavioralGraph,
    NavPlan,
    NodeId,
    Triplet,
    Unrepairable,
    dfs_repair,
    read_graph,
    write_graph,
)
from .worldgen import WorldSpec, generate_world
from .language import normalize_text, parse_instruction, synthesize_instruction
from .dataset import DatasetSplit, Sample, build_dataset, read_dataset, write_dataset
from .model import DecodeTrace, ModelConfig, Translator, build_vocabulary
from .metrics import (
    MetricReport,
    edit_distance,
    evaluate,
    evaluate_model,
    exact_match,
    f1_score,
    goal_match,
)

__version__ = "0.1.0"
