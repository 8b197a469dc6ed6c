"""The instruction-to-plan translation model and its variants.

The full model runs six stages: embed the instruction words and the graph
triplets, encode both with bidirectional GRUs, attend each encoded triplet over
the instruction, compress the concatenated features to context columns, decode
behaviors with an attention GRU, and (for masked variants) constrain each
output step to behaviors executable at the tracked graph node.

Variants:
    full            graph-conditioned decoder with output masking
    full-no-mask    same network, no output masking
    ablation        instruction-only encoder feeding the decoder directly
    ablation-mask   instruction-only, plus output masking
    baseline        instruction-only decode followed by DFS plan repair
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from .autodiff import Param, Tensor
from .errors import (
    EmptyDataset,
    EmptyGraph,
    EmptyInstruction,
    NoSuchEdge,
    ShapeMismatch,
    VariantMismatch,
)
from .graph import (
    BEHAVIOR_INDEX,
    DECODER_ALPHABET,
    LOCATION_TYPES,
    STOP,
    BehavioralGraph,
    NavPlan,
    NodeId,
    Unrepairable,
    dfs_repair,
)
from .language import require_tokens
from .layers import (
    Adam,
    EmbeddingTable,
    GruCell,
    clip_global_norm,
    encode_bidirectional,
    glorot,
    glorot_vec,
    load_tensors,
    save_tensors,
)

VARIANTS = ("full", "full-no-mask", "ablation", "ablation-mask", "baseline")
MASKED_VARIANTS = ("full", "ablation-mask")
GRAPH_VARIANTS = ("full", "full-no-mask")

UNK = "<unk>"
_LOC_INDEX = {loc: i for i, loc in enumerate(LOCATION_TYPES)}
_N_SYMBOLS = len(DECODER_ALPHABET) + 1  # behaviors + stop + start token
DEC_INPUT_DIM = _N_SYMBOLS + len(LOCATION_TYPES)


@dataclass
class ModelConfig:
    """Hyper-parameters; the defaults are the published training setup."""

    variant: str = "full"
    hidden_size: int = 128
    embed_dim: int = 100
    dec_embed_dim: int = 32
    dropout: float = 0.5
    batch_size: int = 256
    max_triplets: int = 300
    max_words: int = 150
    max_nodes: int = 128
    validation_fraction: float = 0.125
    ordered_triplets: bool = False
    epochs: int = 60
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip: float = 5.0
    teacher_forcing_start: float = 1.0
    teacher_forcing_end: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    def to_meta(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in meta:
                continue
            raw = meta[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw == "True"
            elif f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


@dataclass
class DecodeTrace:
    """Greedy decode output plus the recorded attention distributions."""

    plan: NavPlan
    nodes: list[NodeId]
    valid: bool
    decoder_attention: np.ndarray  # (context columns, decode steps)
    encoder_attention: np.ndarray | None  # (L, T) for graph variants
    triplets: tuple | None


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    first_batch_loss: float
    val_em: float
    val_gm: float
    teacher_forcing: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    last_params: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["epoch,loss,first_batch_loss,val_em,val_gm,teacher_forcing"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.loss:.10g},{r.first_batch_loss:.10g},"
                f"{r.val_em:.6f},{r.val_gm:.6f},{r.teacher_forcing:.6f}"
            )
        return "\n".join(lines) + "\n"


def build_vocabulary(samples) -> tuple[str, ...]:
    tokens = set()
    for s in samples:
        tokens.update(require_tokens(s.instruction))
    return (UNK,) + tuple(sorted(tokens))


class Translator:
    """One model variant: configuration, vocabulary, and all trainable parameters."""

    def __init__(self, config: ModelConfig, vocabulary, pretrained: EmbeddingTable | None = None):
        self.config = config
        self.vocab = tuple(vocabulary)
        if UNK not in self.vocab:
            raise ValueError(f"vocabulary must contain the {UNK} token")
        self.vocab_index = {tok: i for i, tok in enumerate(self.vocab)}
        self._trip_cache: dict = {}
        # Within one training batch the parameters are fixed, so samples on the
        # same graph can share a single encoded-graph subgraph of the tape;
        # gradients accumulate through it exactly as if it were recomputed.
        self._batch_cache: dict | None = None
        self._build_params(pretrained)

    # -- parameters ---------------------------------------------------------

    def _build_params(self, pretrained):
        cfg = self.config
        rng = np.random.default_rng([cfg.seed % 2**32, 41])
        H, D = cfg.hidden_size, cfg.embed_dim
        self.params: dict[str, Param] = {}

        def register(param):
            self.params[param.name] = param
            return param

        if pretrained is not None:
            if pretrained.tokens != self.vocab:
                raise ShapeMismatch("pretrained table vocabulary differs from model vocabulary")
            emb = pretrained.vectors.copy()
        else:
            emb = glorot(rng, len(self.vocab), D)
        self.emb_instr = register(Param("emb.instr", emb))
        self.enc_i_fwd = GruCell("enc_i.fwd", D, H, rng)
        self.enc_i_bwd = GruCell("enc_i.bwd", D, H, rng)
        for cell in (self.enc_i_fwd, self.enc_i_bwd):
            for p in cell.params():
                register(p)

        if cfg.variant in GRAPH_VARIANTS:
            trip_dim = 2 * cfg.max_nodes + 31
            self.trip_proj = register(Param("trip.proj", glorot(rng, trip_dim, D)))
            self.enc_g_fwd = GruCell("enc_g.fwd", D, H, rng)
            self.enc_g_bwd = GruCell("enc_g.bwd", D, H, rng)
            for cell in (self.enc_g_fwd, self.enc_g_bwd):
                for p in cell.params():
                    register(p)
            self.att_W = register(Param("att.W", glorot(rng, 2 * H, 2 * H)))
            self.fc_W = register(Param("fc.W", glorot(rng, 4 * H, H)))
            self.fc_b = register(Param("fc.b", np.zeros(H)))
        else:
            self.ctx_W = register(Param("ctx.W", glorot(rng, 2 * H, H)))
            self.ctx_b = register(Param("ctx.b", np.zeros(H)))

        self.dec_embed = register(Param("dec.embed", glorot(rng, DEC_INPUT_DIM, cfg.dec_embed_dim)))
        self.dec_cell = GruCell("dec.cell", cfg.dec_embed_dim, H, rng)
        for p in self.dec_cell.params():
            register(p)
        self.dec_W1 = register(Param("dec.W1", glorot(rng, H, H)))
        self.dec_W2 = register(Param("dec.W2", glorot(rng, H, H)))
        self.dec_va = register(Param("dec.v_a", glorot_vec(rng, H)))
        self.out_W3 = register(Param("out.W3", glorot(rng, 2 * H, len(DECODER_ALPHABET))))

    def param_list(self) -> list[Param]:
        return [self.params[name] for name in sorted(self.params)]

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]):
        for name, value in snap.items():
            self.params[name].value[...] = value

    # -- encoding -----------------------------------------------------------

    def _token_indices(self, tokens) -> list[int]:
        unk = self.vocab_index[UNK]
        return [self.vocab_index.get(tok, unk) for tok in tokens[: self.config.max_words]]

    def _graph_inputs(self, graph: BehavioralGraph, start: NodeId):
        cfg = self.config
        key = (id(graph), graph.graph_id, start.tag if cfg.ordered_triplets else "")
        hit = self._trip_cache.get(key)
        if hit is not None:
            return hit
        trips = (
            graph.order_triplets(start)
            if cfg.ordered_triplets
            else list(graph.canonical_triplets())
        )
        trips = tuple(trips[: cfg.max_triplets])
        if not trips:
            raise EmptyGraph(f"graph {graph.graph_id} has no triplets")
        raw = np.stack([graph.encode_triplet(t, node_dim=cfg.max_nodes) for t in trips])
        self._trip_cache[key] = (trips, raw)
        return trips, raw

    def encode(self, tokens, graph: BehavioralGraph | None, start: NodeId | None, train=False, rng=None):
        """Instruction matrix (T, 2H) and, for graph variants, triplet matrix (L, 2H)."""
        cfg = self.config
        idxs = self._token_indices(tokens)
        if not idxs:
            raise EmptyInstruction("no tokens to encode")
        X = ad.gather_rows(self.emb_instr.tensor(), idxs)
        I_bar = encode_bidirectional(self.enc_i_fwd, self.enc_i_bwd, X)
        if train and cfg.dropout > 0:
            I_bar = ad.dropout(I_bar, cfg.dropout, True, rng)
        if cfg.variant not in GRAPH_VARIANTS:
            return I_bar, None, None
        cache_key = None
        if train and self._batch_cache is not None:
            cache_key = (id(graph), start.tag if cfg.ordered_triplets else "")
            hit = self._batch_cache.get(cache_key)
            if hit is not None:
                trips, G_raw_bar = hit
                if cfg.dropout > 0:
                    G_raw_bar = ad.dropout(G_raw_bar, cfg.dropout, True, rng)
                return I_bar, G_raw_bar, trips
        trips, raw = self._graph_inputs(graph, start)
        G_emb = ad.matmul(ad.constant(raw), self.trip_proj.tensor())
        G_bar = encode_bidirectional(self.enc_g_fwd, self.enc_g_bwd, G_emb)
        if cache_key is not None:
            self._batch_cache[cache_key] = (trips, G_bar)
        if train and cfg.dropout > 0:
            G_bar = ad.dropout(G_bar, cfg.dropout, True, rng)
        return I_bar, G_bar, trips

    def attend(self, I_bar: Tensor, G_bar: Tensor):
        """One-way attention of each triplet over the instruction words.

        Returns (A, F): A is the (L, T) attention matrix, F the (L, 4H)
        concatenation of attention summaries with the triplet encodings.
        """
        if self.config.variant not in GRAPH_VARIANTS:
            raise VariantMismatch("attention layer only exists in graph variants")
        E = ad.matmul(ad.matmul(G_bar, self.att_W.tensor()), ad.transpose(I_bar))
        A = ad.softmax(E)
        R = ad.matmul(A, I_bar)
        F = ad.hstack(R, G_bar)
        return A, F

    def compress_context(self, F: Tensor, train=False, rng=None) -> Tensor:
        """FC layer: rows of the result are the decoder's context columns."""
        if self.config.variant not in GRAPH_VARIANTS:
            raise VariantMismatch("FC layer only exists in graph variants")
        C = ad.tanh(ad.add_rowvec(ad.matmul(F, self.fc_W.tensor()), self.fc_b.tensor()))
        if train and self.config.dropout > 0:
            C = ad.dropout(C, self.config.dropout, True, rng)
        return C

    def ablation_context(self, I_bar: Tensor) -> Tensor:
        """Instruction-only path: affine 2H -> H, one context column per word."""
        if self.config.variant in GRAPH_VARIANTS:
            raise VariantMismatch("ablation context is not part of the full model")
        return ad.add_rowvec(ad.matmul(I_bar, self.ctx_W.tensor()), self.ctx_b.tensor())

    def _context(self, graph, start, tokens, train=False, rng=None):
        I_bar, G_bar, trips = self.encode(tokens, graph, start, train=train, rng=rng)
        if self.config.variant in GRAPH_VARIANTS:
            A, F = self.attend(I_bar, G_bar)
            return self.compress_context(F, train=train, rng=rng), A, trips
        return self.ablation_context(I_bar), None, None

    # -- decoding -----------------------------------------------------------

    def decoder_input(self, prev_behavior: str | None, start_loc: str | None = None) -> np.ndarray:
        """One-hot input: previous behavior, or the start token plus the start
        node's location type on the very first step."""
        vec = np.zeros(DEC_INPUT_DIM)
        if prev_behavior is None:
            vec[len(DECODER_ALPHABET)] = 1.0
            if start_loc is not None:
                vec[_N_SYMBOLS + _LOC_INDEX[start_loc]] = 1.0
        else:
            vec[BEHAVIOR_INDEX[prev_behavior]] = 1.0
        return vec

    def _decoder_env(self, Ct: Tensor) -> dict:
        """Leaf tensors and the loop-invariant W2-projected context, shared by
        every step of one decode."""
        return {
            "Ct": Ct,
            "CW2": ad.matmul(Ct, self.dec_W2.tensor()),
            "embed": self.dec_embed.tensor(),
            "W1": self.dec_W1.tensor(),
            "va": self.dec_va.tensor(),
            "W3": self.out_W3.tensor(),
            "cell": self.dec_cell.leaves(),
        }

    def _decode_step(self, env: dict, h_prev: Tensor, input_vec: np.ndarray):
        x = ad.matmul(ad.constant(input_vec), env["embed"])
        h = self.dec_cell.step(x, h_prev, leaves=env["cell"])
        scores = ad.matmul(
            ad.tanh(ad.add_rowvec(env["CW2"], ad.matmul(h, env["W1"]))), env["va"]
        )
        d = ad.softmax(scores)
        S = ad.matmul(d, env["Ct"])
        o = ad.matmul(ad.concat([S, h]), env["W3"])
        return h, o, d

    def decode_step(self, h_prev: Tensor, input_vec: np.ndarray, Ct: Tensor):
        """One decoder step: returns (h_t, logits o_t over 12 symbols, attention d_t)."""
        return self._decode_step(self._decoder_env(Ct), h_prev, input_vec)

    def _initial_hidden(self) -> Tensor:
        return ad.constant(np.zeros(self.config.hidden_size))

    def predict(self, graph: BehavioralGraph, start: NodeId, instruction: str) -> DecodeTrace:
        """Greedy masked (or unmasked) decode of one instruction."""
        tokens = require_tokens(instruction)
        Ct, A, trips = self._context(graph, start, tokens, train=False)
        env = self._decoder_env(Ct)
        masked = self.config.variant in MASKED_VARIANTS
        cap = 2 * graph.diameter() + 5
        h = self._initial_hidden()
        input_vec = self.decoder_input(None, start.location_type)
        node = start
        tracking = True
        behaviors: list[str] = []
        attention_cols = []
        nodes = [start]
        for _ in range(cap):
            h, o, d = self._decode_step(env, h, input_vec)
            attention_cols.append(d.value.copy())
            logits = o.value
            if masked:
                logits = logits + graph.mask(node)
            symbol = DECODER_ALPHABET[int(np.argmax(logits))]
            if symbol == STOP:
                break
            behaviors.append(symbol)
            if tracking:
                try:
                    node = graph.transition(node, symbol)
                    nodes.append(node)
                except NoSuchEdge:
                    tracking = False
            input_vec = self.decoder_input(symbol)
        plan = NavPlan(start, tuple(behaviors))
        return DecodeTrace(
            plan=plan,
            nodes=nodes,
            valid=tracking,
            decoder_attention=np.array(attention_cols).T,
            encoder_attention=A.value.copy() if A is not None else None,
            triplets=trips,
        )

    def baseline_predict(self, graph: BehavioralGraph, start: NodeId, instruction: str):
        """Two-step baseline: unmasked decode, then DFS repair (<= 3 substitutions)."""
        if self.config.variant != "baseline":
            raise VariantMismatch("baseline_predict requires the baseline variant")
        trace = self.predict(graph, start, instruction)
        return dfs_repair(graph, start, trace.plan.behaviors, 3), trace

    def plan_for(self, sample, graph: BehavioralGraph) -> tuple[str, ...]:
        """The behavior sequence this model predicts for a dataset sample."""
        if self.config.variant == "baseline":
            result, _ = self.baseline_predict(graph, sample.start, sample.instruction)
            return result.behaviors
        return self.predict(graph, sample.start, sample.instruction).plan.behaviors

    # -- training -----------------------------------------------------------

    def _sample_loss(self, graph, sample, p_tf, rng) -> Tensor:
        tokens = require_tokens(sample.instruction)
        Ct, _, _ = self._context(graph, sample.start, tokens, train=True, rng=rng)
        env = self._decoder_env(Ct)
        targets = [BEHAVIOR_INDEX[b] for b in sample.plan.behaviors] + [BEHAVIOR_INDEX[STOP]]
        h = self._initial_hidden()
        input_vec = self.decoder_input(None, sample.start.location_type)
        losses = []
        for t, target in enumerate(targets):
            h, o, _ = self._decode_step(env, h, input_vec)
            losses.append(ad.cross_entropy(o, target))
            if t < len(targets) - 1:
                feed = sample.plan.behaviors[t]
                if p_tf < 1.0 and rng.random() >= p_tf:
                    feed = DECODER_ALPHABET[int(np.argmax(o.value))]
                input_vec = self.decoder_input(feed)
        return ad.add_many(losses)

    def _teacher_forcing(self, epoch: int, total_epochs: int) -> float:
        if self.config.variant == "baseline":
            return 1.0
        start = self.config.teacher_forcing_start
        end = self.config.teacher_forcing_end
        if total_epochs <= 1:
            return start
        frac = epoch / (total_epochs - 1)
        return start + (end - start) * min(1.0, frac)

    def _quick_metrics(self, samples, graphs) -> tuple[float, float]:
        if not samples:
            return 0.0, 0.0
        em_total = 0
        gm_total = 0
        for s in samples:
            g = graphs[s.graph_id]
            pred = self.plan_for(s, g)
            em_total += metrics_mod.exact_match(pred, s.plan.behaviors)
            gm_total += metrics_mod.goal_match(g, s.start, pred, s.plan.behaviors)
        return em_total / len(samples), gm_total / len(samples)

    def train(
        self,
        split,
        *,
        epochs: int | None = None,
        start_epoch: int = 0,
        stop_condition=None,
        metrics_every: int = 1,
    ) -> TrainReport:
        """Teacher-forced training with scheduled sampling and GM-based selection.

        Per-epoch RNG streams are derived from (config.seed, epoch), so a run
        resumed from epoch k reproduces an uninterrupted run exactly. The best
        validation (GM, EM) snapshot is restored into the model at the end;
        `report.last_params` holds the final-epoch parameters for resuming.
        Validation metrics (and the snapshot decision) run every
        `metrics_every` epochs; intermediate records repeat the last values.
        """
        cfg = self.config
        total_epochs = cfg.epochs if epochs is None else epochs
        samples = list(split.samples)
        if not samples:
            raise EmptyDataset("training split has no samples")
        graphs = split.graphs_by_id()

        split_rng = np.random.default_rng([cfg.seed % 2**32, 63])
        order = [int(i) for i in split_rng.permutation(len(samples))]
        n_val = int(round(cfg.validation_fraction * len(samples)))
        val_idx, train_idx = order[:n_val], order[n_val:]
        if not train_idx:
            raise EmptyDataset("validation split left no training samples")
        val_samples = [samples[i] for i in val_idx] or [samples[i] for i in train_idx]

        optimizer = Adam(
            self.param_list(),
            lr=cfg.learning_rate,
            beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2,
        )
        report = TrainReport()
        best_key = None
        best_snap = None
        best_epoch = -1
        val_em = val_gm = 0.0

        for epoch in range(start_epoch, total_epochs):
            rng = np.random.default_rng([cfg.seed % 2**32, 101, epoch])
            p_tf = self._teacher_forcing(epoch, total_epochs)
            epoch_order = [train_idx[int(i)] for i in rng.permutation(len(train_idx))]
            epoch_loss = 0.0
            first_batch_loss = float("nan")
            for b0 in range(0, len(epoch_order), cfg.batch_size):
                batch = epoch_order[b0 : b0 + cfg.batch_size]
                self.zero_grads()
                self._batch_cache = {}
                losses = []
                for i in batch:
                    s = samples[i]
                    losses.append(self._sample_loss(graphs[s.graph_id], s, p_tf, rng))
                self._batch_cache = None
                batch_loss = ad.scale(ad.add_many(losses), 1.0 / len(batch))
                batch_loss.backward()
                clip_global_norm(self.param_list(), cfg.grad_clip)
                optimizer.step()
                if b0 == 0:
                    first_batch_loss = float(batch_loss.value)
                epoch_loss += float(batch_loss.value) * len(batch)
            measured = (epoch - start_epoch) % metrics_every == 0 or epoch == total_epochs - 1
            if measured:
                val_em, val_gm = self._quick_metrics(val_samples, graphs)
            record = EpochRecord(
                epoch=epoch,
                loss=epoch_loss / len(epoch_order),
                first_batch_loss=first_batch_loss,
                val_em=val_em,
                val_gm=val_gm,
                teacher_forcing=p_tf,
            )
            report.records.append(record)
            if measured:
                key = (val_gm, val_em)
                if best_key is None or key > best_key:
                    best_key = key
                    best_snap = self.snapshot()
                    best_epoch = epoch
                if stop_condition is not None and stop_condition(record):
                    break

        report.last_params = self.snapshot()
        report.best_epoch = best_epoch
        if best_snap is not None:
            self.restore(best_snap)
        return report

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        meta = self.config.to_meta()
        meta["format"] = "translator"
        save_tensors(
            path,
            {name: p.value for name, p in self.params.items()},
            meta=meta,
            vocab=self.vocab,
        )

    @classmethod
    def load(cls, path) -> "Translator":
        meta, vocab, named = load_tensors(path)
        config = ModelConfig.from_meta(meta)
        model = cls(config, vocab)
        for name, param in model.params.items():
            if name not in named:
                raise ShapeMismatch(f"checkpoint missing tensor {name}")
            if named[name].shape != param.value.shape:
                raise ShapeMismatch(
                    f"checkpoint tensor {name} has shape {named[name].shape}, "
                    f"model expects {param.value.shape}"
                )
            param.value[...] = named[name]
        extra = set(named) - set(model.params)
        if extra:
            raise ShapeMismatch(f"checkpoint has unexpected tensors: {sorted(extra)}")
        return model
