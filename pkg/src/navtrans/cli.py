"""navctl: generate datasets, train, evaluate, and run single predictions.

Configuration is a flat key=value file selected with --config; command-line
flags override file values. Every run writes a manifest recording the resolved
config hash, the seed, and checksums of the artifacts it produced.
Exit codes: 0 success, 1 validation error, 2 IO error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import metrics as metrics_mod
from . import report as report_mod
from .dataset import build_dataset, format_counts_table, read_dataset, write_dataset
from .errors import NavError, ShapeMismatch
from .graph import read_graph
from .layers import load_pretrained, load_tensors, save_tensors
from .model import ModelConfig, Translator, build_vocabulary
from .graph import Unrepairable


class CliValidationError(NavError):
    """Bad flags, bad config keys, or inconsistent values."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we classify as validation
        raise CliValidationError(message)


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

GEN_KEYS = {
    "out": (str, "data"),
    "seed": (int, 0),
    "train_graphs": (int, 3),
    "new_graphs": (int, 1),
    "routes_per_graph": (int, 8),
    "double_fraction": (float, 0.25),
    "test_routes_per_graph": (int, None),
    "new_routes_per_graph": (int, None),
    "suboptimal_fraction": (float, 0.05),
    "rooms_min": (int, 6),
    "rooms_max": (int, 9),
}

TRAIN_KEYS = {
    "data": (str, "data"),
    "out": (str, "run"),
    "seed": (int, 0),
    "variant": (str, "full"),
    "hidden_size": (int, 128),
    "embed_dim": (int, 100),
    "dec_embed_dim": (int, 32),
    "dropout": (float, 0.5),
    "batch_size": (int, 256),
    "epochs": (int, 60),
    "learning_rate": (float, 1e-3),
    "grad_clip": (float, 5.0),
    "ordered_triplets": (bool, False),
    "max_triplets": (int, 300),
    "max_words": (int, 150),
    "max_nodes": (int, 128),
    "validation_fraction": (float, 0.125),
    "teacher_forcing_start": (float, 1.0),
    "teacher_forcing_end": (float, 0.5),
    "embeddings": (str, None),
    "resume": (str, None),
}

EVAL_KEYS = {
    "checkpoint": (str, None),
    "data": (str, "data"),
    "splits": (str, "test-repeated,test-new"),
    "out": (str, "evalout"),
    "seed": (int, 0),
    "hidden_size": (int, None),
    "variant": (str, None),
}

PREDICT_KEYS = {
    "checkpoint": (str, None),
    "graph": (str, None),
    "start": (str, None),
    "text": (str, None),
    "attention": (str, None),
    "seed": (int, 0),
}

_COMMAND_KEYS = {"gen": GEN_KEYS, "train": TRAIN_KEYS, "eval": EVAL_KEYS, "predict": PREDICT_KEYS}


def _coerce(key, raw, typ):
    if raw is None:
        return None
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise CliValidationError(f"key {key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise CliValidationError(f"key {key}: expected {typ.__name__}, got {raw!r}") from None


def parse_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliValidationError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def resolve_config(command, args) -> dict:
    keys = _COMMAND_KEYS[command]
    resolved = {k: default for k, (_, default) in keys.items()}
    if args.config:
        file_values = parse_config_file(args.config)
        unknown = set(file_values) - set(keys)
        if unknown:
            raise CliValidationError(
                f"unknown config keys for {command}: {', '.join(sorted(unknown))}"
            )
        for k, v in file_values.items():
            resolved[k] = _coerce(k, v, keys[k][0])
    for k in keys:
        flag_value = getattr(args, k, None)
        if flag_value is not None:
            resolved[k] = _coerce(k, flag_value, keys[k][0])
    return resolved


_PATH_KEYS = {"out", "data", "checkpoint", "graph", "attention", "embeddings", "resume"}


def _config_digest(resolved: dict) -> str:
    # hash the semantic configuration only; filesystem locations don't belong
    text = "\n".join(f"{k}={resolved[k]}" for k in sorted(resolved) if k not in _PATH_KEYS)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir, resolved, artifacts):
    lines = [f"config_sha256={_config_digest(resolved)}", f"seed={resolved.get('seed', 0)}"]
    for rel in sorted(artifacts):
        lines.append(f"artifact {rel} sha256={_file_sha256(os.path.join(out_dir, rel))}")
    with open(os.path.join(out_dir, "run_manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _list_artifacts(out_dir):
    found = []
    for root, _, files in os.walk(out_dir):
        for name in files:
            if name == "run_manifest.txt":
                continue
            found.append(os.path.relpath(os.path.join(root, name), out_dir))
    return found


# -- commands -----------------------------------------------------------------


def cmd_gen(cfg) -> int:
    if cfg["routes_per_graph"] <= 0 or cfg["train_graphs"] <= 0 or cfg["new_graphs"] <= 0:
        raise CliValidationError("graph and route counts must be positive")
    if cfg["rooms_min"] > cfg["rooms_max"]:
        raise CliValidationError("rooms_min must not exceed rooms_max")
    training, test_repeated, test_new = build_dataset(
        cfg["train_graphs"],
        cfg["new_graphs"],
        cfg["routes_per_graph"],
        cfg["double_fraction"],
        cfg["seed"],
        test_routes_per_graph=cfg["test_routes_per_graph"],
        new_routes_per_graph=cfg["new_routes_per_graph"],
        suboptimal_fraction=cfg["suboptimal_fraction"],
        rooms_range=(cfg["rooms_min"], cfg["rooms_max"]),
    )
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_dataset([training, test_repeated, test_new], out)
    print(format_counts_table([training, test_repeated, test_new]))
    print("split hygiene: ok (routes disjoint, test-new graphs unseen)")
    write_run_manifest(out, cfg, _list_artifacts(out))
    return 0


def _model_config_from(cfg) -> ModelConfig:
    return ModelConfig(
        variant=cfg["variant"],
        hidden_size=cfg["hidden_size"],
        embed_dim=cfg["embed_dim"],
        dec_embed_dim=cfg["dec_embed_dim"],
        dropout=cfg["dropout"],
        batch_size=cfg["batch_size"],
        max_triplets=cfg["max_triplets"],
        max_words=cfg["max_words"],
        max_nodes=cfg["max_nodes"],
        validation_fraction=cfg["validation_fraction"],
        ordered_triplets=cfg["ordered_triplets"],
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        grad_clip=cfg["grad_clip"],
        teacher_forcing_start=cfg["teacher_forcing_start"],
        teacher_forcing_end=cfg["teacher_forcing_end"],
        seed=cfg["seed"],
    )


def cmd_train(cfg) -> int:
    splits = read_dataset(cfg["data"])
    if "training" not in splits:
        raise CliValidationError("dataset has no training split")
    training = splits["training"]

    start_epoch = 0
    if cfg["resume"]:
        # the checkpoint's config wins; --epochs sets the new total to train to
        meta, _, _ = load_tensors(cfg["resume"])
        model = Translator.load(cfg["resume"])
        model.config.epochs = cfg["epochs"]
        start_epoch = int(meta.get("epochs_completed", "0"))
    else:
        mc = _model_config_from(cfg)
        vocab = build_vocabulary(training.samples)
        pretrained = None
        if cfg["embeddings"]:
            pretrained = load_pretrained(cfg["embeddings"], vocab, dim=mc.embed_dim)
        model = Translator(mc, vocab, pretrained=pretrained)

    report = model.train(training, epochs=model.config.epochs, start_epoch=start_epoch)

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "checkpoint.ckpt")
    model.save(ckpt)
    last_meta = model.config.to_meta()
    last_meta["format"] = "translator"
    last_meta["epochs_completed"] = str(model.config.epochs)
    save_tensors(
        os.path.join(out, "checkpoint_last.ckpt"),
        report.last_params,
        meta=last_meta,
        vocab=model.vocab,
    )
    with open(os.path.join(out, "train_report.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    if report.records:
        report_mod.save_loss_curve(report.records, os.path.join(out, "loss_curve.png"))
        final = report.records[-1]
        best = report.best_epoch
        print(
            f"trained {model.config.variant} for epochs [{start_epoch}, {model.config.epochs});"
            f" final loss {final.loss:.4f}, best epoch {best}"
            f" (val EM {final.val_em:.3f}, val GM {final.val_gm:.3f})"
        )
    write_run_manifest(out, cfg, _list_artifacts(out))
    return 0


def cmd_eval(cfg) -> int:
    if not cfg["checkpoint"]:
        raise CliValidationError("eval requires a checkpoint")
    meta, _, _ = load_tensors(cfg["checkpoint"])
    if cfg["hidden_size"] is not None and int(meta.get("hidden_size", -1)) != cfg["hidden_size"]:
        raise ShapeMismatch(
            f"checkpoint hidden_size={meta.get('hidden_size')} does not match "
            f"configured hidden_size={cfg['hidden_size']}"
        )
    if cfg["variant"] is not None and meta.get("variant") != cfg["variant"]:
        raise ShapeMismatch(
            f"checkpoint variant={meta.get('variant')} does not match configured "
            f"variant={cfg['variant']}"
        )
    model = Translator.load(cfg["checkpoint"])
    splits = read_dataset(cfg["data"])
    wanted = [s.strip() for s in cfg["splits"].split(",") if s.strip()]
    for name in wanted:
        if name not in splits:
            raise CliValidationError(f"dataset has no split named {name!r}")

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    reports = []
    for name in wanted:
        rep = metrics_mod.evaluate_model(model, splits[name])
        reports.append(rep)
        with open(os.path.join(out, f"{name}_samples.csv"), "w", encoding="utf-8") as fh:
            fh.write(rep.samples_csv())
    with open(os.path.join(out, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join([metrics_mod.SUMMARY_HEADER] + [r.summary_row() for r in reports]) + "\n")
    report_mod.save_metric_bars(reports, os.path.join(out, "metrics.png"))
    print(metrics_mod.TABLE_HEADER)
    for rep in reports:
        print(rep.format_table_row())
    write_run_manifest(out, cfg, _list_artifacts(out))
    return 0


def cmd_predict(cfg) -> int:
    for key in ("checkpoint", "graph", "start", "text"):
        if not cfg[key]:
            raise CliValidationError(f"predict requires --{key}")
    model = Translator.load(cfg["checkpoint"])
    graph = read_graph(cfg["graph"])
    start = graph.node(cfg["start"])

    if model.config.variant == "baseline":
        result, trace = model.baseline_predict(graph, start, cfg["text"])
        if isinstance(result, Unrepairable):
            print(f"plan: {' '.join(result.behaviors)} (unrepairable)")
        else:
            nodes = graph.execute_plan(result)
            print(f"plan: {' '.join(result.behaviors)}")
            print(f"nodes: {' '.join(n.tag for n in nodes)}")
    else:
        trace = model.predict(graph, start, cfg["text"])
        print(f"plan: {' '.join(trace.plan.behaviors)}")
        node_text = " ".join(n.tag for n in trace.nodes)
        if not trace.valid:
            node_text += f" (invalid at step {len(trace.nodes)})"
        print(f"nodes: {node_text}")

    if cfg["attention"]:
        os.makedirs(cfg["attention"], exist_ok=True)
        labels = None
        if trace.triplets is not None:
            labels = [t.edge_line().replace(",", ";") for t in trace.triplets]
        report_mod.save_attention_csv(
            trace.decoder_attention, os.path.join(cfg["attention"], "decoder_attention.csv"), labels
        )
        report_mod.save_attention_heatmap(
            trace.decoder_attention,
            os.path.join(cfg["attention"], "decoder_attention.png"),
            title="decoder attention",
        )
        if trace.encoder_attention is not None:
            report_mod.save_attention_csv(
                trace.encoder_attention,
                os.path.join(cfg["attention"], "encoder_attention.csv"),
                labels,
            )
            report_mod.save_attention_heatmap(
                trace.encoder_attention,
                os.path.join(cfg["attention"], "encoder_attention.png"),
                title="encoder attention",
                xlabel="instruction token",
            )
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="navctl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    add_common(g)
    g.add_argument("--train-graphs", dest="train_graphs", type=int)
    g.add_argument("--new-graphs", dest="new_graphs", type=int)
    g.add_argument("--routes-per-graph", dest="routes_per_graph", type=int)
    g.add_argument("--double-fraction", dest="double_fraction", type=float)
    g.add_argument("--test-routes-per-graph", dest="test_routes_per_graph", type=int)
    g.add_argument("--new-routes-per-graph", dest="new_routes_per_graph", type=int)
    g.add_argument("--suboptimal-fraction", dest="suboptimal_fraction", type=float)
    g.add_argument("--rooms-min", dest="rooms_min", type=int)
    g.add_argument("--rooms-max", dest="rooms_max", type=int)

    t = sub.add_parser("train", help="train a model variant")
    add_common(t)
    t.add_argument("--data")
    t.add_argument("--variant", choices=["full", "full-no-mask", "ablation", "ablation-mask", "baseline"])
    t.add_argument("--hidden-size", dest="hidden_size", type=int)
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--dec-embed-dim", dest="dec_embed_dim", type=int)
    t.add_argument("--dropout", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--grad-clip", dest="grad_clip", type=float)
    t.add_argument("--ordered-triplets", dest="ordered_triplets", action="store_const", const=True)
    t.add_argument("--max-triplets", dest="max_triplets", type=int)
    t.add_argument("--max-words", dest="max_words", type=int)
    t.add_argument("--max-nodes", dest="max_nodes", type=int)
    t.add_argument("--validation-fraction", dest="validation_fraction", type=float)
    t.add_argument("--teacher-forcing-start", dest="teacher_forcing_start", type=float)
    t.add_argument("--teacher-forcing-end", dest="teacher_forcing_end", type=float)
    t.add_argument("--embeddings", help="pretrained embedding file (token + floats per line)")
    t.add_argument("--resume", help="continue from a checkpoint_last.ckpt")

    e = sub.add_parser("eval", help="evaluate a checkpoint on dataset splits")
    add_common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--splits")
    e.add_argument("--hidden-size", dest="hidden_size", type=int)
    e.add_argument("--variant")

    p = sub.add_parser("predict", help="translate one instruction on one graph")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--graph")
    p.add_argument("--start")
    p.add_argument("--text")
    p.add_argument("--attention", help="directory for attention CSV + heatmap export")

    return parser


_HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args.command, args)
        return _HANDLERS[args.command](cfg)
    except NavError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
