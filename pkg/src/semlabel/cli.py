"""``semlabel`` command-line interface.

Subcommands: gen-data, embed, compact, train, evaluate, crossval, compare,
project2d. Errors are printed to stderr as ``semlabel: error [<code>]: ...``
and exit with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EncodingError, SemlabelError
from .evaluation import (CrossValReport, collect_paired_scores, cross_validate, evaluate,
                         summary_csv)
from .graph_data import Dataset, SynthConfig, generate_synthetic, load_dataset
from .label_encoding import (EmbeddingEndpointConfig, EncodingTable, LabelVocabulary, compact,
                             fetch_embeddings, load_embedding_table, one_hot_table,
                             synth_hierarchical_table, building_vocabulary)
from .sage_model import SageModel
from .stats import DEFAULT_ALPHA, compare_encodings
from .training import LossKind, TrainConfig, TrainedModel, history_csv, train

log = logging.getLogger("semlabel")

TOKEN_ENV = "SEMLABEL_API_TOKEN"


class CliError(SemlabelError):
    code = "usage"


# --- helpers ----------------------------------------------------------------

def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}", code="file_not_found") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON: {exc}", code="malformed_json") from exc


def _write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name).strip("_") or "encoding"


def _load_ds(path) -> Dataset:
    try:
        return load_dataset(Path(path).read_bytes())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}", code="file_not_found") from None


def _vocab_from(args) -> LabelVocabulary:
    if getattr(args, "dataset", None):
        return _load_ds(args.dataset).vocabulary
    src = getattr(args, "vocab", None)
    if src is None:
        raise CliError("give --dataset or --vocab")
    if src == "building":
        return building_vocabulary()
    doc = _read_json(src)
    if isinstance(doc, list):
        return LabelVocabulary(tuple(doc))
    return LabelVocabulary(tuple(doc["labels"]), doc.get("generic_group"))


def _table_file(path) -> tuple[LabelVocabulary, EncodingTable]:
    """Read an embedding-table file; its key order defines the vocabulary."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise EncodingError(f"{path}: embedding table must be a JSON object", code="malformed_json")
    vocab = LabelVocabulary(tuple(doc))
    return vocab, load_embedding_table(doc, vocab)


def _aligned_table(path, vocab: LabelVocabulary) -> EncodingTable:
    return load_embedding_table(_read_json(path), vocab)


def _train_config(base: dict, args) -> TrainConfig:
    d = dict(base)
    for flag, key in (("epochs", "epochs"), ("learning_rate", "learning_rate"), ("seed", "seed"),
                      ("hidden_dim", "hidden_dim"), ("optimizer", "optimizer"),
                      ("patience", "early_stop_patience"), ("loss", "loss_kind")):
        val = getattr(args, flag, None)
        if val is not None:
            d[key] = val
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid training config: {exc}", code="bad_config") from exc


def _add_train_flags(p):
    p.add_argument("--train-config", help="TrainConfig JSON file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--patience", type=int, help="early-stop patience in epochs")


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args):
    d = _read_json(args.config) if args.config else {}
    for key in SynthConfig.__dataclass_fields__:
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    try:
        cfg = SynthConfig.from_dict(d)
    except TypeError as exc:
        raise CliError(f"invalid synthetic config: {exc}", code="bad_config") from exc
    ds = generate_synthetic(cfg)
    _write(args.out, ds.to_json())
    log.info("wrote %d nodes, %d edges, %d labels to %s",
             ds.n_nodes, len(ds.edges), len(ds.vocabulary), args.out)


def _acquire_table(spec: dict, vocab: LabelVocabulary, base_dir: Path = Path(".")) -> EncodingTable:
    """Build one encoding table from an encoding spec dict (see README)."""
    kind = spec.get("kind")
    if kind == "onehot":
        table = one_hot_table(vocab)
    elif kind == "synth":
        table = synth_hierarchical_table(vocab, int(spec["dim"]), int(spec.get("seed", 0)),
                                         float(spec.get("within_group_cos", 0.8)))
    elif kind == "file":
        table = _aligned_table(base_dir / spec["path"], vocab)
    elif kind == "fetch":
        cache = spec.get("cache")
        if cache and (base_dir / cache).exists():
            table = _aligned_table(base_dir / cache, vocab)
        else:
            endpoint = EmbeddingEndpointConfig(
                base_url=spec["endpoint"], model_name=spec["model"],
                auth_token=os.environ.get(TOKEN_ENV),
                batch_size=int(spec.get("batch_size", 16)),
                prompt_template=spec.get("prompt_template", "{label}"),
            )
            table = fetch_embeddings(endpoint, vocab, persist_path=base_dir / cache if cache else None)
    else:
        raise CliError(f"unknown encoding kind {kind!r}", code="bad_config")
    if spec.get("compact"):
        table = compact(table, int(spec["compact"]))
    return table


def cmd_embed(args):
    vocab = _vocab_from(args)
    spec = {"kind": {"onehot": "onehot", "synth": "synth", "fetch": "fetch"}[args.mode]}
    if args.mode == "synth":
        spec.update(dim=args.dim, seed=args.seed, within_group_cos=args.within_group_cos)
    elif args.mode == "fetch":
        if not args.endpoint or not args.model:
            raise CliError("--mode fetch needs --endpoint and --model")
        spec.update(endpoint=args.endpoint, model=args.model, batch_size=args.batch_size,
                    prompt_template=args.prompt_template)
    if args.compact:
        spec["compact"] = args.compact
    if args.mode == "fetch" and args.raw_out:
        spec["cache"] = str(args.raw_out)
    table = _acquire_table(spec, vocab)
    _write(args.out, table.to_json(vocab))
    log.info("wrote %d x %d %s table to %s", len(table), table.dim, table.kind.value, args.out)


def cmd_compact(args):
    vocab, table = _table_file(args.table)
    _write(args.out, compact(table, args.dim).to_json(vocab))


def _loss_for(kind: str | None, table_given: bool) -> LossKind:
    if kind is not None:
        return LossKind(kind)
    return LossKind.COSINE if table_given else LossKind.SOFTMAX_CE


def cmd_train(args):
    ds = _load_ds(args.dataset)
    base = _read_json(args.train_config) if args.train_config else {}
    if args.loss is None and "loss_kind" not in base:
        args.loss = _loss_for(None, bool(args.table)).value
    cfg = _train_config(base, args)
    table = _aligned_table(args.table, ds.vocabulary) if args.table else one_hot_table(ds.vocabulary)
    if args.test_project is not None:
        ids = np.flatnonzero(ds.project_of != args.test_project)
    else:
        ids = np.arange(ds.n_nodes)
    trained, history = train(ds, ids, table, cfg)
    ckpt = json.loads(trained.model.to_json())
    ckpt["loss_kind"] = cfg.loss_kind.value
    _write(args.out, json.dumps(ckpt))
    if args.history:
        _write(args.history, history_csv(history))
    log.info("trained %d epochs on %d nodes, final loss %.6g", len(history), len(ids), history[-1])


def cmd_evaluate(args):
    ds = _load_ds(args.dataset)
    ckpt = _read_json(args.model)
    model = SageModel.from_json(ckpt)
    loss_kind = LossKind(ckpt.get("loss_kind", LossKind.SOFTMAX_CE.value))
    table = _aligned_table(args.table, ds.vocabulary) if args.table else one_hot_table(ds.vocabulary)
    if loss_kind.uses_table and model.out_dim != table.dim:
        raise CliError(f"model outputs {model.out_dim} dims but table has {table.dim}",
                       code="dimension_mismatch")
    trained = TrainedModel(model, loss_kind, table)
    if args.project is not None:
        ids = ds.nodes_of_project(args.project)
    else:
        ids = np.arange(ds.n_nodes)
    report = evaluate(trained, ds, ids)
    text = json.dumps(report.to_dict(), indent=1, sort_keys=True)
    if args.out:
        _write(args.out, text)
    else:
        print(text)


def _experiment_dataset(cfg: dict, base_dir: Path) -> Dataset:
    src = cfg.get("dataset")
    if isinstance(src, str):
        return _load_ds(base_dir / src)
    if isinstance(src, dict) and "synth" in src:
        return generate_synthetic(SynthConfig.from_dict(src["synth"]))
    raise CliError("config.dataset must be a path or {\"synth\": {...}}", code="bad_config")


def _pairwise(reports, alpha: float) -> list[dict]:
    out = []
    for a, b in itertools.combinations(reports, 2):
        entry = {"a": a.name, "b": b.name}
        try:
            x, y = collect_paired_scores(a, b)
            entry.update(compare_encodings(x, y, alpha).to_dict())
        except SemlabelError as exc:
            entry.update(error=exc.code, message=str(exc))
        out.append(entry)
    return out


def cmd_crossval(args):
    cfg_path = Path(args.config)
    cfg = _read_json(cfg_path)
    base_dir = cfg_path.parent
    encodings = cfg.get("encodings") or []
    if not encodings:
        raise CliError("config needs at least one encoding spec", code="bad_config")
    out_dir = Path(args.out_dir or cfg.get("output_dir") or "crossval_out")
    if not args.out_dir and not Path(out_dir).is_absolute():
        out_dir = base_dir / out_dir
    alpha = args.alpha if args.alpha is not None else float(cfg.get("alpha", DEFAULT_ALPHA))
    workers = args.workers or int(cfg.get("workers", 1))
    base_train = dict(cfg.get("train", {}))
    if args.train_config:
        base_train.update(_read_json(args.train_config))
    base_train.pop("loss_kind", None)

    ds = _experiment_dataset(cfg, base_dir)
    names = [spec.get("name") or f"{spec.get('kind')}_{i}" for i, spec in enumerate(encodings)]
    if len(set(map(_slug, names))) != len(names):
        raise CliError("encoding names must be unique", code="bad_config")

    reports = []
    for name, spec in zip(names, encodings):
        t0 = time.perf_counter()
        try:
            table = _acquire_table(spec, ds.vocabulary, base_dir)
            default_loss = LossKind.SOFTMAX_CE if spec.get("kind") == "onehot" else LossKind.COSINE
            train_cfg = _train_config({**base_train, "loss_kind": spec.get("loss", default_loss.value)}, args)
            reports.append(cross_validate(ds, table, train_cfg, name=name, workers=workers))
        except SemlabelError as exc:
            exc.args = (f"encoding {name!r}: {exc}",)
            raise
        log.info("%s: weighted F1 %.4f (%.1fs)", name, reports[-1].weighted_f1, time.perf_counter() - t0)

    for report in reports:
        _write(out_dir / f"{_slug(report.name)}.report.json", report.to_json())
    _write(out_dir / "summary.csv", summary_csv(reports))
    if len(reports) > 1:
        doc = {"alpha": alpha, "comparisons": _pairwise(reports, alpha)}
        _write(out_dir / "comparisons.json", json.dumps(doc, indent=1, sort_keys=True))
    sys.stdout.write(summary_csv(reports))


def cmd_compare(args):
    if len(args.reports) < 2:
        raise CliError("compare needs at least two reports")
    reports = []
    for path in args.reports:
        reports.append(CrossValReport.from_json(Path(path).read_text()))
    if len(reports) == 2:
        # positive statistics mean A scored higher than B
        x, y = collect_paired_scores(reports[0], reports[1])
        doc = {"a": reports[0].name, "b": reports[1].name,
               **compare_encodings(x, y, args.alpha).to_dict()}
    else:
        doc = {"alpha": args.alpha, "comparisons": _pairwise(reports, args.alpha)}
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        _write(args.out, text)
    print(text)


def pca_2d(vectors: np.ndarray) -> np.ndarray:
    """Coordinates of mean-centred rows on the top two principal axes.

    Each axis is sign-fixed so its largest-magnitude loading is positive,
    which makes the output deterministic.
    """
    X = np.asarray(vectors, dtype=np.float64)
    centred = X - X.mean(axis=0)
    if not np.any(np.abs(centred) > 1e-12 * max(1.0, float(np.abs(X).max()))):
        raise EncodingError("all rows are identical; nothing to project", code="degenerate_table")
    _, _, vt = np.linalg.svd(centred, full_matrices=False)
    axes = vt[:2]
    for k in range(axes.shape[0]):
        if axes[k, np.argmax(np.abs(axes[k]))] < 0:
            axes[k] = -axes[k]
    coords = centred @ axes.T
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - coords.shape[1]))])
    return coords


def cmd_project2d(args):
    vocab, table = _table_file(args.table)
    if len(vocab) < 2:
        raise EncodingError("need at least 2 labels to project", code="degenerate_table")
    coords = pca_2d(table.vectors)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label", "x", "y"])
    writer.writerows((label, repr(float(x)), repr(float(y))) for label, (x, y) in zip(vocab.labels, coords))
    _write(args.out, buf.getvalue())


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semlabel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic BIM-like dataset")
    p.add_argument("--config", help="SynthConfig JSON file")
    for key, f in SynthConfig.__dataclass_fields__.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=type(f.default))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("embed", help="build a label-embedding table")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="take the vocabulary from a dataset file")
    src.add_argument("--vocab", help="'building' or a JSON labels file")
    p.add_argument("--mode", choices=["onehot", "synth", "fetch"], required=True)
    p.add_argument("--dim", type=int, default=256, help="synth mode: vector length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--within-group-cos", type=float, default=0.8)
    p.add_argument("--endpoint", help="base URL of an OpenAI-compatible embeddings API")
    p.add_argument("--model", help="embedding model name")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--prompt-template", default="{label}",
                   help="text sent per label, e.g. 'BIM object subtype: {label}'")
    p.add_argument("--compact", type=int, help="truncate to D dims and renormalize")
    p.add_argument("--raw-out", help="fetch mode: also keep the uncompacted vectors here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("compact", help="prefix-truncate and renormalize an embedding table")
    p.add_argument("--table", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--table", help="embedding table (default: one-hot)")
    p.add_argument("--loss", choices=[k.value for k in LossKind])
    p.add_argument("--test-project", type=int, help="hold this project out of training")
    p.add_argument("--out", required=True, help="model checkpoint JSON")
    p.add_argument("--history", help="write per-epoch loss CSV here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--table")
    p.add_argument("--project", type=int, help="evaluate only this project's nodes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="leave-one-project-out runs for every encoding in a config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out-dir")
    p.add_argument("--alpha", type=float)
    p.add_argument("--workers", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("compare", help="normality-gated paired test on per-class F1")
    p.add_argument("reports", nargs="+", help="cross-validation report files (A B [C ...])")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser(
        "project2d",
        help="2-D PCA coordinates of a table's rows",
        description="Projects label embeddings onto their top two principal components. "
                    "PCA is used instead of t-SNE so the output is deterministic; the result "
                    "is for illustration only.",
    )
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project2d)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except SemlabelError as exc:
        print(f"semlabel: error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"semlabel: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
