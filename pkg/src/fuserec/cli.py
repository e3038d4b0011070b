"""Command-line entry point.

Commands: synth, prepare, train, eval, ablate. Global flags --config,
--seed, --out, --threads plus per-field overrides. Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical abort.

Output directory layout: catalog/, splits/, checkpoints/, logs/, reports/
(plus synth/ for generated data); every command echoes its fully-resolved
configuration to <out>/config.txt.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import evaluation, seqdata, synth, training
from .catalog import DomainTag, ItemCatalog, load_image_table
from .config import RunConfig, resolve
from .errors import ConfigError, DataError, NumericalError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = type(getattr(RunConfig(), f.name))
        if kind is bool:
            parser.add_argument(flag, dest=f.name, default=None,
                                choices=("true", "false"), help=f"override {f.name}")
        else:
            parser.add_argument(flag, dest=f.name, type=kind, default=None,
                                help=f"override {f.name}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fuserec",
                     description="Cross-domain sequential recommender with image fusion")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("synth", "generate synthetic interactions, image embeddings, ground truth"),
        ("prepare", "filter an interaction log and build catalog + splits"),
        ("train", "train on a prepared dataset"),
        ("eval", "evaluate a checkpoint on a split"),
        ("ablate", "run the three-variant ablation grid"),
    ):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", default=None, help="key=value config file")
        _add_override_flags(p)
    return parser


def _resolved(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        overrides[f.name] = (v == "true") if isinstance(getattr(RunConfig(), f.name), bool) \
            else v
    return resolve(args.config, overrides)


def _explicit(cfg: RunConfig) -> frozenset[str]:
    return getattr(cfg, "explicit_keys", frozenset())


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    for sub in ("catalog", "splits", "checkpoints", "logs", "reports", "synth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    cfg.echo(out / "config.txt")
    return out


def _load_prepared(cfg: RunConfig, out: Path):
    cat_path = out / "catalog" / "catalog.tsv"
    if not cat_path.exists():
        raise DataError(f"no prepared catalog at {cat_path}; run prepare first")
    catalog = ItemCatalog.load(cat_path)
    splits = {}
    for name in ("train", "valid", "test"):
        path = out / "splits" / f"{name}.tsv"
        if not path.exists():
            raise DataError(f"missing split file {path}; run prepare first")
        splits[name] = seqdata.load_sequences(path, catalog)
    return catalog, seqdata.DatasetSplit(**splits)


def _image_table(cfg: RunConfig, catalog: ItemCatalog):
    if not cfg.embeddings:
        raise DataError("no embeddings file configured (--embeddings)")
    path = Path(cfg.embeddings)
    if not path.exists():
        raise DataError(f"embeddings file not found: {path}")
    return load_image_table(path, catalog)


def cmd_synth(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    data = synth.generate(cfg.to_synth_spec())
    inter, emb, truth = synth.write_outputs(data, out / "synth",
                                            text_embeddings=cfg.synth_text)
    print(f"interactions={inter}")
    print(f"embeddings={emb}")
    print(f"truth={truth}")
    return 0


def cmd_prepare(cfg: RunConfig) -> int:
    if not cfg.interactions:
        raise DataError("no interactions file configured (--interactions)")
    path = Path(cfg.interactions)
    if not path.exists():
        raise DataError(f"interactions file not found: {path}")
    out = _outdir(cfg)
    raw_catalog = seqdata.scan_catalog(path)
    interactions = seqdata.ingest(path, raw_catalog)
    sequences = seqdata.filter_protocol(interactions, cfg.min_count, cfg.min_per_domain)
    if not sequences:
        raise DataError("empty dataset after filtering; lower --min-count or "
                        "--min-per-domain")
    kept_keys = {raw_catalog.keys[int(i)] for s in sequences for i in s.items}
    catalog, remap = raw_catalog.subset(kept_keys)
    for s in sequences:
        s.items = np.array([remap[int(i)] for i in s.items], dtype=np.int64)
    split = seqdata.split_train_valid_test(sequences, cfg.seed, cfg.holdout_fraction)
    catalog.save(out / "catalog" / "catalog.tsv")
    for name in ("train", "valid", "test"):
        seqdata.save_sequences(out / "splits" / f"{name}.tsv", getattr(split, name))
    avg_len = sum(len(s) for s in sequences) / len(sequences)
    print(f"items_x={catalog.count(DomainTag.X)} items_y={catalog.count(DomainTag.Y)} "
          f"train={len(split.train)} valid={len(split.valid)} test={len(split.test)} "
          f"avg_len={avg_len:.2f}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    catalog, split = _load_prepared(cfg, out)
    img_table = _image_table(cfg, catalog)
    log_lines: list[str] = []
    t0 = time.monotonic()
    result = training.fit(cfg.to_train_config(), split, catalog, img_table,
                          log_lines=log_lines)
    elapsed = time.monotonic() - t0
    (out / "logs" / "train.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    ckpt.save_checkpoint(out / "checkpoints" / "best.ckpt", result.model,
                         state=result.best_state)
    result.model.restore(result.final_state)
    ckpt.save_checkpoint(out / "checkpoints" / "final.ckpt", result.model)
    if result.clamp_events:
        print(f"warning: clamped {result.clamp_events} zero probabilities",
              file=sys.stderr)
    best = "na" if result.best_valid_mrr is None else f"{result.best_valid_mrr:.4f}"
    print(f"trained epochs={cfg.epochs} best_valid_mrr={best} "
          f"elapsed_s={elapsed:.1f}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    catalog, split = _load_prepared(cfg, out)
    ckpt_path = Path(cfg.checkpoint) if cfg.checkpoint \
        else out / "checkpoints" / "best.ckpt"
    if not ckpt_path.exists():
        raise DataError(f"checkpoint not found: {ckpt_path}")
    img_table = _image_table(cfg, catalog)
    model = ckpt.load_checkpoint(ckpt_path, catalog, img_table)
    explicit = _explicit(cfg)
    if "alpha" in explicit:
        model.alpha = cfg.alpha
    if cfg.split not in ("train", "valid", "test"):
        raise ConfigError(f"unknown split {cfg.split!r}")
    sequences = getattr(split, cfg.split)
    report = evaluation.evaluate(
        model, sequences, cfg.target_domain,
        lambda1=cfg.lambda1 if "lambda1" in explicit else None,
        lambda2=cfg.lambda2 if "lambda2" in explicit else None)
    csv_path = out / "reports" / f"eval_{cfg.split}.csv"
    evaluation.write_eval_csv(csv_path, report, cfg.split)
    print(report.table())
    print(f"report={csv_path}")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    catalog, split = _load_prepared(cfg, out)
    img_table = _image_table(cfg, catalog)
    grid = evaluation.run_ablation(cfg.to_train_config(), split, catalog, img_table,
                                   eval_split=cfg.split)
    csv_path = out / "reports" / "ablation.csv"
    grid.write_csv(csv_path)
    print(grid.table())
    print(f"report={csv_path}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolved(args)
        return COMMANDS[args.command](cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
