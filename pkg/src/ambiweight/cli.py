"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 configuration, 3 data, 4 numerical.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ConfigError, RunConfig, read_config_file, resolve
from .data import Dataset, ManifestError, PGMError, generate, load_manifest, save_manifest, split
from .evaluation.metrics import evaluate_heads
from .evaluation.plots import head_names_from_rows, write_family_charts
from .evaluation.sweep import SweepConfig, mu_sweep, read_report_csv
from .evaluation.training import NumericalError, train
from .labelcore import ContradictionError, FindingVocabulary, MentionState, VocabularyError
from .models import build_model, predict_proba
from .tensor.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .weighting import ModifierConfig, head_class_weights

log = logging.getLogger("ambiweight")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which we reserve for config errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level = os.environ.get("AMBIWEIGHT_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _print_effective(provenance) -> None:
    print("effective settings (flag > config > default):", file=sys.stderr)
    for key, value, source in provenance:
        print(f"  {key} = {value!r}  [{source}]", file=sys.stderr)


def _load_run_config(args, flags: dict) -> RunConfig:
    cfg, provenance = resolve(read_config_file(getattr(args, "config", None)), flags)
    _print_effective(provenance)
    return cfg


def _with_heads(model_cfg, n_heads: int):
    """Fill head_count from the data unless the config pinned it."""
    if "head_count" in model_cfg.model_fields_set:
        if model_cfg.head_count != n_heads:
            raise ConfigError(f"model.head_count is {model_cfg.head_count} but the data has {n_heads} heads")
        return model_cfg
    return model_cfg.model_copy(update={"head_count": n_heads})


def _load_dataset(path: str, strict: bool) -> Dataset:
    ds = load_manifest(path, strict=strict)
    if len(ds) == 0:
        raise DataError(f"{path}: manifest holds no usable samples")
    return ds


# --- synth --------------------------------------------------------------------


def write_truth_csv(ds: Dataset, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id"] + [f"{n}_present" for n in ds.vocab.names])
        for sid, row in zip(ds.sample_ids, ds.truth):
            w.writerow([sid] + [int(v) for v in row])


def audit_rows(ds: Dataset) -> list[dict]:
    rows = []
    states = ds.labels.states()
    for k, name in enumerate(ds.vocab.names):
        col = [r[k] for r in states]
        n = max(len(col), 1)
        rows.append(
            {
                "finding": name,
                "prevalence": float(ds.truth[:, k].mean()) if ds.truth is not None and len(col) else float("nan"),
                "affirmed": col.count(MentionState.AFFIRMED) / n,
                "negated": col.count(MentionState.NEGATED) / n,
                "nomention": col.count(MentionState.NOMENTION) / n,
            }
        )
    return rows


def cmd_synth(args) -> int:
    cfg = _load_run_config(args, {"seed": args.seed, "synth.n_samples": args.n_samples})
    if cfg.synth is None:
        raise ConfigError("synth: section required for the synth command")
    synth = cfg.synth.model_copy(update={"seed": cfg.seed})
    ds = generate(synth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(ds, out / "manifest.csv")
    write_truth_csv(ds, out / "truth.csv")
    rows = audit_rows(ds)
    with (out / "audit.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"{'finding':<20}{'prevalence':>11}{'affirmed':>10}{'negated':>10}{'nomention':>11}")
    for r in rows:
        print(f"{r['finding']:<20}{r['prevalence']:>11.3f}{r['affirmed']:>10.3f}{r['negated']:>10.3f}{r['nomention']:>11.3f}")
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


# --- label --------------------------------------------------------------------


def read_reports_jsonl(path: str):
    from .textlabeler import Report

    reports, image_paths = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict) or "report_id" not in obj or "body" not in obj:
                raise DataError(f"{path}:{lineno}: expected an object with report_id and body")
            try:
                reports.append(Report(str(obj["report_id"]), obj["body"]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            image_paths.append(str(obj.get("image_path", "")))
    return reports, image_paths


def cmd_label(args) -> int:
    from .textlabeler import DEFAULT_RULES, NegationRuleSet, default_vocabulary, label_report

    vocab = FindingVocabulary.load(args.vocab) if args.vocab else default_vocabulary()
    rules = DEFAULT_RULES
    if args.triggers or args.max_scope is not None:
        kwargs = {"max_scope_tokens": args.max_scope} if args.max_scope is not None else {}
        if args.triggers:
            rules = NegationRuleSet.load(args.triggers, **kwargs)
        else:
            rules = NegationRuleSet(DEFAULT_RULES.pre_triggers, DEFAULT_RULES.scope_terminators, **kwargs)
    reports, image_paths = read_reports_jsonl(args.reports)
    if not reports:
        log.warning("%s: no reports found, writing an empty manifest", args.reports)
    header = ["sample_id", "image_path"] + [f"{n}_state" for n in vocab.names]
    counts = np.zeros((len(vocab), 3), dtype=int)
    order = [MentionState.AFFIRMED, MentionState.NEGATED, MentionState.NOMENTION]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for rep, img in zip(reports, image_paths):
            states = label_report(rep, vocab, rules)
            for k, s in enumerate(states):
                counts[k, order.index(s)] += 1
            w.writerow([rep.report_id, img] + [s.value for s in states])
    print(f"{'finding':<20}{'affirmed':>10}{'negated':>10}{'nomention':>11}")
    for name, (a, n, m) in zip(vocab.names, counts):
        print(f"{name:<20}{a:>10}{n:>10}{m:>11}")
    print(f"labelled {len(reports)} reports into {args.out}")
    return EXIT_OK


# --- train / eval -----------------------------------------------------------------


def _train_flags(args) -> dict:
    return {
        "seed": args.seed,
        "train.epochs": args.epochs,
        "train.lr": args.lr,
        "train.batch_size": args.batch_size,
        "modifier.mu": args.mu,
        "modifier.enabled": False if args.baseline else None,
    }


def cmd_train(args) -> int:
    cfg = _load_run_config(args, _train_flags(args))
    ds = _load_dataset(args.manifest, cfg.strict_ingestion)
    train_set, val_set, test_set = split(ds, cfg.split_fractions, cfg.split_seed)
    model_cfg = _with_heads(cfg.model, ds.labels.targets.shape[1])
    model = build_model(model_cfg, seed=cfg.seed)
    weights = head_class_weights(train_set.labels) if cfg.weighting == "class" else None
    modifier = (
        ModifierConfig(mu=cfg.modifier.mu, sigma=cfg.modifier.sigma, seed=cfg.seed) if cfg.modifier.enabled else None
    )
    res = train(model, train_set, val_set, weights, modifier, cfg.train, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model.state_dict(), out / "model.ckpt")
    (out / "model.json").write_text(model_cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    (out / "run_config.json").write_text(cfg.model_dump_json(indent=2) + "\n", encoding="utf-8")
    res.write_log(out / "train_log.csv")
    if len(test_set):
        save_manifest(test_set, out / "test" / "manifest.csv")
    print(f"best epoch {res.best_epoch}; checkpoint {out / 'model.ckpt'}")
    return EXIT_OK


def load_trained(checkpoint: str, model_config: str | None):
    from pydantic import TypeAdapter, ValidationError

    from .config import format_validation_error
    from .models import CustomNetConfig, SimpleCNNConfig

    cfg_path = Path(model_config) if model_config else Path(checkpoint).with_name("model.json")
    try:
        doc = json.loads(cfg_path.read_text(encoding="utf-8"))
        mcfg = TypeAdapter(CustomNetConfig | SimpleCNNConfig).validate_python(doc)
    except OSError as exc:
        raise ConfigError(f"cannot read model config {cfg_path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{cfg_path}: invalid JSON: {exc.msg}") from None
    except ValidationError as exc:
        raise ConfigError(format_validation_error(exc)) from None
    model = build_model(mcfg, seed=0)
    model.load_state_dict(load_checkpoint(checkpoint))
    return model.eval()


def eval_table(model, ds: Dataset) -> list[tuple[str, float | None, int, int]]:
    results = evaluate_heads(predict_proba(model, ds.images), ds.labels)
    return [
        (name, None if r is None else r.auc, 0 if r is None else r.n_pos, 0 if r is None else r.n_neg)
        for name, r in zip(ds.vocab.head_names(), results)
    ]


def cmd_eval(args) -> int:
    model = load_trained(args.checkpoint, args.model_config)
    ds = _load_dataset(args.manifest, strict=not args.lenient)
    if model.cfg.head_count != ds.vocab.n_heads:
        raise DataError(f"checkpoint has {model.cfg.head_count} heads, manifest has {ds.vocab.n_heads}")
    table = eval_table(model, ds)
    print(f"{'head':<28}{'auc':>10}{'n_pos':>8}{'n_neg':>8}")
    for name, auc, n_pos, n_neg in table:
        print(f"{name:<28}{'undefined' if auc is None else f'{auc:.4f}':>10}{n_pos:>8}{n_neg:>8}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["head", "auc", "n_pos", "n_neg"])
            for name, auc, n_pos, n_neg in table:
                w.writerow([name, "" if auc is None else repr(auc), n_pos, n_neg])
    return EXIT_OK


# --- sweep / report -------------------------------------------------------------


def cmd_sweep(args) -> int:
    flags = {
        "seed": args.seed,
        "jobs": args.jobs,
        "sweep.n_seeds": args.seeds,
        "sweep.grid": args.grid,
        "train.epochs": args.epochs,
    }
    cfg = _load_run_config(args, flags)
    if args.manifest:
        dataset = _load_dataset(args.manifest, cfg.strict_ingestion)
    elif cfg.synth is not None:
        dataset = generate(cfg.synth)
    else:
        raise ConfigError("sweep needs either --manifest or a synth: section in the config")
    if cfg.weighting != "class":
        raise ConfigError("weighting: the sweep always compares class-weighted arms; set include_unweighted instead")
    model_cfg = _with_heads(cfg.model, dataset.labels.targets.shape[1])
    synth = cfg.synth if cfg.synth is not None else _placeholder_synth(dataset)
    scfg = SweepConfig(
        synth=synth,
        model=model_cfg,
        train=cfg.train,
        split_fractions=cfg.split_fractions,
        split_seed=cfg.split_seed,
        sigma=cfg.modifier.sigma,
        include_unweighted=cfg.sweep.include_unweighted,
    )
    seeds = [cfg.seed + i for i in range(cfg.sweep.n_seeds)]
    report = mu_sweep(cfg.sweep.grid, seeds, scfg, jobs=cfg.jobs, dataset=dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "sweep.csv")
    write_family_charts(report.rows(), report.head_names, out)
    for arm, err in report.failures:
        print(f"arm {arm.label} seed {arm.seed} FAILED: {err}", file=sys.stderr)
    summ = report.summary()
    labels = list(dict.fromkeys(r.arm.label for r in report.results))
    print(f"{'arm':<12}" + "".join(f"{h:>24}" for h in report.head_names))
    for label in labels:
        cells = []
        for h in report.head_names:
            m = summ.get((label, h))
            cells.append(f"{'n/a':>24}" if m is None else f"{m[0]:>15.4f} +/- {m[1]:.3f}")
        print(f"{label:<12}" + "".join(cells))
    print(f"optimal mu: {report.optimal_mu()}")
    if report.failures and len(report.failures) == len(report.results):
        return EXIT_NUMERIC
    return EXIT_OK


def _placeholder_synth(ds: Dataset):
    """Sweeps over a manifest never generate data; the sweep config still wants a synth section."""
    from .data import FindingSpec, ReportPolicy, SynthConfig

    names = ds.vocab.names
    return SynthConfig(
        n_samples=0,
        findings=[FindingSpec(name=n, shape="blob", prevalence=0.0) for n in names],
        report_policy=[ReportPolicy(p_affirm_given_present=1.0, p_negate_given_absent=1.0)] * len(names),
    )


def cmd_report(args) -> int:
    try:
        rows = read_report_csv(args.csv)
    except (ValueError, IndexError) as exc:
        raise DataError(str(exc)) from None
    paths = write_family_charts(rows, head_names_from_rows(rows), args.out)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .tensor.gradcheck import run_suite

    results = run_suite(seed=args.seed or 0)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<36} rel_err={r.rel_error:.3e}  tol={r.tol:.0e}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# --- entry --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ambiweight", description="Ambiguity-aware weighting for paired multi-label heads.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--n-samples", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("label", help="label JSONL reports into a manifest")
    s.add_argument("--reports", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--vocab")
    s.add_argument("--triggers")
    s.add_argument("--max-scope", type=int)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("train", help="train one model on a manifest")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--mu", type=float)
    g.add_argument("--baseline", action="store_true", help="train without ambiguity modifiers")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-head AUC of a checkpoint on a manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--model-config")
    s.add_argument("--out")
    s.add_argument("--lenient", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="grid sweep over the modifier mean")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--manifest")
    s.add_argument("--seeds", type=int, help="number of seeds (seed, seed+1, ...)")
    s.add_argument("--grid", type=float, nargs="+")
    s.add_argument("--epochs", type=int)
    s.add_argument("--jobs", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", help="render sweep CSV as SVG charts")
    s.add_argument("--csv", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ManifestError, PGMError, ContradictionError, VocabularyError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
