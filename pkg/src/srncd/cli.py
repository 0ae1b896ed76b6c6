"""Command-line pipeline: synth, train, eval, diagnose, histogram, check-grad.

Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""

import os

# bitwise reproducibility needs a single BLAS thread; set before numpy loads
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import csv  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import yaml  # noqa: E402

from .dataset import DataError, dataset_stats, load_dataset, log_arrays, split_dataset  # noqa: E402
from .diagnet import ConfigError, DiagNet, ModelSpec, Variant  # noqa: E402
from .metrics import DEFAULT_SAMPLE_CAP, EvalReport, accuracy, auc, doa, histogram  # noqa: E402
from .numerics import finite_diff_check  # noqa: E402
from .synthcohort import SynthConfig, SynthConfigError, config_dict, generate, write_cohort  # noqa: E402
from .training import (  # noqa: E402
    CheckpointError, TrainConfig, TrainingError, bce_loss, batch_loss_and_grad,
    check_compatible, load_checkpoint, save_checkpoint, train,
)

logger = logging.getLogger("srncd")

USER_ERRORS = (DataError, ConfigError, CheckpointError, SynthConfigError, FileNotFoundError)


class UsageError(Exception):
    pass


TRAIN_DEFAULTS = {
    "responses": None,
    "q_matrix": None,
    "hierarchy": None,
    "out_dir": "runs/train",
    "variant": "SR_NCD",
    "epochs": 50,
    "batch_size": 256,
    "lr": 2e-3,
    "seed": 0,
    "hidden_dims": [512, 256],
    "d_override": None,
    "eq6_sign": "h_minus_beta",
    "early_stop_patience": 5,
    "dropout": 0.0,
    "split_ratios": [0.7, 0.1, 0.2],
    "split_seed": 0,
    "sample_cap": DEFAULT_SAMPLE_CAP,
}

SYNTH_DEFAULTS = {"out_dir": "runs/synth", **config_dict(SynthConfig())}


def _read_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a flat key/value mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve(defaults: dict, args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags. Unknown config keys are rejected."""
    cfg = dict(defaults)
    from_file = _read_config(getattr(args, "config", None))
    unknown = sorted(set(from_file) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    cfg.update(from_file)
    for key in defaults:
        if key in vars(args):
            cfg[key] = getattr(args, key)
    base = Path(args.config).parent if getattr(args, "config", None) else None
    for key in ("responses", "q_matrix", "hierarchy"):
        if base is not None and key in from_file and from_file[key] and key not in vars(args):
            p = Path(from_file[key])
            cfg[key] = str(p if p.is_absolute() else base / p)
    return cfg


def write_echo(out_dir: Path, cfg: dict, command: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_echo.yaml"
    body = {"command": command, **cfg}
    path.write_text(yaml.safe_dump(body, sort_keys=True), encoding="utf-8")
    return path


def _list(conv):
    def parse(text):
        text = text.strip()
        return [] if text in ("", "none") else [conv(t) for t in text.split(",")]
    return parse


def _optional_int(text):
    return None if text.lower() in ("none", "") else int(text)


def _load_data(cfg: dict):
    if not cfg.get("responses") or not cfg.get("q_matrix"):
        raise UsageError("responses and q_matrix paths are required")
    return load_dataset(cfg["responses"], cfg["q_matrix"], cfg.get("hierarchy"))


def _train_config(cfg: dict) -> TrainConfig:
    try:
        variant = Variant(cfg["variant"])
    except ValueError:
        raise UsageError(f"unknown variant {cfg['variant']!r}; choose from "
                         f"{', '.join(v.value for v in Variant)}") from None
    return TrainConfig(
        variant=variant, epochs=int(cfg["epochs"]), batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]), seed=int(cfg["seed"]), hidden_dims=tuple(cfg["hidden_dims"] or ()),
        d_override=cfg["d_override"], eq6_sign=cfg["eq6_sign"],
        early_stop_patience=int(cfg["early_stop_patience"]), dropout=float(cfg["dropout"]),
    )


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = resolve(TRAIN_DEFAULTS, args)
    tcfg = _train_config(cfg)
    if tcfg.variant.needs_hierarchy and not cfg.get("hierarchy"):
        raise UsageError(f"variant {tcfg.variant.value} requires a concept hierarchy; pass --hierarchy")
    dataset = _load_data(cfg)
    split = split_dataset(dataset.logs, tuple(cfg["split_ratios"]), int(cfg["split_seed"]))
    out = Path(cfg["out_dir"])
    write_echo(out, cfg, "train")
    result = train(dataset, split, tcfg)
    save_checkpoint(result.model, dataset, out / "model.srncd", config=cfg)
    with open(out / "train_log.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "valid_acc", "valid_auc"])
        for rec in result.log:
            w.writerow([rec.epoch, repr(rec.train_loss),
                        "" if rec.valid_acc is None else repr(rec.valid_acc),
                        "" if rec.valid_auc is None else repr(rec.valid_auc)])
    print(f"trained {tcfg.variant.value}: {len(result.log)} epochs, best epoch {result.best_epoch}; "
          f"wrote {out / 'model.srncd'}")
    return 0


def evaluate(ckpt, dataset, logs, train_logs=(), sample_cap=DEFAULT_SAMPLE_CAP, seed=0) -> EvalReport:
    model = ckpt.model
    s, e, y = log_arrays(logs)
    if len(y) == 0:
        raise UsageError("evaluation split is empty")
    y_hat = model.predict(s, e)
    seen = {log.exercise_index for log in train_logs}
    cold = len(set(e.tolist()) - seen) if train_logs else 0
    mean_doa, per = doa(model.student_proficiency(), (s, e, y), dataset.q.dense(),
                        sample_cap=sample_cap, seed=seed)
    return EvalReport(
        acc=accuracy(y, y_hat), auc=auc(y, y_hat), doa=mean_doa, per_concept_doa=per,
        test_loss=float(bce_loss(y, y_hat).mean()), cold_exercise_count=cold, n_logs=int(len(y)),
    )


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    saved = {k: v for k, v in ckpt.config.items() if k in TRAIN_DEFAULTS}
    cfg = {**TRAIN_DEFAULTS, **saved}
    for key in ("responses", "q_matrix", "hierarchy", "split_seed", "sample_cap"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    dataset = _load_data(cfg)
    check_compatible(ckpt, dataset)
    split = split_dataset(dataset.logs, tuple(cfg["split_ratios"]), int(cfg["split_seed"]))
    logs = {"test": split.test, "valid": split.valid, "train": split.train, "all": dataset.logs}[args.split]
    report = evaluate(ckpt, dataset, logs, split.train if args.split != "train" else (),
                      sample_cap=cfg["sample_cap"], seed=int(cfg["split_seed"]))
    out = Path(args.out_dir)
    write_echo(out, {**cfg, "checkpoint": str(args.checkpoint), "split": args.split}, "eval")
    report.write(out, dataset.concept_ids)
    for k, v in report.flat().items():
        print(f"{k}={'undefined' if v is None else v}")
    return 0


def cmd_diagnose(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ids = ckpt.student_ids
    index = {sid: i for i, sid in enumerate(ids)}
    wanted = args.students if args.students else ids
    missing = [sid for sid in wanted if sid not in index]
    if missing:
        raise UsageError("unknown student: " + ", ".join(missing))
    rows = np.asarray([index[sid] for sid in wanted], dtype=np.int64)
    h = ckpt.model.student_proficiency(rows)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["student_id", "concept_id", "proficiency"])
        for r, sid in enumerate(wanted):
            for k, cid in enumerate(ckpt.concept_ids):
                w.writerow([sid, cid, repr(float(h[r, k]))])
    print(f"wrote {len(wanted) * len(ckpt.concept_ids)} rows to {out}")
    return 0


def cmd_histogram(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    hist = histogram(ckpt.model.student_proficiency())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hist.to_csv(out)
    for lo, hi, c in hist.rows():
        print(f"[{lo:.1f}, {hi:.1f}) {c}")
    return 0


def cmd_synth(args) -> int:
    cfg = resolve(SYNTH_DEFAULTS, args)
    keys = set(SYNTH_DEFAULTS) - {"out_dir"}
    try:
        scfg = SynthConfig(**{k: cfg[k] for k in keys})
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    dataset, gt = generate(scfg)
    out = Path(cfg["out_dir"])
    write_cohort(dataset, gt, out)
    write_echo(out, cfg, "synth")
    st = dataset_stats(dataset).as_row()
    print(", ".join(f"{k}={v}" for k, v in st.items()))
    return 0


def grad_check(variants, seeds, n_coords=50, h=1e-3, responses=None, q_matrix=None, hierarchy=None,
               hidden_dims=(16, 8)):
    """Max relative finite-difference error per (variant, seed, parameter group)."""
    if responses:
        dataset = load_dataset(responses, q_matrix, hierarchy)
    else:
        dataset, _ = generate(SynthConfig(n_students=12, n_exercises=15, n_concepts=8, n_parents=3,
                                          logs_per_student=(5, 10), seed=1))
    s, e, y = log_arrays(dataset.logs[:64])
    support = dataset.hierarchy.support() if dataset.hierarchy is not None else None
    results = {}
    for variant in variants:
        variant = Variant(variant)
        if variant.needs_hierarchy and dataset.hierarchy is None:
            raise UsageError(f"variant {variant.value} requires a concept hierarchy")
        for seed in seeds:
            spec = ModelSpec(variant, dataset.N, dataset.M, dataset.K, dataset.L, hidden_dims=hidden_dims)
            model = DiagNet(spec, dataset.q.dense(), support, seed=seed, dtype=np.float64)
            batch_loss_and_grad(model, s, e, y)
            grads = {k: p.grad.copy() for k, p in model.params.items()}

            def loss_fn(model=model):
                return float(bce_loss(y, model.predict(s, e)).mean())

            results[(variant.value, seed)] = finite_diff_check(loss_fn, model.params, grads, h=h,
                                                               n_coords=n_coords, seed=seed)
    return results


def cmd_check_grad(args) -> int:
    cfg = _read_config(args.config) if args.config else {}
    variants = args.variant or [v.value for v in Variant]
    results = grad_check(variants, args.seeds, args.coords, args.h, cfg.get("responses"),
                         cfg.get("q_matrix"), cfg.get("hierarchy"))
    worst = 0.0
    for (variant, seed), errs in results.items():
        top = max(errs.values())
        worst = max(worst, top)
        print(f"{variant:16s} seed {seed}: max rel err {top:.3e} "
              + " ".join(f"{k}={v:.1e}" for k, v in errs.items()))
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} (tolerance {args.tol:g})")
    return 0 if ok else 1


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srncd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    t = sub.add_parser("train", help="fit a model and write model.srncd + train_log.csv")
    t.add_argument("--config")
    t.add_argument("--responses", default=S)
    t.add_argument("--q-matrix", dest="q_matrix", default=S)
    t.add_argument("--hierarchy", default=S)
    t.add_argument("--out-dir", dest="out_dir", default=S)
    t.add_argument("--variant", default=S)
    t.add_argument("--epochs", type=int, default=S)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    t.add_argument("--lr", type=float, default=S)
    t.add_argument("--seed", type=int, default=S)
    t.add_argument("--hidden-dims", dest="hidden_dims", type=_list(int), default=S)
    t.add_argument("--d-override", dest="d_override", type=_optional_int, default=S)
    t.add_argument("--eq6-sign", dest="eq6_sign", choices=["h_minus_beta", "beta_minus_h"], default=S)
    t.add_argument("--early-stop-patience", dest="early_stop_patience", type=int, default=S)
    t.add_argument("--dropout", type=float, default=S)
    t.add_argument("--split-ratios", dest="split_ratios", type=_list(float), default=S)
    t.add_argument("--split-seed", dest="split_seed", type=int, default=S)
    t.add_argument("--sample-cap", dest="sample_cap", type=_optional_int, default=S)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="ACC/AUC/DOA report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--responses")
    e.add_argument("--q-matrix", dest="q_matrix")
    e.add_argument("--hierarchy")
    e.add_argument("--split-seed", dest="split_seed", type=int)
    e.add_argument("--split", choices=["test", "valid", "train", "all"], default="test")
    e.add_argument("--sample-cap", dest="sample_cap", type=_optional_int)
    e.add_argument("--out-dir", dest="out_dir", default="runs/eval")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diagnose", help="per-student concept proficiencies as CSV")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--students", type=_list(str), default=None, help="comma-separated ids (default: all)")
    d.add_argument("--out", default="runs/diagnosis.csv")
    d.set_defaults(func=cmd_diagnose)

    h = sub.add_parser("histogram", help="10-bin proficiency histogram CSV")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--out", default="runs/histogram.csv")
    h.set_defaults(func=cmd_histogram)

    y = sub.add_parser("synth", help="generate a synthetic cohort with ground truth")
    y.add_argument("--config")
    y.add_argument("--out-dir", dest="out_dir", default=S)
    y.add_argument("--n-students", dest="n_students", type=int, default=S)
    y.add_argument("--n-exercises", dest="n_exercises", type=int, default=S)
    y.add_argument("--n-concepts", dest="n_concepts", type=int, default=S)
    y.add_argument("--n-parents", dest="n_parents", type=int, default=S)
    y.add_argument("--concepts-per-exercise", dest="concepts_per_exercise", type=_list(int), default=S)
    y.add_argument("--logs-per-student", dest="logs_per_student", type=_list(int), default=S)
    y.add_argument("--noise-sd", dest="noise_sd", type=float, default=S)
    y.add_argument("--seed", type=int, default=S)
    y.set_defaults(func=cmd_synth)

    g = sub.add_parser("check-grad", help="finite-difference check of analytic gradients")
    g.add_argument("--config", help="optional config naming responses/q_matrix/hierarchy")
    g.add_argument("--variant", action="append", choices=[v.value for v in Variant])
    g.add_argument("--seeds", type=_list(int), default=[0, 1, 2])
    g.add_argument("--coords", type=int, default=50)
    g.add_argument("--h", type=float, default=1e-3)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_check_grad)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - last-resort guard
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
