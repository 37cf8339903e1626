"""Command-line driver: generate -> train -> evaluate / roc-export / compare -> attribute.

Every subcommand writes ``manifest.json`` into its output directory with the
argv, resolved configuration, seeds and a sha256 of each artifact, so a run
can be repeated with ``argv_from_manifest``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .attribution import AttributionConfig, attribute_dataset, export_beeswarm, export_importance, make_background
from .baselines import ALIASES, DISPLAY_NAMES, KINDS, BaselineConfig, compare, fit, write_comparison
from .datamodel import DAYS_PER_MONTH, LOOKBACK_PRESETS, SplitSpec, build_pairs, load_events, lookback_days, split
from .errors import TouchnetError
from .metrics import evaluate_scores, roc_curve, write_metrics_json, write_roc_csv
from .synthgen import SCENARIOS, generate, scenario_config, write_population
from .trainer import PROFILES, TrainConfig, ensemble_predict, load_ensemble, n_threads, save_ensemble, train_ensemble

logger = logging.getLogger("touchnet")

PROG = "touchnet"
LOOKBACK_CHOICES = tuple(LOOKBACK_PRESETS) + ("full",)


class CliError(TouchnetError):
    """Bad input detected by the CLI itself (missing file, unusable directory)."""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, argv: list[str], command: str, config: dict, seeds: dict, artifacts: list[Path]) -> Path:
    payload = {
        "tool": PROG,
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seeds": seeds,
        "artifacts": {p.name: sha256_file(p) for p in artifacts},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def argv_from_manifest(manifest: str | Path | dict, out: str | Path | None = None) -> list[str]:
    """The recorded argv, optionally pointed at a different output directory."""
    payload = manifest if isinstance(manifest, dict) else json.loads(Path(manifest).read_text())
    argv = list(payload["argv"])
    if out is not None:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = str(out)
        else:
            argv += ["--out", str(out)]
    return argv


# ----------------------------------------------------------------------------
# shared plumbing


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not out.is_dir():
        raise CliError(f"output path {out} is not a directory")
    return out


def _data_files(path: str) -> Path:
    data = Path(path)
    events = data / "events.csv" if data.is_dir() else data
    if not events.exists():
        raise CliError(f"no events.csv at {data}")
    if not events.with_name("purchases.csv").exists():
        raise CliError(f"no purchases.csv next to {events}")
    return data


def _model_file(path: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / "ensemble.json"
    if not p.exists():
        raise CliError(f"no ensemble.json at {path}")
    return p


def _horizon(data: Path, records, override: int | None) -> int:
    if override is not None:
        return int(override)
    gt = (data if data.is_dir() else data.parent) / "groundtruth.json"
    if gt.exists():
        return int(json.loads(gt.read_text())["horizon_days"])
    last = max((int(r.days[-1]) for r in records if len(r)), default=-1)
    last = max([last] + [r.purchase_day for r in records if r.purchase_day is not None])
    return max(last + 1, 1)


def _prepare(data_arg: str, lookback: str, seed: int, horizon_override: int | None = None):
    """Load events, aggregate one lookback, split. Returns ``(splits, provenance)``."""
    data = _data_files(data_arg)
    records = load_events(data)
    if not records:
        raise CliError("no users in the event data")
    horizon = _horizon(data, records, horizon_override)
    T = lookback_days(lookback, horizon)
    dataset = build_pairs(records, T, seed=seed, horizon_days=horizon)
    if len(dataset) == 0:
        raise CliError(f"no user has a touchpoint inside a {T}-day lookback")
    splits = split(dataset, SplitSpec(seed=seed))
    provenance = {
        "lookback": lookback,
        "lookback_days": T,
        "horizon_days": horizon,
        "window_seed": seed,
        "split_seed": seed,
        "n_users": len(records),
        "n_pairs": len(dataset),
        "n_train": len(splits[0]),
        "n_val": len(splits[1]),
        "n_test": len(splits[2]),
    }
    return splits, provenance


def _prepare_for_model(args, payload: dict):
    """Rebuild the split the model was trained on unless flags override it."""
    prov = payload.get("data", {})
    lookback = args.lookback or prov.get("lookback", "full")
    seed = args.seed if args.seed is not None else int(prov.get("split_seed", 0))
    horizon = args.horizon_days if args.horizon_days is not None else prov.get("horizon_days")
    return _prepare(args.data, lookback, seed, horizon)


def _split_named(splits, name: str):
    return dict(zip(("train", "val", "test"), splits))[name]


# ----------------------------------------------------------------------------
# subcommands


def cmd_generate(args, argv) -> int:
    out = _out_dir(args.out)
    horizon = round(args.months * DAYS_PER_MONTH)
    cfg = scenario_config(args.scenario, n_users=args.users, horizon_days=horizon, seed=args.seed)
    records, truth = generate(cfg)
    paths = write_population(records, truth, cfg, out)
    logger.info("wrote %d users (buyer rate %.4f) to %s", len(records), truth.realized_rate, out)
    write_manifest(
        out, argv, "generate",
        {"scenario": args.scenario, "months": args.months, "generator": cfg.to_json()},
        {"generator": args.seed}, paths,
    )
    return 0


def cmd_train(args, argv) -> int:
    out = _out_dir(args.out)
    seed = 0 if args.seed is None else args.seed
    (train, val, test), prov = _prepare(args.data, args.lookback or "full", seed, args.horizon_days)
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.members is not None:
        overrides["K"] = args.members
    config = TrainConfig.profile(args.profile, seed=seed, **overrides)
    ensemble = train_ensemble(train, val, config, threads=n_threads())
    extra = {"data": prov, "profile": args.profile}
    model_path = save_ensemble(ensemble, out / "ensemble.json", extra=extra)
    ev = evaluate_scores(ensemble_predict(ensemble, test.X), test.y, ensemble.threshold)
    metrics_path = write_metrics_json(ev, out / "metrics.json", {"split": "test", "n": len(test)})
    logger.info("test AUROC %.4f, balanced accuracy %.4f", ev.auroc, ev.balanced_accuracy)
    write_manifest(
        out, argv, "train",
        {"profile": args.profile, "train": config.to_json(), "data": prov},
        {"split": seed, "window": seed, "members": list(config.seeds[: config.K])},
        [model_path, metrics_path],
    )
    return 0


def cmd_evaluate(args, argv, write_roc: bool = False) -> int:
    out = _out_dir(args.out)
    model_path = _model_file(args.model)
    ensemble, payload = load_ensemble(model_path)
    splits, prov = _prepare_for_model(args, payload)
    part = _split_named(splits, args.split)
    scores = ensemble_predict(ensemble, part.X)
    ev = evaluate_scores(scores, part.y, ensemble.threshold)
    artifacts = [write_metrics_json(ev, out / "metrics.json", {"split": args.split, "n": len(part)})]
    if write_roc:
        artifacts.insert(0, write_roc_csv(roc_curve(scores, part.y), out / "roc.csv"))
    write_manifest(
        out, argv, "roc-export" if write_roc else "evaluate",
        {"model": str(model_path), "model_sha256": sha256_file(model_path), "split": args.split, "data": prov},
        {"split": prov["split_seed"], "window": prov["window_seed"]},
        artifacts,
    )
    return 0


def cmd_compare(args, argv) -> int:
    out = _out_dir(args.out)
    model_path = _model_file(args.model)
    ensemble, payload = load_ensemble(model_path)
    (train, val, test), prov = _prepare_for_model(args, payload)
    kinds = []
    for name in (s.strip() for s in args.baselines.split(",") if s.strip()):
        kind = ALIASES.get(name, name)
        if kind not in KINDS:
            raise CliError(f"unknown baseline {name!r}; choose from logistic, nb, knn")
        if kind not in kinds:
            kinds.append(kind)
    bcfg = BaselineConfig(k=args.k)
    models = {kind: fit(kind, train, bcfg) for kind in kinds}
    table = compare(models, ensemble, val, test)
    table["model"] = [DISPLAY_NAMES.get(m, m) for m in table["model"]]
    path = write_comparison(table, out / "comparison.csv")
    write_manifest(
        out, argv, "compare",
        {"model": str(model_path), "model_sha256": sha256_file(model_path), "baselines": kinds,
         "baseline_config": vars(bcfg), "data": prov},
        {"split": prov["split_seed"], "window": prov["window_seed"]},
        [path],
    )
    return 0


def cmd_attribute(args, argv) -> int:
    out = _out_dir(args.out)
    model_path = _model_file(args.model)
    ensemble, payload = load_ensemble(model_path)
    splits, prov = _prepare_for_model(args, payload)
    train, target = splits[0], _split_named(splits, args.split)
    seed = int(prov["split_seed"]) if args.seed is None else args.seed
    cfg = AttributionConfig(
        n_perm=args.n_perm,
        background_size=args.background,
        seed=seed,
        max_users=args.max_users,
    )
    background = make_background(train, cfg.background_size, seed)
    matrix = attribute_dataset(ensemble, target, background, cfg, threads=n_threads())
    paths = [
        export_beeswarm(matrix, target, out / "beeswarm.csv"),
        export_importance(matrix, out / "importance.csv"),
    ]
    write_manifest(
        out, argv, "attribute",
        {"model": str(model_path), "model_sha256": sha256_file(model_path), "split": args.split,
         "attribution": vars(cfg), "base_value": matrix.base_value, "data": prov},
        {"attribution": seed, "background": seed},
        paths,
    )
    return 0


# ----------------------------------------------------------------------------
# parser


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Touchpoint purchase prediction pipeline.")
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def data_opts(p, model: bool):
        p.add_argument("--data", required=True, help="directory with events.csv and purchases.csv")
        if model:
            p.add_argument("--model", required=True, help="ensemble.json or the directory holding it")
        p.add_argument("--lookback", choices=LOOKBACK_CHOICES, default=None,
                       help="lookback window (default: full, or the model's own)")
        p.add_argument("--horizon-days", type=_positive, default=None,
                       help="observation horizon (default: from groundtruth.json or the data)")
        p.add_argument("--seed", type=int, default=None, help="window/split seed")
        p.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("generate", help="draw a synthetic population")
    g.add_argument("--users", type=_positive, default=20556)
    g.add_argument("--months", type=_positive_float, default=40.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenario", choices=SCENARIOS, default="default")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the network ensemble")
    data_opts(t, model=False)
    t.add_argument("--profile", choices=tuple(PROFILES), default="desk")
    t.add_argument("--epochs", type=_positive, default=None, help="override the profile's epoch count")
    t.add_argument("--members", type=_positive, default=None, help="override the profile's ensemble size")

    for name, helptext in (("evaluate", "metrics.json on a split"), ("roc-export", "roc.csv and metrics.json")):
        e = sub.add_parser(name, help=helptext)
        data_opts(e, model=True)
        e.add_argument("--split", choices=("train", "val", "test"), default="test")

    c = sub.add_parser("compare", help="ensemble vs baseline classifiers")
    data_opts(c, model=True)
    c.add_argument("--baselines", default="logistic,nb,knn", help="comma-separated: logistic, nb, knn")
    c.add_argument("--k", type=_positive, default=5, help="neighbours for knn")

    a = sub.add_parser("attribute", help="Shapley values per touchpoint type")
    data_opts(a, model=True)
    a.add_argument("--split", choices=("train", "val", "test"), default="test")
    a.add_argument("--n-perm", type=_positive, default=200)
    a.add_argument("--background", type=_positive, default=512)
    a.add_argument("--max-users", type=_positive, default=None)
    return parser


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "roc-export": lambda args, argv: cmd_evaluate(args, argv, write_roc=True),
    "compare": cmd_compare,
    "attribute": cmd_attribute,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (TouchnetError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"{PROG} {args.command}: error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
