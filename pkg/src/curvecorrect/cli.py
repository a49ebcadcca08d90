"""Command-line entry point: simulate, fit, flag, replay.

Every file-writing command writes into ``--out`` (a directory) and leaves a
``manifest.json`` there; ``curvecorrect replay`` reruns it bit-exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import secrets
import sys
import time
from importlib import metadata
from pathlib import Path

from . import data_io
from .errors import InsufficientDataError, InvalidArgumentError, NotFoundError, ParseError
from .fitter import FitConfig, exceedances, fit
from .observation_sim import (
    PRESETS,
    ThresholdProfile,
    default_profile,
    linear_grid,
    log_grid,
    preset,
    run_experiment1,
)
from .pipeline_sim import (
    DEFAULT_G0,
    DEFAULT_G1,
    DEFAULT_K,
    estimate_true_curve,
    run_experiment2,
)
from .stats_core import CurveParams

log = logging.getLogger("curvecorrect")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INSUFFICIENT = 2
SEED_ENV = "CURVECORRECT_SEED"
CLI_BOOTSTRAP_DEFAULT = 500


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class CliInputError(Exception):
    """Bad input file or value; maps to exit code 1."""


def parse_n_grid(spec: str) -> list[int]:
    parts = [p.strip() for p in spec.split(",")]
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] not in ("log", "linear")):
        raise argparse.ArgumentTypeError("n-grid must be min,max,points[,log|linear]")
    try:
        lo, hi, pts = float(parts[0]), float(parts[1]), int(parts[2])
        if len(parts) == 4 and parts[3] == "linear":
            return linear_grid(lo, hi, pts)
        return log_grid(lo, hi, pts)
    except (ValueError, InvalidArgumentError) as exc:
        raise argparse.ArgumentTypeError(f"bad n-grid {spec!r}: {exc}") from None


def _grid_spec(spec: str) -> str:
    parse_n_grid(spec)
    return spec


def parse_params(spec: str) -> CurveParams:
    try:
        values = [float(v) for v in spec.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("params must be five numbers A,alpha,beta,zeta,c1") from None
    if len(values) != 5:
        raise argparse.ArgumentTypeError("params must be five numbers A,alpha,beta,zeta,c1")
    if values[4] <= 0:
        raise argparse.ArgumentTypeError("c1 must be positive")
    return CurveParams(*values)


def parse_pair(spec: str) -> tuple[float, float]:
    try:
        g0, g1 = (float(v) for v in spec.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("threshold must be g0,g1") from None
    return g0, g1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliInputError(f"{SEED_ENV}={env!r} is not an integer") from None
    return secrets.randbits(32)


def read_threshold_file(path: Path) -> ThresholdProfile:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliInputError(f"cannot read threshold file {path}: {exc}") from None
    pairs = []
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or (i == 1 and line.lower().startswith("n")):
            continue
        try:
            n, g = line.split(",")
            pairs.append((float(n), float(g)))
        except ValueError:
            raise CliInputError(f"{path}: line {i}: expected n,gamma") from None
    if not pairs:
        raise CliInputError(f"{path}: no thresholds")
    return ThresholdProfile.from_pairs(pairs)


def _canonical_argv(args: argparse.Namespace, seed: int) -> list[str]:
    """argv that reproduces this run (seed made explicit, --out left off)."""
    argv = [args.command]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "out", "handler", "seed", "verbose") or value is None or value is False:
            continue
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif isinstance(value, list):
            argv += [flag, ",".join(str(v) for v in value)]
        elif isinstance(value, CurveParams):
            argv += [flag, ",".join(repr(v) for v in value.as_array())]
        elif isinstance(value, tuple):
            argv += [flag, ",".join(repr(v) for v in value)]
        else:
            argv += [flag, str(value)]
    return argv + ["--seed", str(seed)]


def write_manifest(out: Path, args, seed: int, inputs: dict[str, str], config: dict,
                   started: float, outputs: list[str]) -> None:
    manifest = {
        "command": args.command,
        "argv": _canonical_argv(args, seed),
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "tool_version": tool_version(),
        "timings": {"seconds": round(time.perf_counter() - started, 3)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")


def cmd_simulate_model(args) -> int:
    started = time.perf_counter()
    seed = resolve_seed(args.seed)
    params = args.params if args.params is not None else preset(args.problem).params
    grid = parse_n_grid(args.n_grid)
    if args.threshold_file:
        thresholds = read_threshold_file(Path(args.threshold_file))
        inputs = {args.threshold_file: _sha256(Path(args.threshold_file))}
    else:
        inputs = {}
        if args.threshold:
            thresholds = ThresholdProfile.power(args.threshold[0], args.threshold[1], grid)
        else:
            thresholds = default_profile(params, grid)
    records = run_experiment1(params, grid, args.teams, thresholds, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(data_io.serialize_csv(records), encoding="utf-8")
    config = {"params": params.as_dict(), "n_grid": grid, "teams": args.teams,
              "thresholds": thresholds.pairs()}
    write_manifest(out, args, seed, inputs, config, started, ["records.csv"])
    print(f"wrote {len(records)} published records to {out / 'records.csv'}")
    return EXIT_OK


def cmd_simulate_pipeline(args) -> int:
    started = time.perf_counter()
    seed = resolve_seed(args.seed)
    grid = parse_n_grid(args.n_grid)
    g0, g1 = args.threshold if args.threshold else (DEFAULT_G0, DEFAULT_G1)
    thresholds = ThresholdProfile.power(g0, g1, grid)
    k = args.features_k if args.features_k is not None else DEFAULT_K[args.problem]
    pub_seed, truth_seed = seed, seed + 1
    records = run_experiment2(args.problem, grid, args.teams, thresholds, k, pub_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(data_io.serialize_csv(records), encoding="utf-8")
    outputs = ["records.csv"]
    if args.true_curve:
        curve = estimate_true_curve(args.problem, grid, args.repeats, k, truth_seed)
        lines = ["n,mean_accuracy"] + [f"{n},{acc!r}" for n, acc in curve]
        (out / "true_curve.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append("true_curve.csv")
    config = {"problem": args.problem, "n_grid": grid, "teams": args.teams, "features_k": k,
              "thresholds": thresholds.pairs(), "repeats": args.repeats}
    write_manifest(out, args, seed, {}, config, started, outputs)
    print(f"wrote {len(records)} published records to {out / 'records.csv'}")
    return EXIT_OK


def _load_dataset(args) -> tuple[data_io.Dataset, dict[str, str]]:
    if args.bundled:
        ds = data_io.bundled(args.bundled)
        return ds, {f"bundled:{args.bundled}": hashlib.sha256(data_io.bundled_bytes(args.bundled)).hexdigest()}
    path = Path(args.input)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CliInputError(f"cannot read input {path}: {exc.strerror or exc}") from None
    return data_io.parse_csv(raw, name=path.stem), {str(path): hashlib.sha256(raw).hexdigest()}


def _fit_config(args, seed: int, bootstrap: int) -> FitConfig:
    return FitConfig(
        population=args.pop,
        offspring=args.offspring,
        generations=args.generations,
        bootstrap_reps=bootstrap,
        seed=seed,
        window_len=args.window,
        use_filter=not args.no_filter,
        bootstrap_bands=getattr(args, "bootstrap_bands", False),
        jobs=args.jobs,
    )


def plot_grid(records) -> list[float]:
    top = max((r.n for r in records), default=1000)
    return [float(n) for n in log_grid(10, max(10 * top, 100), 40)]


def cmd_fit(args) -> int:
    started = time.perf_counter()
    seed = resolve_seed(args.seed)
    dataset, inputs = _load_dataset(args)
    config = _fit_config(args, seed, args.bootstrap)
    result = fit(dataset.records, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc, curve = data_io.export_fit(result, plot_grid(dataset.records), dataset.name)
    (out / "fit.json").write_text(doc, encoding="utf-8")
    (out / "curve.csv").write_text(curve, encoding="utf-8")
    svg = data_io.export_svg(dataset, result, data_io.SvgOptions(title=dataset.name))
    (out / "plot.svg").write_bytes(svg)
    write_manifest(out, args, seed, inputs, config.as_dict(), started,
                   ["fit.json", "curve.csv", "plot.svg"])
    p = result.params
    print(f"A={p.A:.4f} alpha={p.alpha:.4f} beta={p.beta:.4f} zeta={p.zeta:.4f} c1={p.c1:.4f}")
    if result.ci:
        lo, hi = result.ci["A"]
        print(f"A 95% interval [{lo:.4f}, {hi:.4f}] from {result.diagnostics['bootstrap_reps']} resamples")
    print(f"{len(result.flags)} records above the corrected upper band; outputs in {out}")
    return EXIT_OK


def cmd_flag(args) -> int:
    seed = resolve_seed(args.seed)
    dataset, _ = _load_dataset(args)
    result = fit(dataset.records, _fit_config(args, seed, args.bootstrap))
    rows = exceedances(dataset.records, result)
    if args.json:
        for sid, rec, band, exc in rows:
            print(json.dumps({"study_id": sid, "n": rec.n, "accuracy": rec.accuracy,
                              "band": band, "exceedance": exc}, sort_keys=True))
        return EXIT_OK
    print(f"{'study_id':<32} {'n':>7} {'accuracy':>9} {'band':>8} {'exceedance':>11}")
    for sid, rec, band, exc in rows:
        print(f"{sid:<32} {rec.n:>7} {rec.accuracy:>9.4f} {band:>8.4f} {exc:>11.4f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.manifest)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        argv = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise CliInputError(f"cannot read manifest {path}: {exc}") from None
    for name, digest in manifest.get("inputs", {}).items():
        if name.startswith("bundled:"):
            current = hashlib.sha256(data_io.bundled_bytes(name.split(":", 1)[1])).hexdigest()
        else:
            try:
                current = _sha256(Path(name))
            except OSError:
                raise CliInputError(f"input {name} from the manifest is missing") from None
        if current != digest:
            raise CliInputError(f"input {name} changed since the manifest was written")
    if manifest.get("tool_version") != tool_version():
        log.warning("manifest was written by version %s, running %s",
                    manifest.get("tool_version"), tool_version())
    return main(argv + ["--out", args.out])


def _add_fit_options(p: argparse.ArgumentParser, bootstrap_default: int) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV with header n,accuracy[,study_id[,year]]")
    src.add_argument("--bundled", help="bundled table: " + ", ".join(data_io.bundled_names()))
    p.add_argument("--generations", type=int, default=300)
    p.add_argument("--pop", type=int, default=40, help="NSGA-II population size")
    p.add_argument("--offspring", type=int, default=10)
    p.add_argument("--bootstrap", type=int, default=bootstrap_default,
                   help="bootstrap resamples for intervals (0 = point estimate only)")
    p.add_argument("--no-filter", action="store_true", help="skip the 0.1-quantile outlier filter")
    p.add_argument("--window", type=int, default=2, help="window length over distinct sample sizes")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for bootstrap refits")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvecorrect",
                                     description="De-biased learning curves from published accuracies.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-model", help="sample the observation model with selective publication")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--problem", type=int, choices=sorted(PRESETS), default=None)
    src.add_argument("--params", type=parse_params, help="A,alpha,beta,zeta,c1")
    p.add_argument("--n-grid", type=_grid_spec, default="20,1000,12",
                   help="min,max,points[,log|linear] (default 20,1000,12 log-spaced)")
    p.add_argument("--teams", type=int, default=100)
    th = p.add_mutually_exclusive_group()
    th.add_argument("--threshold", type=parse_pair, help="g0,g1 for gamma_n = g0 + g1/sqrt(n)")
    th.add_argument("--threshold-file", help="CSV of n,gamma pairs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_simulate_model)

    p = sub.add_parser("simulate-pipeline", help="leaky classification teams with selective publication")
    p.add_argument("--problem", type=int, choices=[1, 2], required=True)
    p.add_argument("--teams", type=int, default=20)
    p.add_argument("--n-grid", type=_grid_spec, default="20,1000,12")
    p.add_argument("--features-k", type=int, default=None)
    p.add_argument("--threshold", type=parse_pair, help="g0,g1 for gamma_n = g0 + g1/sqrt(n)")
    p.add_argument("--true-curve", action="store_true", help="also write the leak-free mean curve")
    p.add_argument("--repeats", type=int, default=100, help="leak-free trials per n for --true-curve")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate_pipeline)

    p = sub.add_parser("fit", help="fit the corrected learning curve")
    _add_fit_options(p, CLI_BOOTSTRAP_DEFAULT)
    p.add_argument("--bootstrap-bands", action="store_true",
                   help="flag against bootstrap predictive bands instead of the point band")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("flag", help="list records above the corrected upper band")
    _add_fit_options(p, 0)
    p.add_argument("--json", action="store_true", help="emit JSON lines")
    p.set_defaults(handler=cmd_flag)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command == "simulate-model" and args.problem is None and args.params is None:
        parser.error("simulate-model needs --problem or --params")
    try:
        return args.handler(args)
    except InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (CliInputError, ParseError, NotFoundError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
