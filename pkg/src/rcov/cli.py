"""Command-line front end: dataset generation, estimation runs, bench sweeps.

Three subcommands share one binary.  ``generate`` samples a corrupted
dataset and writes it (plus a small sidecar JSON carrying the ground truth)
to disk.  ``estimate`` runs the robust estimator over a dataset file and
prints a JSON result, appending true/naive error fields when the sidecar is
present.  ``bench`` sweeps a parameter grid and emits one TSV row per cell.

Everything is deterministic given ``--seed``; pass ``--no-timing`` to zero
out wall-clock fields so reruns are byte-identical.  Exit codes: 0 success,
2 usage error, 3 I/O problem, 4 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .corruption import STRATEGIES, CorruptionSpec, corrupt, sample_gaussian
from .estimator import EstimatorConfig, mahalanobis_error, robust_covariance
from .exceptions import (
    BudgetExceededError,
    DegenerateInputError,
    EmptyMassError,
    FileFormatError,
    PruneFailure,
    SpecError,
)
from .io import load_dataset, save_dataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_CLI_STRATEGIES = tuple(s.replace("_", "-") for s in STRATEGIES)

_BENCH_COLUMNS = (
    "d",
    "N",
    "eps",
    "adversary",
    "seed",
    "robust_err",
    "naive_err",
    "wall_ms_phase1",
    "wall_ms_phase2",
)


def _strategy_from_cli(name: str) -> str:
    internal = name.replace("-", "_")
    if internal not in STRATEGIES:
        raise SpecError(f"unknown adversary {name!r}; pick from {_CLI_STRATEGIES}")
    return internal


def _parse_sigma(text: str, d: int) -> np.ndarray:
    """``identity``, ``diag:a,b,...`` or a path to a JSON matrix file."""
    if text == "identity":
        return np.eye(d)
    if text.startswith("diag:"):
        entries = [float(v) for v in text[len("diag:"):].split(",") if v != ""]
        if len(entries) != d:
            raise SpecError(f"diag sigma needs {d} entries, got {len(entries)}")
        return np.diag(np.asarray(entries, dtype=np.float64))
    with open(text, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    sigma = np.asarray(raw, dtype=np.float64)
    if sigma.shape == (d * d,):
        sigma = sigma.reshape(d, d)
    if sigma.shape != (d, d):
        raise SpecError(f"sigma file must hold a {d}x{d} matrix, got {sigma.shape}")
    return sigma


def _parse_direction(text: Optional[str]) -> Optional[np.ndarray]:
    if text is None:
        return None
    return np.asarray([float(v) for v in text.split(",")], dtype=np.float64)


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _sidecar_path(dataset_path: str) -> str:
    return dataset_path + ".meta.json"


def _write_text(path: Optional[str], text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    strategy = _strategy_from_cli(args.adversary)
    sigma = _parse_sigma(args.sigma, args.d)
    spec = CorruptionSpec(
        epsilon=args.eps,
        strategy=strategy,
        seed=args.seed,
        direction=_parse_direction(args.direction),
        magnitude=args.magnitude,
        distance=args.distance,
        variance_factor=args.c,
    )
    clean = sample_gaussian(args.d, args.n, sigma, seed=args.seed)
    data = corrupt(clean, spec, sigma_true=sigma)
    save_dataset(data.samples, args.out)

    meta = {
        "format": "rcov-meta/1",
        "d": args.d,
        "n": args.n,
        "epsilon": args.eps,
        "adversary": args.adversary,
        "seed": args.seed,
        "sigma_true": [float(v) for v in sigma.reshape(-1)],
        "params": {
            "magnitude": args.magnitude,
            "distance": args.distance,
            "variance_factor": args.c,
            "direction": None
            if args.direction is None
            else [float(v) for v in _parse_direction(args.direction)],
        },
    }
    with open(_sidecar_path(args.out), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def _load_sidecar(dataset_path: str) -> Optional[dict]:
    path = _sidecar_path(dataset_path)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_estimate(args: argparse.Namespace) -> int:
    X = load_dataset(args.data)
    meta = _load_sidecar(args.data)

    epsilon = args.eps
    if epsilon is None and meta is not None:
        epsilon = float(meta["epsilon"])
    if epsilon is None:
        raise SpecError("--eps is required when no sidecar metadata is present")

    config = EstimatorConfig(epsilon=epsilon, seed=args.seed)
    estimate = robust_covariance(X, config)
    result = estimate.to_dict(
        include_timing=not args.no_timing, include_trace=args.emit_trace
    )

    if meta is not None and "sigma_true" in meta:
        d = X.shape[0]
        sigma_true = np.asarray(meta["sigma_true"], dtype=np.float64).reshape(d, d)
        naive = X @ X.T / X.shape[1]
        result["mahalanobis_error"] = mahalanobis_error(estimate.sigma_hat, sigma_true)
        result["naive_error"] = mahalanobis_error(naive, sigma_true)

    _write_text(args.out, json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _bench_cell(
    d: int,
    n: int,
    eps: float,
    adversary: str,
    seed: int,
    args: argparse.Namespace,
) -> dict:
    sigma = _parse_sigma(args.sigma, d)
    spec = CorruptionSpec(
        epsilon=eps,
        strategy=_strategy_from_cli(adversary),
        seed=seed,
        magnitude=args.magnitude,
        distance=args.distance,
        variance_factor=args.c,
    )
    clean = sample_gaussian(d, n, sigma, seed=seed)
    data = corrupt(clean, spec, sigma_true=sigma)
    X = data.samples
    estimate = robust_covariance(X, EstimatorConfig(epsilon=eps, seed=seed))
    wall1 = sum(r.wall_ms for r in estimate.records if r.phase == "first")
    wall2 = sum(r.wall_ms for r in estimate.records if r.phase == "second")
    if args.no_timing:
        wall1 = wall2 = 0.0
    return {
        "d": d,
        "N": n,
        "eps": eps,
        "adversary": adversary,
        "seed": seed,
        "robust_err": mahalanobis_error(estimate.sigma_hat, sigma),
        "naive_err": mahalanobis_error(X @ X.T / n, sigma),
        "wall_ms_phase1": wall1,
        "wall_ms_phase2": wall2,
    }


def _bench_workers(n_cells: int) -> int:
    workers = min(n_cells, os.cpu_count() or 1)
    cap = os.environ.get("RCOV_THREADS")
    if cap is not None:
        try:
            cap_val = int(cap)
        except ValueError as exc:
            raise SpecError(f"RCOV_THREADS must be an integer, got {cap!r}") from exc
        if cap_val < 1:
            raise SpecError(f"RCOV_THREADS must be >= 1, got {cap_val}")
        workers = min(workers, cap_val)
    return max(1, workers)


def _format_row(row: dict) -> str:
    return "\t".join(
        [
            str(row["d"]),
            str(row["N"]),
            format(row["eps"], "g"),
            row["adversary"],
            str(row["seed"]),
            format(row["robust_err"], ".6g"),
            format(row["naive_err"], ".6g"),
            format(row["wall_ms_phase1"], ".3f"),
            format(row["wall_ms_phase2"], ".3f"),
        ]
    )


def cmd_bench(args: argparse.Namespace) -> int:
    grid = [
        (d, n, eps, adv, args.seed + i)
        for d in _int_list(args.d)
        for n in _int_list(args.n)
        for eps in _float_list(args.eps)
        for adv in [a for a in args.adversary.split(",") if a != ""]
        for i in range(args.seeds)
    ]
    for _, _, _, adv, _ in grid:
        _strategy_from_cli(adv)  # fail fast on typos, before any work

    lines = ["\t".join(_BENCH_COLUMNS)]
    if grid:
        workers = _bench_workers(len(grid))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(lambda cell: _bench_cell(*cell, args=args), grid)
            )
        lines.extend(_format_row(row) for row in rows)
    _write_text(args.out, "\n".join(lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcov",
        description="Robust covariance estimation from corrupted samples.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="sample a corrupted dataset to disk")
    gen.add_argument("--d", type=int, required=True, help="ambient dimension")
    gen.add_argument("--n", type=int, required=True, help="number of samples")
    gen.add_argument(
        "--sigma",
        default="identity",
        help="true covariance: identity, diag:a,b,..., or a JSON matrix file",
    )
    gen.add_argument("--eps", type=float, required=True, help="corruption rate")
    gen.add_argument(
        "--adversary",
        default="none",
        help=f"corruption strategy, one of {', '.join(_CLI_STRATEGIES)}",
    )
    gen.add_argument("--c", type=float, default=100.0, help="variance inflation factor")
    gen.add_argument("--magnitude", type=float, default=100.0, help="spike norm")
    gen.add_argument("--distance", type=float, default=50.0, help="cluster offset")
    gen.add_argument("--direction", default=None, help="comma-separated direction vector")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output path (.csv or binary)")
    gen.set_defaults(func=cmd_generate)

    est = sub.add_parser("estimate", help="run the estimator over a dataset file")
    est.add_argument("data", help="dataset path (.csv or binary)")
    est.add_argument(
        "--eps",
        type=float,
        default=None,
        help="corruption rate (default: read from sidecar metadata)",
    )
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--out", default=None, help="write JSON here instead of stdout")
    est.add_argument(
        "--emit-trace",
        action="store_true",
        help="include per-round spectral/attribution traces in the JSON",
    )
    est.add_argument(
        "--no-timing",
        action="store_true",
        help="zero wall-clock fields so reruns are byte-identical",
    )
    est.set_defaults(func=cmd_estimate)

    ben = sub.add_parser("bench", help="sweep a grid and print one TSV row per cell")
    ben.add_argument("--d", default="4", help="comma list of dimensions")
    ben.add_argument("--n", default="10000", help="comma list of sample counts")
    ben.add_argument("--eps", default="0.05", help="comma list of corruption rates")
    ben.add_argument(
        "--adversary",
        default="variance-inflate",
        help="comma list of corruption strategies",
    )
    ben.add_argument("--seeds", type=int, default=1, help="seeds per grid cell")
    ben.add_argument("--seed", type=int, default=0, help="base seed")
    ben.add_argument("--sigma", default="identity", help="true covariance (as in generate)")
    ben.add_argument("--c", type=float, default=100.0, help="variance inflation factor")
    ben.add_argument("--magnitude", type=float, default=100.0, help="spike norm")
    ben.add_argument("--distance", type=float, default=50.0, help="cluster offset")
    ben.add_argument("--out", default=None, help="write TSV here instead of stdout")
    ben.add_argument("--no-timing", action="store_true", help="zero wall-clock columns")
    ben.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"rcov: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"rcov: {exc}", file=sys.stderr)
        return EXIT_IO
    except (
        DegenerateInputError,
        EmptyMassError,
        PruneFailure,
        BudgetExceededError,
        FloatingPointError,
    ) as exc:
        print(f"rcov: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
