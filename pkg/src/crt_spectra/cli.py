"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 capacity exceeded, 4 numerical
guard tripped (tail/truncation/window failures, oracle or bracketing
mismatch). Everything is deterministic in (seed, config): re-running a
command reproduces the numeric payloads byte for byte, whatever the thread
count.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (
    EnsembleConfig,
    config_hash,
    estimate_renewal_constant,
    fit_scaling,
    run_ensemble,
    write_results,
)
from .cascade import CascadeTree
from .errors import CapacityError, CrtSpectraError, TailError, TruncationError, WindowUnresolved
from .excursion import sample_excursion
from .forms import assemble
from .spectrum import Pencil, bracketing_check, dense_count_below, network_counts, network_curves


class GuardError(CrtSpectraError):
    """A validation the CLI promised to gate on has failed."""


def _meta(seed: int, params: dict) -> dict:
    return {"seed": seed, "config_hash": config_hash(params), "version": __version__, **params}


def cmd_sample_excursion(args) -> int:
    path = sample_excursion(args.steps, args.seed)
    out = Path(args.out)
    if args.binary:
        out.write_bytes(path.to_binary())
    else:
        out.write_text(path.to_csv())
    return 0


def cmd_sample_cascade(args) -> int:
    casc = CascadeTree.sample(args.depth, args.seed)
    out = Path(args.out)
    if args.binary:
        out.write_bytes(casc.to_binary())
    else:
        out.write_text(casc.to_json())
    return 0


def cmd_spectrum(args) -> int:
    from .asymptotics import build_network

    net = build_network(args.depth, args.seed, args.trunc_depth)
    lams = np.geomspace(args.lambda_lo, args.lambda_hi, args.points)
    curve_d, curve_n = network_curves(net, lams)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    params = {
        "depth": args.depth,
        "lambda_lo": args.lambda_lo,
        "lambda_hi": args.lambda_hi,
        "points": args.points,
        "boundary": args.boundary,
        "trunc_depth": args.trunc_depth,
    }
    (outdir / "meta.json").write_text(json.dumps(_meta(args.seed, params), sort_keys=True, indent=1) + "\n")
    if args.boundary in ("dirichlet", "both"):
        (outdir / "spectrum_dirichlet.csv").write_text(curve_d.to_csv())
    if args.boundary in ("neumann", "both"):
        (outdir / "spectrum_neumann.csv").write_text(curve_n.to_csv())
    if args.check_bracketing:
        if args.depth < 1:
            raise GuardError("bracketing needs depth >= 1")
        reports = bracketing_check(net, lams)
        bad = [r for r in reports if not (r.chain_ok and r.gap_ok)]
        if bad:
            raise GuardError(f"bracketing violated at {len(bad)} lambda values, first at {bad[0].lam}")
    return 0


def _ensemble_config(args, route: str) -> EnsembleConfig:
    return EnsembleConfig(
        replicas=args.replicas,
        depth=getattr(args, "depth", 0),
        master_seed=args.seed,
        trunc_depth=getattr(args, "trunc_depth", 20),
        lambda_lo=args.lambda_lo,
        lambda_hi=args.lambda_hi,
        lambda_points=args.points,
        route=route,
        threads=args.threads,
        steps=getattr(args, "steps", 2**14),
        leaves=getattr(args, "leaves", 600),
        debug_cascade=getattr(args, "debug_cascade", False),
    )


def _check_oracle(config: EnsembleConfig) -> None:
    if config.depth > 4:
        raise GuardError("--oracle is limited to depth <= 4 (dense solver)")
    from .asymptotics import build_network

    lams = np.geomspace(config.lambda_lo, config.lambda_hi, 7)
    for r in range(min(config.replicas, 3)):
        net = build_network(config.depth, config.replica_seed(r), config.trunc_depth, config.debug_cascade)
        nd, nn = network_counts(net, lams)
        pd = Pencil.from_network(net, "dirichlet")
        pn = Pencil.from_network(net, "neumann")
        for i, lam in enumerate(lams):
            if config.depth >= 1 and dense_count_below(pd, float(lam)) != int(nd[i]):
                raise GuardError(f"oracle mismatch (dirichlet) at lambda={lam}")
            if dense_count_below(pn, float(lam)) != int(nn[i]):
                raise GuardError(f"oracle mismatch (neumann) at lambda={lam}")


def cmd_ensemble(args) -> int:
    config = _ensemble_config(args, "selfsimilar")
    if args.oracle:
        _check_oracle(config)
    result = run_ensemble(config)
    fit = None
    try:
        fit = fit_scaling(result)
    except WindowUnresolved as exc:
        if args.require_fit:
            raise
        print(f"warning: no resolved window ({exc}); curves written without fit", file=sys.stderr)
    write_results(args.out, result, fit)
    return 0


def cmd_renewal(args) -> int:
    config = _ensemble_config(args, "selfsimilar")
    result = run_ensemble(config)
    fit = None
    try:
        fit = fit_scaling(result)
    except WindowUnresolved:
        pass
    renewal = estimate_renewal_constant(config)
    extra = {"m_infinity": format(renewal.m_infinity, ".17g")}
    write_results(args.out, result, fit, renewal=renewal, extra=extra if fit else None)
    return 0


def cmd_crt_route(args) -> int:
    config = _ensemble_config(args, "excursion")
    result = run_ensemble(config)
    fit = None
    try:
        fit = fit_scaling(result)
    except WindowUnresolved as exc:
        print(f"warning: no resolved window ({exc})", file=sys.stderr)
    write_results(args.out, result, fit)
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="crt-spectra", description=__doc__)
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-excursion", help="write one sampled excursion path")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.set_defaults(fn=cmd_sample_excursion)

    p = sub.add_parser("sample-cascade", help="write one sampled cascade")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--binary", action="store_true")
    p.set_defaults(fn=cmd_sample_cascade)

    p = sub.add_parser("spectrum", help="counting curves for one cascade network")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-lo", type=float, default=1.0)
    p.add_argument("--lambda-hi", type=float, default=1e6)
    p.add_argument("--points", type=int, default=49)
    p.add_argument("--boundary", choices=["neumann", "dirichlet", "both"], default="both")
    p.add_argument("--trunc-depth", type=int, default=20)
    p.add_argument("--check-bracketing", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_spectrum)

    def ensemble_args(p, with_depth=True):
        p.add_argument("--replicas", type=int, required=True)
        if with_depth:
            p.add_argument("--depth", type=int, required=True)
            p.add_argument("--trunc-depth", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--lambda-lo", type=float, default=1.0)
        p.add_argument("--lambda-hi", type=float, default=1e8)
        p.add_argument("--points", type=int, default=97)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=True)

    p = sub.add_parser("ensemble", help="replica ensemble of cascade networks")
    ensemble_args(p)
    p.add_argument("--oracle", action="store_true", help="validate counts against the dense solver")
    p.add_argument("--debug-cascade", action="store_true")
    p.add_argument("--require-fit", action="store_true")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("renewal", help="renewal-route estimate of the counting constant")
    ensemble_args(p)
    p.set_defaults(fn=cmd_renewal)

    p = sub.add_parser("crt-route", help="counting curves from excursion-sampled trees")
    ensemble_args(p, with_depth=False)
    p.add_argument("--steps", type=int, default=2**14)
    p.add_argument("--leaves", type=int, default=600)
    p.set_defaults(fn=cmd_crt_route)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return 3
    except (GuardError, TailError, TruncationError, WindowUnresolved, AssertionError) as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
