"""Command-line surface.

Subcommands: ``simulate`` (write snapshot files), ``train`` (build a dataset,
train, write a checkpoint), ``eval`` (run a benchmark preset), ``metrics``
(RMSE / Hausdorff / confusion from explicit sets or trial files), ``crlb``
(bound tables) and ``spec-check`` (validate an architecture profile without
training). Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from math import comb
from pathlib import Path

import numpy as np

from .arraymodel import GridSpec, SourceScene, UlaGeometry, save_snapshots, simulate_snapshots
from .crlb import crlb_unconditional
from .metrics import confusion, hausdorff, rmse
from .nn import param_count, save_checkpoint
from .presets import PRESETS, preset_names, run_preset
from .profiles import PROFILES, build_network_spec
from .training import (
    TrainConfig,
    build_fixed_k_dataset,
    build_mixed_k_dataset,
    train,
)

__all__ = ["cli", "main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _angles(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError as exc:
        raise _UsageError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _build_parser() -> _Parser:
    parser = _Parser(prog="doabench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate snapshots and write them to a file")
    p.add_argument("--n", type=int, required=True, help="sensor count")
    p.add_argument("--spacing", type=float, default=0.5, help="element spacing in wavelengths")
    p.add_argument("--doas", type=_angles, required=True, help="comma-separated DoAs in degrees")
    p.add_argument("--powers", type=_angles, default=None, help="per-source powers (default 1)")
    p.add_argument("--noise-power", type=float, required=True)
    p.add_argument("--snapshots", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="build a dataset, train the network, write a checkpoint")
    p.add_argument("--profile", choices=sorted(PROFILES), required=True)
    p.add_argument("--regime", choices=("fixed", "mixed"), default="fixed")
    p.add_argument("--snr-db", type=float, default=None,
                   help="training SNR for the mixed regime (default: profile's first)")
    p.add_argument("--epochs", type=int, default=None, help="override the profile's epoch count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="run a named benchmark preset")
    p.add_argument("--preset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", choices=("full", "desk"), default="desk")
    p.add_argument("--out", default="results")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--eta", type=_angles, default=None,
                   help="override the preset's noise bound(s), one value or one per sweep point")
    p.add_argument("--snapshots", type=int, default=None, help="override the snapshot count")

    p = sub.add_parser("metrics", help="compute RMSE/Hausdorff/confusion")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--rmse", action="store_true")
    kind.add_argument("--hausdorff", action="store_true")
    kind.add_argument("--confusion", action="store_true")
    p.add_argument("--set-a", type=_angles, default=None, help="first angle set (degrees)")
    p.add_argument("--set-b", type=_angles, default=None, help="second angle set (degrees)")
    p.add_argument("--from-trials", default=None, help="per-trial CSV from `eval`")
    p.add_argument("--method", default=None, help="restrict --from-trials rows to one method")
    p.add_argument("--k-display", type=int, default=3, help="confusion matrix size")

    p = sub.add_parser("crlb", help="print a table of DoA standard-deviation bounds")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--spacing", type=float, default=0.5)
    p.add_argument("--doas", type=_angles, required=True)
    p.add_argument("--powers", type=_angles, default=None)
    noise = p.add_mutually_exclusive_group(required=True)
    noise.add_argument("--noise-power", type=float, default=None)
    noise.add_argument("--snr-db", type=float, default=None,
                       help="noise power derived for unit minimum source power")
    p.add_argument("--snapshots", type=_angles, required=True,
                   help="comma-separated snapshot counts")

    p = sub.add_parser("spec-check", help="validate an architecture profile (no training)")
    p.add_argument("--profile", choices=sorted(PROFILES), required=True)

    return parser


def _cmd_simulate(args) -> int:
    geom = UlaGeometry(args.n, args.spacing)
    powers = args.powers if args.powers is not None else (1.0,) * len(args.doas)
    scene = SourceScene(args.doas, powers, args.noise_power)
    block = simulate_snapshots(geom, scene, args.snapshots, args.seed)
    save_snapshots(block, args.out)
    print(f"wrote {args.snapshots} snapshots for {args.n} sensors to {args.out}")
    return 0


def _cmd_train(args) -> int:
    profile = PROFILES[args.profile]
    spec = build_network_spec(profile)
    if args.regime == "fixed":
        dataset = build_fixed_k_dataset(
            profile.grid, profile.geom, profile.fixed_k, profile.fixed_snrs_db
        )
        period = profile.lr_period_fixed
    else:
        snr = args.snr_db if args.snr_db is not None else profile.mixed_snrs_db[0]
        dataset = build_mixed_k_dataset(profile.grid, profile.geom, profile.mixed_k_max, snr)
        period = profile.lr_period_mixed
    epochs = args.epochs if args.epochs is not None else profile.epochs
    config = TrainConfig(epochs=epochs, lr_halving_period_epochs=period, seed=args.seed)
    print(
        f"training profile {profile.name!r} ({args.regime} regime, "
        f"{len(dataset)} examples, {epochs} epochs)"
    )
    params, history = train(spec, dataset, config)
    metadata = {
        "profile": profile.name,
        "regime": args.regime,
        "n_sensors": profile.geom.n_sensors,
        "spacing_ratio": profile.geom.spacing_ratio,
        "phi_max_deg": profile.grid.phi_max_deg,
        "resolution_deg": profile.grid.resolution_deg,
        "snr_db_list": list(dataset.snr_db_list),
        "k_policy": dataset.k_policy,
        "epochs": epochs,
        "seed": args.seed,
        "final_train_loss": history.train_loss[-1],
        "final_val_loss": history.val_loss[-1],
    }
    save_checkpoint(args.out, spec, params, metadata)
    print(
        f"final train loss {history.train_loss[-1]:.4f}, "
        f"validation loss {history.val_loss[-1]:.4f}; checkpoint written to {args.out}"
    )
    return 0


def _cmd_eval(args) -> int:
    summary = run_preset(
        args.preset,
        seed=args.seed,
        scale=args.scale,
        out_dir=args.out,
        checkpoint=args.checkpoint,
        eta_override=args.eta,
        snapshots_override=args.snapshots,
    )
    for kind, path in summary["paths"].items():
        print(f"{kind}: {path}")
    return 0


def _read_trials(path, method):
    import csv

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            if method is None or row["method"] == method:
                rows.append(row)
    if not rows:
        raise ValueError(f"no matching rows in {path}")
    return rows


def _cmd_metrics(args) -> int:
    if args.from_trials is not None:
        rows = _read_trials(args.from_trials, args.method)
        parse = lambda s: tuple(float(v) for v in s.split(";")) if s else ()
        truths = [parse(r["truth_deg"]) for r in rows]
        estimates = [parse(r["estimates_deg"]) for r in rows]
        if args.rmse:
            print(repr(rmse(truths, estimates)))
        elif args.hausdorff:
            values = [hausdorff(t, e) for t, e in zip(truths, estimates)]
            finite = [v for v in values if np.isfinite(v)]
            print(f"mean {np.mean(finite)!r} max {np.max(finite)!r} "
                  f"undefined {len(values) - len(finite)}")
        else:
            matrix = confusion(
                [len(t) for t in truths], [len(e) for e in estimates], args.k_display
            )
            for row in matrix:
                print(",".join(str(int(v)) for v in row))
        return 0
    if args.set_a is None or args.set_b is None:
        raise _UsageError("metrics needs either --from-trials or both --set-a and --set-b")
    if args.rmse:
        print(repr(rmse([args.set_a], [args.set_b])))
    elif args.hausdorff:
        print(repr(hausdorff(args.set_a, args.set_b)))
    else:
        raise _UsageError("--confusion needs --from-trials")
    return 0


def _cmd_crlb(args) -> int:
    geom = UlaGeometry(args.n, args.spacing)
    powers = args.powers if args.powers is not None else (1.0,) * len(args.doas)
    noise = args.noise_power
    if noise is None:
        noise = 10.0 ** (-args.snr_db / 10.0) * min(powers)
    scene = SourceScene(args.doas, powers, noise)
    print("snapshots," + ",".join(f"bound_deg_{a}" for a in args.doas))
    for t in args.snapshots:
        bound = crlb_unconditional(geom, scene, int(t))
        print(f"{int(t)}," + ",".join(repr(float(b)) for b in bound))
    return 0


def _cmd_spec_check(args) -> int:
    profile = PROFILES[args.profile]
    spec = build_network_spec(profile)
    chain = spec.shape_chain()
    conv_dims = [profile.geom.n_sensors] + [
        shape[0]
        for layer, shape in zip(spec.layers, chain)
        if layer.__class__.__name__ == "Conv2DSpec"
    ]
    flatten = next(shape[0] for shape in chain if len(shape) == 1)
    n_grid = profile.grid.n_points
    total = param_count(spec)
    n_fixed_per_snr = comb(n_grid, profile.fixed_k)
    n_fixed_total = n_fixed_per_snr * len(profile.fixed_snrs_db)
    n_mixed = sum(comb(n_grid, k) for k in range(1, profile.mixed_k_max + 1))
    print(f"profile: {profile.name}")
    print(f"input: {profile.geom.n_sensors}x{profile.geom.n_sensors}x3")
    print("convolution chain: " + " -> ".join(str(d) for d in conv_dims))
    print(f"flatten width: {flatten}")
    print(f"layer count: {len(spec.layers)}")
    print(f"output length: {n_grid}")
    print(f"trainable parameters: {total:,}")
    print(f"fixed-K examples per SNR (K={profile.fixed_k}): {n_fixed_per_snr:,}")
    print(
        f"fixed-K examples over {len(profile.fixed_snrs_db)} SNRs: {n_fixed_total:,}"
    )
    print(f"mixed-K examples (K_max={profile.mixed_k_max}): {n_mixed:,}")
    return 0


def cli(argv=None) -> int:
    """Run the command line; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "metrics": _cmd_metrics,
        "crlb": _cmd_crlb,
        "spec-check": _cmd_spec_check,
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
