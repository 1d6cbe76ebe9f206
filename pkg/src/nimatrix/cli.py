"""Command-line interface.

One binary with subcommands covering every pipeline: trace a sampler to
a matrix file, check marginal deviations, execute a matrix with an
analytic predictor, run concentration statistics, classify rows as
guidance stages, search for improved matrices, compute spectral SNR
profiles, and export embedded presets.

Results go to stdout as CSV; diagnostics go to stderr.  Exit codes:
0 success, 2 usage/parameter error, 3 numeric failure, 4 I/O or file
format error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import analysis, coeffmatrix, engine, guidance, oracles, presets
from . import schedule as sched
from . import search as searchmod
from .errors import (DomainError, FormatError, NumericError, ParameterError,
                     ProtocolError, ValidationError)
from .samplers import KINDS, SamplerSpec, default_schedule

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parse_schedule(text: str | None, spec: SamplerSpec | None = None):
    if text is None:
        if spec is None:
            raise ParameterError("a schedule is required")
        return default_schedule(spec)
    parts = text.split(":")
    kind = parts[0]
    if kind == "flow":
        return sched.make_flow()
    if kind == "vp-linear":
        args = [float(p) for p in parts[1:]]
        bmin, bmax, T = (args + [1e-4, 0.02, 1000][len(args):])[:3]
        return sched.make_vp_linear(bmin, bmax, int(T))
    if kind == "vp-continuous":
        args = [float(p) for p in parts[1:]]
        bmin, bmax = (args + [0.1, 20.0][len(args):])[:2]
        return sched.make_vp_continuous(bmin, bmax)
    raise ParameterError(f"unknown schedule {text!r}")


def _parse_predictor(text: str, s, label=None):
    if ":" not in text:
        raise ParameterError("predictor must be dataset:FILE or gmm:FILE")
    kind, path = text.split(":", 1)
    if kind == "dataset":
        if path.endswith(".csv"):
            ds = oracles.load_dataset_csv(path)
        else:
            ds = oracles.load_dataset(path)
        return oracles.make_predictor(ds, s, label=label)
    if kind == "gmm":
        return oracles.make_predictor(oracles.load_mixture(path), s)
    raise ParameterError(f"unknown predictor kind {kind!r}")


def _marginal_csv(report) -> str:
    lines = ["time,equivalent_signal,equivalent_noise,ideal_signal,"
             "ideal_noise,signal_deviation,noise_deviation"]
    for i, t in enumerate(report.row_times):
        lines.append(",".join(repr(float(v)) for v in (
            t, report.equivalent_signal[i], report.equivalent_noise[i],
            report.ideal_signal[i], report.ideal_noise[i],
            report.signal_deviation[i], report.noise_deviation[i])))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------

def cmd_trace(args):
    spec = SamplerSpec(kind=args.sampler)
    s = _parse_schedule(args.schedule, spec)
    grid = None
    if args.grid and args.grid.startswith("explicit:"):
        times = np.loadtxt(args.grid.split(":", 1)[1], ndmin=1)
        grid = sched.make_grid(s, len(times), "explicit", explicit=times)
    elif args.grid == "quadratic":
        from .samplers import default_grid
        if spec.kind.startswith("deis"):
            grid = default_grid(spec, s, args.steps)  # already quadratic
        else:
            grid = sched.make_grid(s, args.steps, "quadratic")
    m = coeffmatrix.trace_sampler(spec, s=s, grid=grid, n_evals=args.steps)
    if args.out:
        coeffmatrix.save(m, args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    report = coeffmatrix.equivalent_marginals(m, s)
    sys.stdout.write(_marginal_csv(report))
    print(f"max deviation (excluding start row): "
          f"{report.max_deviation(skip_initial_row=True):.6g}",
          file=sys.stderr)
    return EXIT_OK


def _load_matrix(name_or_path: str):
    if name_or_path in presets.list_presets():
        return presets.load_preset(name_or_path)
    return coeffmatrix.load(name_or_path)


def cmd_check(args):
    m = _load_matrix(args.matrix)
    report = coeffmatrix.equivalent_marginals(m)
    sys.stdout.write(_marginal_csv(report))
    return EXIT_OK


def cmd_sample(args):
    m = _load_matrix(args.matrix)
    pred = _parse_predictor(args.predictor, m.schedule(), label=args.label)
    res = engine.run_matrix(engine.RunConfig(
        matrix=m, predictor=pred, n=args.n, seed=args.seed))
    if args.out:
        oracles.save_dataset(oracles.Dataset(atoms=res.samples), args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        for row in res.samples:
            sys.stdout.write(",".join(repr(float(v)) for v in row) + "\n")
    return EXIT_OK


def cmd_degrade(args):
    if args.data.endswith(".csv"):
        ds = oracles.load_dataset_csv(args.data)
    else:
        ds = oracles.load_dataset(args.data)
    s = {"vp": sched.make_vp_linear(), "flow": sched.make_flow()}[args.family]
    times = [float(t) for t in args.times.split(",")]
    report = analysis.degradation_table(
        ds, [s], [times], trials=args.trials, seed=args.seed,
        threshold=args.threshold)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_guidance(args):
    m = _load_matrix(args.matrix)
    lines = ["time,summary"]
    for t, summary in guidance.classify_matrix(m):
        lines.append(f"{float(t)!r},{summary}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_search(args):
    if args.init == "ddim":
        spec = SamplerSpec(kind="ddim")
        base = coeffmatrix.trace_sampler(spec, n_evals=args.steps)
    else:
        base = _load_matrix(args.init)
    pred = _parse_predictor(args.predictor, base.schedule())
    rng = np.random.default_rng(args.seed)
    if args.reference:
        ref = oracles.load_dataset(args.reference).atoms
    else:
        # sample the predictor's own source distribution
        src = pred.source
        if isinstance(src, oracles.GaussianMixture):
            comp = rng.choice(len(src.weights), size=2048, p=src.weights)
            ref = (src.means[comp] + np.sqrt(src.variances[comp])[:, None]
                   * rng.standard_normal((2048, src.d)))
        else:
            ref = src.atoms[rng.integers(src.n, size=2048)]
    space = searchmod.SearchSpace(base=base, band=args.band)
    result = searchmod.optimize_matrix(space, pred, ref, budget=args.budget,
                                       seed=args.seed,
                                       log=lambda msg: print(msg, file=sys.stderr))
    if args.out:
        coeffmatrix.save(result.best, args.out)
        print(f"wrote {args.out}", file=sys.stderr)
    lines = ["evaluation,best_objective"]
    lines += [f"{i},{v!r}" for i, v in enumerate(result.objective_trace)]
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_spectrum(args):
    if args.image.endswith(".npy"):
        img = np.load(args.image)
    else:
        img = np.loadtxt(args.image, delimiter=",", ndmin=2)
    s = {"vp": sched.make_vp_linear(), "flow": sched.make_flow()}[args.family]
    profile = analysis.snr_profile(img, s, args.t)
    lines = ["band,snr"]
    lines += [f"{b},{float(v)!r}" for b, v in enumerate(profile)]
    sys.stdout.write("\n".join(lines) + "\n")
    frac = analysis.submerged_fraction(profile)
    print(f"submerged fraction: {frac:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_presets(args):
    if args.action == "list":
        for name in presets.list_presets():
            print(f"{name},{presets.preset_description(name)}")
        return EXIT_OK
    if not args.name:
        raise ParameterError("export requires a preset name")
    payload = presets.preset_payload(args.name)
    import json
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
        print(f"wrote {args.out}", file=sys.stderr)
    else:
        json.dump(payload, sys.stdout, indent=1)
        sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nimatrix", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("trace", help="trace a sampler into a matrix file")
    t.add_argument("--sampler", required=True, choices=KINDS)
    t.add_argument("--steps", type=int, default=18,
                   help="number of model evaluations")
    t.add_argument("--schedule", default=None,
                   help="vp-linear[:BMIN:BMAX:T] | flow | vp-continuous[:BMIN:BMAX]")
    t.add_argument("--grid", default=None,
                   help="trailing (default) | quadratic | explicit:FILE")
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_trace)

    c = sub.add_parser("check", help="marginal-coefficient report for a matrix")
    c.add_argument("matrix", help="matrix file or preset name")
    c.set_defaults(func=cmd_check)

    sm = sub.add_parser("sample", help="execute a matrix with a predictor")
    sm.add_argument("--matrix", required=True)
    sm.add_argument("--predictor", required=True,
                    help="dataset:FILE | gmm:FILE")
    sm.add_argument("--label", type=int, default=None)
    sm.add_argument("--n", type=int, default=16)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out", default=None)
    sm.set_defaults(func=cmd_sample)

    d = sub.add_parser("degrade", help="posterior-concentration statistics")
    d.add_argument("--data", required=True)
    d.add_argument("--family", choices=("vp", "flow"), required=True)
    d.add_argument("--times", required=True, help="comma-separated times")
    d.add_argument("--trials", type=int, default=1000)
    d.add_argument("--threshold", type=float, default=0.9)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_degrade)

    g = sub.add_parser("guidance", help="per-row guidance classification")
    g.add_argument("matrix", help="matrix file or preset name")
    g.set_defaults(func=cmd_guidance)

    se = sub.add_parser("search", help="optimize matrix entries")
    se.add_argument("--steps", type=int, default=5)
    se.add_argument("--predictor", required=True)
    se.add_argument("--reference", default=None,
                    help="dataset file of target samples (default: drawn "
                    "from the predictor's source)")
    se.add_argument("--budget", type=int, default=2000)
    se.add_argument("--init", default="ddim", help="ddim | matrix file")
    se.add_argument("--band", type=int, default=3)
    se.add_argument("--seed", type=int, default=0)
    se.add_argument("--out", default=None)
    se.set_defaults(func=cmd_search)

    sp = sub.add_parser("spectrum", help="per-band SNR profile of an image")
    sp.add_argument("--image", required=True, help=".npy or CSV matrix")
    sp.add_argument("--family", choices=("vp", "flow"), required=True)
    sp.add_argument("--t", type=float, required=True)
    sp.set_defaults(func=cmd_spectrum)

    pr = sub.add_parser("presets", help="list or export embedded matrices")
    pr.add_argument("action", choices=("list", "export"))
    pr.add_argument("name", nargs="?", default=None)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, ValidationError, DomainError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
