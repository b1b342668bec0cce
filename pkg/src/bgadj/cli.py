"""Command-line entry point: ``bgadj <command> [flags]``.

Exit codes: 0 success, 2 fit did not converge, 64 usage error,
65 malformed or invalid input data.
"""
import argparse
import json
import math
import sys

import numpy as np

from . import canonical, fit, formats, synth, tailmc
from ._accel import default_threads
from .errors import (BgadjError, DataFormatError, DegenerateClusterError,
                     DegenerateParametersError, NonFiniteLikelihoodError)
from .mixture import contrast_scores, standardize_field
from .spdcore import ks_statistic

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64
EXIT_DATA = 65


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ints(text, n, what):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated integers") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated integers")
    return vals


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what} must be comma-separated numbers") from None


def _t_range(text):
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError("--t must be LO:HI:STEP") from None
    if not step > 0 or hi < lo:
        raise UsageError("--t needs LO <= HI and STEP > 0")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _grid_shape(text):
    try:
        nk, npi = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError("--grid must be NxM") from None
    if nk < 1 or npi < 1:
        raise UsageError("--grid sizes must be positive")
    return nk, npi


def _load_templates(path, n=None):
    templates = formats.read_templates(path)
    if n is not None and templates.grid.n != n:
        raise DataFormatError(f"templates cover {templates.grid.n} voxels, observations {n}")
    return templates


# -- commands ---------------------------------------------------------------


def cmd_simulate(args):
    dims = tuple(_ints(args.dims, 2, "--dims"))
    if args.scenario == "A" and args.lesion is not None:
        raise UsageError("--lesion applies to scenario B only")
    model = formats.read_params(args.params) if args.params else synth.phantom_model()
    if args.templates == "synthetic":
        templates = synth.synth_templates(dims)
    else:
        templates = formats.read_templates(args.templates)
        if templates.grid.dims != dims:
            raise UsageError(f"--dims {dims} disagree with template grid {templates.grid.dims}")
    lesion = None
    if args.lesion is not None:
        cx, cy, r = _ints(args.lesion, 3, "--lesion")
        lesion = synth.LesionSpec((cx, cy), r)
    try:
        spec = synth.ScenarioSpec(args.scenario, dims, model, templates, lesion, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    obs, truth = synth.generate(spec)
    grid = spec.grid
    formats.write_baf(f"{args.out}.obs.baf", obs, grid)
    formats.write_templates(f"{args.out}.templates.baf", spec.templates)
    formats.write_params(f"{args.out}.truth.params", spec.model)
    if args.scenario == "B":
        formats.write_baf(f"{args.out}.mask.baf", truth.mask.astype(float), grid)
    return EXIT_OK


def cmd_fit(args):
    spatial = args.method in ("sgmm", "rb-sgmm")
    if spatial and not args.templates:
        raise UsageError(f"--method {args.method} needs --templates")
    grid, obs = formats.read_baf(args.input)
    templates = _load_templates(args.templates, grid.n) if args.templates else None
    K = templates.K if templates is not None else args.K
    try:
        cfg = fit.FitConfig(tol=args.tol, max_iter=args.max_iter, huber_q=args.huber_q,
                            robust=args.method == "rb-sgmm", spatial=spatial, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    res = fit.fit(obs, templates, cfg, K=K)
    formats.write_params(args.out, res.model)
    log_path = args.log or f"{args.out}.log.jsonl"
    with open(log_path, "w") as f:
        for it, ll in enumerate(res.loglik_trace):
            f.write(json.dumps({"iter": it, "loglik": float(ll)}) + "\n")
        f.write(json.dumps({"method": args.method, "iterations": res.iterations,
                            "converged": res.converged, "decreases": res.decreases,
                            "warnings": res.warnings}) + "\n")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_standardize(args):
    grid, obs = formats.read_baf(args.input)
    model = formats.read_params(args.params)
    templates = None
    if model.spatial:
        if not args.templates:
            raise UsageError("spatial parameters need --templates")
        templates = _load_templates(args.templates, grid.n)
    if obs.shape[1] != model.p:
        raise DataFormatError(f"observations have {obs.shape[1]} channels, model p = {model.p}")
    a = _floats(args.contrast, "--contrast")
    if len(a) != model.p:
        raise UsageError(f"--contrast has {len(a)} entries, model p = {model.p}")
    nrm = math.hypot(*a)
    if not nrm > 0:
        raise UsageError("--contrast must be nonzero")
    # the flag gives a direction; scale it to unit length
    a = [v / nrm for v in a]
    field = standardize_field(obs, model, templates, args.transform.upper(), args.assign, grid)
    res = contrast_scores(field, a)
    formats.write_baf(f"{args.out}.scores.baf", field.scores, grid)
    formats.write_baf(f"{args.out}.z.baf", res.z, grid)
    formats.write_baf(f"{args.out}.p.baf", res.p_two, grid)
    rows = []
    for c in range(model.p):
        d, pv = ks_statistic(field.scores[:, c])
        rows.append([f"score{c + 1}", grid.n, d, pv])
    d, pv = ks_statistic(res.z)
    rows.append(["z", grid.n, d, pv])
    tailmc.write_csv(f"{args.out}.summary.csv", ["channel", "n", "ks_statistic", "ks_pvalue"], rows)
    return EXIT_OK


def cmd_tail(args):
    nk, npi = _grid_shape(args.grid)
    spec = tailmc.TailSpec(alpha=args.alpha, side=args.tail, reps=args.reps, seed=args.seed)
    grid = tailmc.CaseGrid.coarse(args.case, args.rho, args.kappa2, n_kappa=nk, n_pi=npi)
    hm = tailmc.heatmap(grid, args.method.upper(), args.assign, spec, threads=args.threads)
    hm.to_csv(args.out)
    return EXIT_OK


def cmd_cdf(args):
    t = _t_range(args.t)
    theta = canonical.CanonicalParams([args.delta1], [[args.tau]], args.pi0)
    if theta.in_theta0:
        raise DegenerateParametersError(
            "parameters lie in the degenerate set (delta1 = 0 with tau = 1, or infinite pi0); "
            "the hard-assigned score is exactly standard normal there")
    exact = canonical.hard_cdf_univariate(t, theta)
    mc = canonical.hard_contrast_cdf_mc(t, [1.0], theta, reps=args.reps, seed=args.seed,
                                        threads=args.threads)
    rows = [[float(a), float(b), float(c), float(d)] for a, b, c, d in zip(t, exact, mc.value, mc.se)]
    tailmc.write_csv(args.out, ["t", "F_exact", "F_mc", "SE"], rows)
    return EXIT_OK


def cmd_eval(args):
    est = formats.read_params(args.est)
    truth = formats.read_params(args.truth)
    if est.K != truth.K or est.p != truth.p:
        raise DataFormatError(f"models differ: K {est.K} vs {truth.K}, p {est.p} vs {truth.p}")
    templates = formats.read_templates(args.templates) if args.templates else None
    if templates is None and (est.spatial or truth.spatial):
        raise UsageError("spatial parameters need --templates for the probability-matrix error")
    if args.match_labels:
        est = est.permuted(fit.match_labels(est, truth))
    err = fit.param_error(est, truth, templates, n=None if templates is not None else 1)
    tailmc.write_csv(args.out, ["parameter", "error"], [[k, float(v)] for k, v in err.rows()])
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: BGADJ_THREADS or 1)")
    p = _Parser(prog="bgadj", description="Mixture background adjustment for voxelwise testing.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="draw a synthetic phantom")
    s.add_argument("--scenario", choices=["A", "B"], default="A")
    s.add_argument("--dims", default="320,256")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--params", default=None, help="parameter file (default: built-in phantom)")
    s.add_argument("--templates", default="synthetic")
    s.add_argument("--lesion", default=None, metavar="CX,CY,R")
    s.add_argument("--out", required=True, metavar="PREFIX")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="estimate mixture parameters")
    s.add_argument("--method", choices=["gmm", "sgmm", "rb-sgmm"], default="rb-sgmm")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--templates", default=None)
    s.add_argument("--K", type=int, default=3, help="components when no templates are given")
    s.add_argument("--tol", type=float, default=1e-5)
    s.add_argument("--max-iter", type=int, default=1000)
    s.add_argument("--huber-q", type=float, default=0.99)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--log", default=None, help="JSON-lines log (default: OUT.log.jsonl)")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("standardize", parents=[common], help="standardized scores and p-values")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--templates", default=None)
    s.add_argument("--transform", choices=["t1", "t2", "t3"], default="t1")
    s.add_argument("--assign", choices=["soft", "hard"], default="soft")
    s.add_argument("--contrast", default="-1,1")
    s.add_argument("--out", required=True, metavar="PREFIX")
    s.set_defaults(func=cmd_standardize)

    s = sub.add_parser("tail", parents=[common], help="relative-size heatmap")
    s.add_argument("--case", type=int, choices=[1, 2], default=1)
    s.add_argument("--rho", type=float, default=0.0)
    s.add_argument("--kappa2", type=float, default=1.0)
    s.add_argument("--alpha", type=float, default=0.001)
    s.add_argument("--tail", choices=list(tailmc.SIDES), default="two")
    s.add_argument("--grid", default="25x25", help="kappa1 x pi1 grid sizes")
    s.add_argument("--reps", type=int, default=100_000)
    s.add_argument("--method", choices=["t1", "t2", "t3"], default="t1")
    s.add_argument("--assign", choices=["soft", "hard"], default="soft")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tail)

    s = sub.add_parser("cdf", parents=[common], help="exact and simulated CDF of the hard score (p = 1)")
    s.add_argument("--tau", type=float, required=True)
    s.add_argument("--delta1", type=float, required=True)
    s.add_argument("--pi0", type=float, required=True)
    s.add_argument("--t", default="-4:4:0.2", metavar="LO:HI:STEP",
                   help="t grid; write --t=-2:2:0.5 when LO is negative")
    s.add_argument("--reps", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cdf)

    s = sub.add_parser("eval", parents=[common], help="parameter error table")
    s.add_argument("--est", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--templates", default=None)
    s.add_argument("--match-labels", action="store_true",
                   help="permute estimated components to best match the truth")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = default_threads()
    try:
        return args.func(args)
    except (UsageError, DegenerateParametersError) as e:
        print(f"bgadj {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"bgadj {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateClusterError, NonFiniteLikelihoodError) as e:
        print(f"bgadj {args.command}: fit failed: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (BgadjError, ValueError) as e:
        print(f"bgadj {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
