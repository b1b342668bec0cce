"""Time the compiled kernels against their numpy twins on phantom-sized data.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from bgadj import _accel, kernels, synth
from bgadj.mixture import assign
from bgadj.spdcore import huber_k1


def _best(func, repeat):
    func()  # warm up (and compile)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    spec = synth.ScenarioSpec("B", seed=1)
    obs, truth = synth.generate(spec)
    model = truth.model
    b = spec.templates.values
    inv_sqrts, logdets, _ = kernels.whiten_params(model.covs)
    with np.errstate(divide="ignore"):
        logpi = np.log(model.mixing(spec.templates))
    w, _ = kernels.responsibilities(kernels.component_logpdf(obs, model.means, inv_sqrts, logdets), logpi)
    hard = assign(w, "hard")
    k1 = huber_k1(2)
    return {
        "logpdf": lambda: kernels.component_logpdf(obs, model.means, inv_sqrts, logdets),
        "responsibilities": lambda: kernels.responsibilities(
            kernels.component_logpdf(obs, model.means, inv_sqrts, logdets), logpi),
        "mstep robust": lambda: kernels.mstep(obs, w, model.means, inv_sqrts, True, k1),
        "standardize T1 soft": lambda: kernels.standardize(obs, w, model.means, model.covs, inv_sqrts, "T1"),
        "standardize T3 soft": lambda: kernels.standardize(obs, w, model.means, model.covs, inv_sqrts, "T3"),
        "standardize hard": lambda: kernels.standardize(obs, hard, model.means, model.covs, inv_sqrts, "T1"),
        "em rb-sgmm (20 it)": lambda: kernels.em(obs, b, True, np.full(3, 1 / 3), model.means,
                                                 model.covs, True, k1, 1e-12, 20),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        print("numba not installed; nothing to compare")
        return
    table = cases()
    print(f"{'kernel':<22}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, func in table.items():
        with _accel.use_backend("numba"):
            t_nb = _best(func, args.repeat)
        with _accel.use_backend("numpy"):
            t_np = _best(func, args.repeat)
        print(f"{name:<22}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
