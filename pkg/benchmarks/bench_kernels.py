"""Wall-clock comparison of the compiled and pure-Python kernels.

Runs the particle, diffusion and dual engines on the reference torus with
each available backend, reports the largest difference between their outputs,
and prints replicates per second and the speedup.

    python benchmarks/bench_kernels.py [--reps-particle N] [--reps-diffusion N] [--reps-dual N]
"""
import argparse
import time

import numpy as np

from selfreg.backend import available_backends
from selfreg.diffusion_engine import run_diffusion
from selfreg.dual_engine import run_dual
from selfreg.experiments import reference_scenario
from selfreg.particle_engine import init_particles, run_particles


def workloads(args):
    sc = reference_scenario(t=0.5)
    alpha0, kappa0 = sc.dual_start()
    state = init_particles(sc.geo, sc.params, sc.x0, 0.25)

    def particle(backend):
        tr = run_particles(state, sc.geo, sc.params, sc.t, [0.0, sc.t], 1,
                           replicates=args.reps_particle, backend=backend)
        return tr.counts

    def diffusion(backend):
        tr = run_diffusion(sc.x0, sc.geo, sc.params, [0.0, sc.t], 1, dt=1e-3,
                           replicates=args.reps_diffusion, backend=backend)
        return tr.x

    def dual(backend):
        tr = run_dual(alpha0, kappa0, sc.geo, sc.params, [sc.t], 1, dt=1e-3,
                      replicates=args.reps_dual, backend=backend)
        return tr.alpha

    return {"particle (eps=0.25)": (particle, args.reps_particle),
            "diffusion (dt=1e-3)": (diffusion, args.reps_diffusion),
            "dual (dt=1e-3)": (dual, args.reps_dual)}


def timed(fn, backend):
    start = time.perf_counter()
    out = fn(backend)
    return time.perf_counter() - start, out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--reps-particle", type=int, default=200)
    p.add_argument("--reps-diffusion", type=int, default=200)
    p.add_argument("--reps-dual", type=int, default=200)
    args = p.parse_args()
    backends = available_backends()
    if "cython" not in backends:
        print("compiled core not built; only the Python fallback is timed")
    print(f"{'kernel':<22}{'backend':<10}{'seconds':>10}{'reps/s':>12}{'speedup':>10}")
    for name, (fn, reps) in workloads(args).items():
        results = {b: timed(fn, b) for b in backends}
        base = results["python"][0]
        for b, (sec, _) in results.items():
            print(f"{name:<22}{b:<10}{sec:>10.3f}{reps / sec:>12.1f}{base / sec:>10.1f}")
        if len(results) == 2:
            gap = float(np.max(np.abs(results["cython"][1] - results["python"][1])))
            print(f"{'':<22}max |cython - python| = {gap:.2e}")


if __name__ == "__main__":
    main()
