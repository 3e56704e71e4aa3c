"""Compare the compiled and pure-Python kernels on rollout and Q-sweep workloads.

    python benchmarks/bench_kernels.py --repeats 5

Both backends receive identical inputs; the script checks that their outputs
agree before reporting timings.
"""
import argparse
import statistics
import time

import numpy as np

from soarl import kernels
from soarl.annotator import MockBackend
from soarl.constraints import GuardedEnv, build_limitation_set
from soarl.officeworld import bundled_map, entity_registry, task


def rollout_workload(backend, episodes, seed):
    grid = bundled_map("office_world_B")
    lim = build_limitation_set("plants and printers", MockBackend(), entity_registry(grid))
    env = GuardedEnv(grid, task(3), lim, backend=backend)
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(grid.n_cells, 4))
    steps, total = 0, 0.0
    for _ in range(episodes):
        env.reset(rng)
        while not env.done:
            ro = env.rollout(q, 100, 1, 0b1111, 0.3, rng)
            steps += ro.steps
            total += ro.total_reward
    return steps, total


def sweep_workload(backend, n, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(108, 4))
    keys = rng.integers(0, 108, n)
    actions = rng.integers(0, 4, n)
    rewards = rng.normal(size=n)
    next_keys = rng.integers(0, 108, n)
    terminals = (rng.random(n) < 0.05).astype(np.uint8)
    kernels.get(backend).q_sweep(q, keys, actions, rewards, next_keys, terminals, n, 0.1, 0.95)
    return n, float(q.sum())


def timed(fn, repeats):
    out, times = None, []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--episodes", type=int, default=200, help="rollout episodes per repeat")
    p.add_argument("--updates", type=int, default=200_000, help="Q updates per sweep repeat")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = kernels.available()
    if "compiled" not in backends:
        print("compiled extension not built; timing the Python kernels only")
    workloads = {
        "rollout": (lambda b: rollout_workload(b, args.episodes, args.seed), "steps"),
        "q_sweep": (lambda b: sweep_workload(b, args.updates, args.seed), "updates"),
    }
    print(f"{'workload':<10} {'backend':<9} {'median s':>10} {'units/s':>14}")
    for name, (fn, unit) in workloads.items():
        results = {}
        for b in backends:
            (count, check), secs = timed(lambda: fn(b), args.repeats)
            results[b] = (count, check, secs)
            print(f"{name:<10} {b:<9} {secs:>10.4f} {count / secs:>12.0f} {unit}")
        if len(results) == 2:
            (c1, k1, s1), (c2, k2, s2) = results["python"], results["compiled"]
            if (c1, k1) != (c2, k2):
                raise SystemExit(f"{name}: backends disagree ({c1}, {k1}) vs ({c2}, {k2})")
            print(f"{name:<10} speedup {s1 / s2:.1f}x (outputs identical)")


if __name__ == "__main__":
    main()
