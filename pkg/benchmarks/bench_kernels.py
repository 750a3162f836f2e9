"""Compare the compiled and pure-Python MCS kernels.

    python3 benchmarks/bench_kernels.py [--pairs 200] [--repeat 3]

Both backends run the same candidate tables, so the timings isolate the
search itself; scoring candidate pairs is excluded.
"""

import argparse
import json
import time

import numpy as np

from stepconf import kernels
from stepconf.gibs import random_graph
from stepconf.mcs import McsParams, _encode, _num_nodes, _rank_matrix, _score_pairs
from stepconf.similarity import JaccardSimilarity
from stepconf.synth import SynthConfig, synth_corpus


def _random_tables(n_pairs, max_steps, seed):
    rng = np.random.default_rng(seed)
    params = McsParams(tau_e=0.3, tau_v=0.3, entailment=JaccardSimilarity())
    return [_table(random_graph(rng, max_steps), random_graph(rng, max_steps), params)
            for _ in range(n_pairs)]


def _synth_tables(n_questions, seed):
    sets = synth_corpus(SynthConfig(num_questions=n_questions, anchors_per_question=8, rng_seed=seed))
    params = McsParams()
    out = []
    for ts in sets:
        trajs = ts.trajectories
        for a, b in zip(trajs, trajs[1:]):
            out.append(_table(a.graph, b.graph, params))
    return out


def _table(g1, g2, params):
    scored = _score_pairs(g1, g2, params)
    src1, tgt1 = _encode(scored.edges1)
    src2, tgt2 = _encode(scored.edges2)
    seeds = [(c.e1, c.e2) for c in scored.candidates[: params.k]]
    return (src1, tgt1, src2, tgt2, _num_nodes(g1), _num_nodes(g2), _rank_matrix(scored), seeds)


def _time(fn, tables, repeat):
    best = float("inf")
    results = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        results = [fn(t) for t in tables]
        best = min(best, time.perf_counter() - t0)
    return best, results


def run(pairs=200, repeat=3, seed=0):
    workloads = {
        "expand/synth": (_synth_tables(max(1, pairs // 19), seed), "expand"),
        "expand/random": (_random_tables(pairs, 8, seed), "expand"),
        "exact/random": (_random_tables(pairs, 5, seed + 1), "exact"),
    }
    rows = []
    for name, (tables, kind) in workloads.items():
        timings = {}
        outputs = {}
        for backend in kernels.available_backends():
            impl = kernels.load_backend(backend)
            if kind == "expand":
                fn = lambda t, impl=impl: impl.mcs_expand(*t)
            else:
                fn = lambda t, impl=impl: impl.mcs_exact(*t[:7])
            timings[backend], outputs[backend] = _time(fn, tables, repeat)
        agree = len({json.dumps(v) for v in outputs.values()}) == 1
        row = {"workload": name, "calls": len(tables), "agree": agree}
        row.update({f"{b}_s": round(t, 6) for b, t in timings.items()})
        if "cython" in timings and timings["cython"] > 0:
            row["speedup"] = round(timings["python"] / timings["cython"], 2)
        rows.append(row)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for row in run(args.pairs, args.repeat, args.seed):
        print(json.dumps(row, sort_keys=True))


if __name__ == "__main__":
    main()
