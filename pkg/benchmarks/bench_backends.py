"""Compare the compiled SGD kernel with the NumPy fallback.

    python benchmarks/bench_backends.py [--repeat N]

Times local training on one participant shard of the default grid and one
full federation run (10 rounds, 4 users, exact Shapley scoring).
"""

import argparse
import timeit

from fedcontrib import _backend
from fedcontrib.contribution import measure
from fedcontrib.core_ml import ModelParams, TrainConfig, train_local
from fedcontrib.experiments import ExperimentGrid, build_federation
from fedcontrib.protocol import run_federation


def bench(stmt, repeat):
    return min(timeit.repeat(stmt, number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    grid = ExperimentGrid()
    fed = build_federation(grid, 1, 1.0, seed=1)
    shard = fed.participants[1].data
    init = ModelParams.zeros(grid.num_classes, grid.dim)
    cfg = TrainConfig(grid.learning_rate, grid.local_epochs, grid.batch_size, seed=3)

    print(f"default backend: {_backend.BACKEND}")
    print(f"{'backend':<8} {'train_local (ms)':>18} {'federation+shapley (ms)':>25}")
    results = {}
    for name in _backend.available_backends():
        t_train = bench(lambda: train_local(shard, init, cfg, backend=name), args.repeat)
        t_fed = bench(lambda: measure(run_federation(fed, backend=name), "shapley_exact",
                                      fed.test_set), max(1, args.repeat // 2))
        results[name] = (t_train, t_fed)
        print(f"{name:<8} {t_train * 1e3:>18.2f} {t_fed * 1e3:>25.1f}")
    if len(results) == 2:
        (pt, pf), (ct, cf) = results["python"], results["cython"]
        print(f"speedup: train_local x{pt / ct:.1f}, federation x{pf / cf:.1f}")


if __name__ == "__main__":
    main()
