"""Wall-clock comparison of the sequential LIF loop against the fixed-point solver."""

from __future__ import annotations

import csv
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .forward import FixedPointConfig, fpt_forward
from .kernels import make_decay_operator
from .lif import LifParams, sequential_lif

SEQUENTIAL = "sequential"
FPT_DENSE = "fpt_dense"
FPT_PARALLEL = "fpt_parallel"
BENCH_ENGINES = (SEQUENTIAL, FPT_DENSE, FPT_PARALLEL)
BENCH_COLUMNS = ("engine", "t", "batch", "wall_seconds", "speedup")

THREADS_ENV = "FPTSNN_THREADS"


def default_threads() -> int:
    value = os.environ.get(THREADS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def hardware_threads() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class BenchRecord:
    engine: str
    t: int
    batch: int
    wall_seconds: float
    speedup_vs_sequential: float
    threads: int = 1

    def row(self):
        return (self.engine, self.t, self.batch, self.wall_seconds, self.speedup_vs_sequential)


class ParallelFPT:
    """Fixed-point forward pass with rows split over a thread pool.

    Uses the recurrence kernel; one chunk per worker along the flattened
    ``batch x neurons`` axis, so results do not depend on the worker count.
    """

    def __init__(self, t: int, params: LifParams, cfg: FixedPointConfig, threads: int = 1,
                 kernel: str = "recurrence"):
        self.params = params
        self.cfg = cfg
        self.op = make_decay_operator(t, params.lam, kernel)
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def _solve(self, rows):
        return fpt_forward(rows, self.params, self.cfg, op=self.op).s_star

    def __call__(self, c):
        flat = np.reshape(c, (-1, c.shape[-1]))
        if self._pool is None:
            return self._solve(flat).reshape(c.shape)
        chunks = np.array_split(flat, self.threads)
        return np.concatenate(list(self._pool.map(self._solve, chunks))).reshape(c.shape)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def _median_seconds(fn, reps: int, min_time: float = 2e-3) -> float:
    fn()  # warm-up, not recorded
    number = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        if time.perf_counter() - t0 >= min_time or number >= 1 << 16:
            break
        number *= 2
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        samples.append((time.perf_counter() - t0) / number)
    return float(np.median(samples))


def run_benchmark(t_values=(8, 64, 512), batch: int = 4, neurons: int = 4, reps: int = 7,
                  threads: int = 1, params: LifParams = None, cfg: FixedPointConfig = None,
                  seed: int = 0, engines=BENCH_ENGINES) -> list:
    """Time each engine on identical standard-normal workloads; one record per (engine, T)."""
    if reps < 5:
        raise ValueError("use at least 5 repetitions for a stable median")
    params = params or LifParams(0.25, 1.0)
    cfg = cfg or FixedPointConfig()
    rng = np.random.default_rng(seed)
    records = []
    for t in t_values:
        c = rng.standard_normal((batch, neurons, int(t)))
        timings = {}
        for engine in engines:
            if engine == SEQUENTIAL:
                fn = lambda: sequential_lif(c, params)
            elif engine == FPT_DENSE:
                op = make_decay_operator(int(t), params.lam, "dense")
                fn = lambda op=op: fpt_forward(c, params, cfg, op=op)
            elif engine == FPT_PARALLEL:
                solver = ParallelFPT(int(t), params, cfg, threads)
                fn = lambda solver=solver: solver(c)
            else:
                raise ValueError(f"unknown engine {engine!r}")
            timings[engine] = _median_seconds(fn, reps)
            if engine == FPT_PARALLEL:
                solver.close()
        base = timings.get(SEQUENTIAL)
        for engine, seconds in timings.items():
            speedup = base / seconds if base is not None else float("nan")
            records.append(BenchRecord(engine, int(t), batch, seconds, speedup,
                                       threads if engine == FPT_PARALLEL else 1))
    return records


def environment_tag(threads: int) -> dict:
    return {"machine": platform.machine(), "processor": platform.processor(),
            "python": platform.python_version(), "numpy": np.__version__,
            "hardware_threads": hardware_threads(), "threads": threads}


def write_bench_csv(records, path_or_file):
    def _write(f):
        writer = csv.writer(f)
        writer.writerow(BENCH_COLUMNS)
        for r in records:
            writer.writerow([r.engine, r.t, r.batch, repr(r.wall_seconds),
                             repr(r.speedup_vs_sequential)])
    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as f:
            _write(f)
