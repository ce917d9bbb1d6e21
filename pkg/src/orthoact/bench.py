"""Wall-clock micro-benchmarks for activation evaluation.

Timings go through the same ``eval`` code the library uses everywhere else;
the explicit Hermite path is selected with ``HermiteActivation(path="explicit")``.
"""

import csv
import io
import os
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .activations import (
    ClassicalActivation,
    HermiteActivation,
    TropicalActivation,
    TropicalRationalActivation,
)
from .gains import init_theorem

CSV_COLUMNS = ("family", "degree", "path", "batch", "ns_per_eval", "claimed_flops")
MIN_REPETITIONS = 10
# relative spread (IQR / median) above which a timing is flagged
HIGH_VARIANCE = 0.25
# runs shorter than this are dominated by timer and call overhead
MIN_RELIABLE_NS = 50_000


def hardware_info():
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpus": os.cpu_count(),
    }


@dataclass
class BenchResult:
    family: str
    degree: object
    path: str
    batch: int
    ns_per_eval: float
    claimed_flops: int
    repetitions: int
    high_variance: bool = False
    dtype: str = "float64"
    workers: int = 1
    hardware: dict = field(default_factory=hardware_info)

    def to_dict(self):
        return asdict(self)

    def csv_row(self):
        degree = "/".join(map(str, self.degree)) if isinstance(self.degree, tuple) else self.degree
        return [self.family, degree, self.path, self.batch,
                f"{self.ns_per_eval:.6g}", self.claimed_flops]


def bench_activation(family, degree, path="recursive"):
    """Theorem-initialized activation of the requested family."""
    family = family.lower()
    if family in ("relu", "gelu", "silu"):
        return ClassicalActivation(family)
    if family == "hermite":
        return HermiteActivation(degree, init_theorem("hermite", degree).a, path=path)
    if family == "tropical_rational":
        return TropicalRationalActivation(
            TropicalActivation(degree, np.ones(degree + 1)),
            TropicalActivation(degree, np.zeros(degree + 1)),
        )
    return init_theorem(family, degree)


def _time_once(activation, x, workers):
    if workers == 1:
        start = time.perf_counter_ns()
        activation.eval(x)
        return time.perf_counter_ns() - start
    chunks = np.array_split(x, workers)
    with ThreadPoolExecutor(workers) as pool:
        start = time.perf_counter_ns()
        list(pool.map(activation.eval, chunks))
        return time.perf_counter_ns() - start


def run_bench(family, degree, batch=10_000, repetitions=MIN_REPETITIONS, path=None, seed=0,
              dtype="float64", workers=1, warmup=2):
    """Median nanoseconds per scalar evaluation over ``repetitions`` timed runs.

    Inputs are a fixed standard-normal batch determined by ``(seed, degree)``.
    ``path`` applies to Hermite only (``"recursive"`` or ``"explicit"``) and is
    reported as ``"n/a"`` for the other families. ``dtype="float32"`` feeds
    single-precision inputs, which only the Hermite path keeps end to end.
    """
    batch = int(batch)
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    repetitions = int(repetitions)
    if repetitions < MIN_REPETITIONS:
        raise ValueError(f"repetitions must be >= {MIN_REPETITIONS}, got {repetitions}")
    workers = max(1, int(workers))
    family = family.lower()
    if family == "hermite":
        path = path or "recursive"
    else:
        path = "n/a"
    activation = bench_activation(family, degree, path if family == "hermite" else None)

    degree_key = sum(degree) if isinstance(degree, tuple) else (degree or 0)
    rng = np.random.default_rng([int(seed), int(degree_key)])
    x = rng.standard_normal(batch).astype(np.dtype(dtype))

    for _ in range(warmup):
        activation.eval(x)
    times = [_time_once(activation, x, workers) for _ in range(repetitions)]
    median = statistics.median(times)
    q1, _, q3 = statistics.quantiles(times, n=4)
    return BenchResult(
        family=family,
        degree=activation.degree,
        path=path,
        batch=batch,
        ns_per_eval=max(median, 1) / batch,
        claimed_flops=activation.flops_per_eval(),
        repetitions=repetitions,
        high_variance=bool(median < MIN_RELIABLE_NS or (q3 - q1) / median > HIGH_VARIANCE),
        dtype=np.dtype(dtype).name,
        workers=workers,
    )


def to_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        writer.writerow(r.csv_row())
    return buf.getvalue()
