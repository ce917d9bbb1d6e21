"""Second moments, forward/backward gains and theorem initializers.

Gains follow the unit-variance convention used by the initialization
theorems: ``alpha = 1 / E[F(x)^2]`` and ``alpha' = 1 / E[F'(x)^2]``, i.e. the
input variance is normalized to one. ``GainReport.input_variance`` records the
actual variance of the sampling distribution for callers who want the raw
``Var[x] / E[F^2]`` ratio.

Closed forms exist for Hermite activations under N(0, 1), for Fourier
activations with distinct positive integer frequencies under
U(-pi/w, pi/w) (``w`` the fundamental scale) and for ReLU. Everything else is
Monte-Carlo only.
"""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy import special

from . import rng
from .activations import (
    ClassicalActivation,
    FourierActivation,
    HermiteActivation,
    TropicalActivation,
)
from .errors import DegenerateActivation, UnsupportedFamily

MIN_SAMPLES = 10_000

TROPICAL_NOTE = (
    "Monte-Carlo only; unit gain is an n -> infinity limit. For a_k = 1 the "
    "activation equals sqrt(2)*max(0, x) + sqrt(2)/n, so the finite-n forward "
    "gain sits below 1 by roughly 4*phi(0)/n."
)


class InputDist(str, Enum):
    NORMAL = "normal"
    UNIFORM_PI = "uniform_pi"
    UNIFORM_SQRT3 = "uniform_sqrt3"

    @property
    def variance(self):
        return {"normal": 1.0, "uniform_pi": math.pi ** 2 / 3, "uniform_sqrt3": 1.0}[self.value]

    @property
    def half_width(self):
        return {"uniform_pi": math.pi, "uniform_sqrt3": math.sqrt(3.0)}.get(self.value)

    def sample(self, seed, block, size):
        if self is InputDist.NORMAL:
            return rng.box_muller(seed, block, size)
        h = self.half_width
        return rng.uniform(seed, block, size, -h, h)


def _dist(value):
    try:
        return InputDist(value)
    except ValueError:
        aliases = {"stdnormal": "normal", "uniform(-pi,pi)": "uniform_pi",
                   "uniform(-sqrt3,sqrt3)": "uniform_sqrt3"}
        return InputDist(aliases.get(str(value).lower(), str(value).lower()))


def _fourier_orthogonal(act):
    f = act.f
    return bool(np.all(f > 0) and np.all(f == np.round(f)) and len(np.unique(f)) == len(f))


def natural_distribution(activation):
    """The input distribution under which the closed-form moments hold."""
    if isinstance(activation, HermiteActivation):
        return InputDist.NORMAL
    if isinstance(activation, ClassicalActivation) and activation.kind == "relu":
        return InputDist.NORMAL
    if isinstance(activation, FourierActivation):
        w = activation.fundamental_scale
        if w == 1.0:
            return InputDist.UNIFORM_PI
        if math.isclose(w, math.pi / math.sqrt(3.0), rel_tol=1e-15):
            return InputDist.UNIFORM_SQRT3
    raise UnsupportedFamily(f"no closed-form second moment for {_name(activation)}")


def _name(activation):
    return f"{activation.family} activation"


def analytic_second_moment(activation):
    """Closed-form ``(E[F^2], E[F'^2])`` under the activation's natural input law."""
    if isinstance(activation, HermiteActivation):
        a2 = activation.a ** 2
        inv_fact = np.array([1.0 / math.factorial(k) for k in range(activation.degree + 1)])
        forward = math.fsum(a2 * inv_fact)
        backward = math.fsum(a2[1:] * inv_fact[:-1])
        return forward, backward
    if isinstance(activation, FourierActivation):
        natural_distribution(activation)
        if not _fourier_orthogonal(activation):
            raise UnsupportedFamily("Fourier closed form needs distinct positive integer frequencies")
        inv_fact = np.array([1.0 / math.factorial(k) for k in range(1, activation.degree + 1)])
        # each sqrt(2) a cos(.) term has mean square a^2
        terms = (activation.a * inv_fact) ** 2
        w = activation.fundamental_scale
        forward = activation.a0[0] ** 2 + math.fsum(terms)
        backward = w * w * math.fsum(terms * activation.f ** 2)
        return float(forward), float(backward)
    if isinstance(activation, ClassicalActivation) and activation.kind == "relu":
        return 0.5, 0.5
    raise UnsupportedFamily(f"no closed-form second moment for {_name(activation)}")


def analytic_gains(activation, input_dist=None):
    """Closed-form ``(alpha, alpha')``; ``input_dist`` must match the activation's law."""
    natural = natural_distribution(activation)
    if input_dist is not None and _dist(input_dist) is not natural:
        raise UnsupportedFamily(
            f"closed form for {_name(activation)} holds under {natural.value}, "
            f"not {_dist(input_dist).value}"
        )
    forward, backward = analytic_second_moment(activation)
    if forward == 0.0 or backward == 0.0:
        raise DegenerateActivation(
            f"zero second moment (E[F^2]={forward}, E[F'^2]={backward}); gain is infinite"
        )
    return 1.0 / forward, 1.0 / backward


@dataclass
class GainReport:
    family: str
    degree: object
    input_dist: str
    input_variance: float
    samples: int
    seed: int
    mc_second_moment: float
    mc_deriv_second_moment: float
    mc_forward: float
    mc_backward: float
    cv_forward: float
    cv_backward: float
    analytic_forward: float = None
    analytic_backward: float = None
    rel_err_forward: float = None
    rel_err_backward: float = None
    nonfinite: int = 0
    note: str = ""

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    try:
        return max(1, int(os.environ.get("ORTHOACT_THREADS", "1")))
    except ValueError:
        return 1


def _block_moments(activation, dist, seed, block, size):
    x = dist.sample(seed, block, size)
    f = np.asarray(activation.eval(x))
    d = np.asarray(activation.deriv(x))
    ok = np.isfinite(f) & np.isfinite(d)
    f, d = f[ok], d[ok]
    f2, d2 = f * f, d * d
    return (int(ok.sum()), math.fsum(f2), math.fsum(d2), math.fsum(f2 * f2), math.fsum(d2 * d2))


def monte_carlo_gains(activation, input_dist="normal", samples=1_000_000, seed=0, workers=None):
    """Estimate the gains by sampling ``samples`` inputs from ``input_dist``.

    Samples are drawn in fixed counter blocks keyed by ``(seed, block)`` and
    the per-block sums are merged with ``math.fsum`` in block order, so the
    report does not depend on the number of workers.
    """
    samples = int(samples)
    if samples < MIN_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_SAMPLES}, got {samples}")
    dist = _dist(input_dist)
    sizes = rng.block_sizes(samples)
    jobs = [(activation, dist, seed, b, s) for b, s in enumerate(sizes)]
    n_workers = min(_worker_count(workers), len(jobs))
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            parts = list(pool.map(lambda j: _block_moments(*j), jobs))
    else:
        parts = [_block_moments(*j) for j in jobs]

    count = sum(p[0] for p in parts)
    if count == 0:
        raise DegenerateActivation("every Monte-Carlo sample was non-finite")
    m_f = math.fsum(p[1] for p in parts) / count
    m_d = math.fsum(p[2] for p in parts) / count
    q_f = math.fsum(p[3] for p in parts) / count
    q_d = math.fsum(p[4] for p in parts) / count

    def cv(m, q):
        return math.sqrt(max(q - m * m, 0.0)) / m if m > 0 else math.inf

    report = GainReport(
        family=activation.family,
        degree=activation.degree,
        input_dist=dist.value,
        input_variance=dist.variance,
        samples=samples,
        seed=int(seed),
        mc_second_moment=m_f,
        mc_deriv_second_moment=m_d,
        mc_forward=1.0 / m_f if m_f > 0 else math.inf,
        mc_backward=1.0 / m_d if m_d > 0 else math.inf,
        cv_forward=cv(m_f, q_f),
        cv_backward=cv(m_d, q_d),
        nonfinite=samples - count,
    )
    try:
        a_f, a_b = analytic_gains(activation, dist)
    except (UnsupportedFamily, DegenerateActivation):
        pass
    else:
        report.analytic_forward = a_f
        report.analytic_backward = a_b
        report.rel_err_forward = abs(report.mc_forward - a_f) / a_f
        report.rel_err_backward = abs(report.mc_backward - a_b) / a_b
    if isinstance(activation, TropicalActivation):
        report.note = TROPICAL_NOTE
    if report.nonfinite:
        report.note = (report.note + " " if report.note else "") + (
            f"{report.nonfinite} non-finite samples excluded")
    return report


def init_theorem(family, degree, unit_gain=False, fundamental_scale=1.0, learn_frequencies=True):
    """Variance-preserving initialization with equal forward and backward gains.

    * Hermite: ``a_k = 1`` for ``k >= 1`` and ``a_0 = sqrt(1 - 1/n!)``.
    * Fourier: amplitudes ``a_k = 1``, ``a_0 = sqrt(1 - 1/(n!)^2)``, frequencies
      ``f_k = k`` and phases ``pi/4``.
    * Tropical: ``a_k = 1`` for ``k = 0..n`` with scale ``sqrt(2)/n``.

    ``unit_gain`` divides the Hermite coefficients by ``sqrt(e)`` and the
    Fourier ones by ``sqrt(I0(2))`` so that the gains tend to one as n grows.
    It has no effect on tropical activations, whose scale already targets
    unit gain.
    """
    family = family.lower()
    n = int(degree)
    if family == "hermite":
        if n < 0:
            raise ValueError(f"degree must be >= 0, got {n}")
        a = np.ones(n + 1)
        a[0] = math.sqrt(1.0 - 1.0 / math.factorial(n))
        if unit_gain:
            a /= math.sqrt(math.e)
        return HermiteActivation(n, a)
    if n < 1:
        raise ValueError(f"{family} initialization needs degree >= 1, got {n}")
    if family == "fourier":
        a = np.ones(n)
        a0 = math.sqrt(1.0 - 1.0 / math.factorial(n) ** 2)
        if unit_gain:
            c = math.sqrt(special.i0(2.0))
            a /= c
            a0 /= c
        return FourierActivation(n, a0, a, fundamental_scale=fundamental_scale,
                                 learn_frequencies=learn_frequencies)
    if family == "tropical":
        return TropicalActivation(n, np.ones(n + 1))
    raise UnsupportedFamily(f"no theorem initialization for {family!r}")


def he_style_weight_std(fan_in, gain):
    """Weight standard deviation ``sqrt(gain / fan_in)``."""
    if int(fan_in) < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    if not gain > 0:
        raise ValueError(f"gain must be > 0, got {gain}")
    return math.sqrt(gain / fan_in)


def init_gain(activation, samples=100_000, seed=0):
    """Forward gain used to scale the weights feeding ``activation``.

    Closed form where available, otherwise a Monte-Carlo estimate under
    standard-normal inputs.
    """
    try:
        return analytic_gains(activation)[0]
    except UnsupportedFamily:
        return monte_carlo_gains(activation, InputDist.NORMAL, samples, seed).mc_forward
