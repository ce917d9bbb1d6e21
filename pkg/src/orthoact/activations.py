"""Learnable activation families and classical reference activations.

Every activation evaluates elementwise on numpy arrays (scalars included) and
exposes three contracts:

``eval(x)``
    the activation value ``F(x)``;
``deriv(x)``
    the input derivative ``F'(x)`` (a subgradient for tropical families);
``param_grad(x)``
    a dict mapping each learnable parameter name to ``dF/dparam`` with shape
    ``np.shape(x) + param.shape``.

Learnable parameters are plain float64 arrays returned by ``params()``; the
training loop updates them in place.
"""

import json
import math

import numpy as np
from scipy import special

from .basis import _as_float, build_hermite_table, hermite_explicit, hermite_recursive, iter_hermite

SQRT2 = math.sqrt(2.0)

FAMILIES = ("hermite", "fourier", "tropical", "tropical_rational", "relu", "gelu", "silu")


def _inv_factorials(n):
    return np.array([1.0 / math.factorial(k) for k in range(n + 1)])


def _vec(values, length, name):
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.shape != (length,):
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _float_dtype(x):
    return _as_float(x).dtype


def _unwrap(out):
    return out[()] if out.ndim == 0 else out


class Activation:
    """Common interface. Subclasses define the family formulas."""

    family = None

    def eval(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def param_grad(self, x):
        return {}

    def deriv_and_param_grad(self, x):
        """``(deriv(x), param_grad(x))`` in one call; families may share work."""
        return self.deriv(x), self.param_grad(x)

    def params(self):
        return {}

    def flops_per_eval(self):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def __call__(self, x):
        return self.eval(x)

    def copy(self):
        return activation_from_dict(self.to_dict())

    def num_params(self):
        return sum(p.size for p in self.params().values())


class HermiteActivation(Activation):
    """``F(x) = sum_k a_k He_k(x) / k!`` for ``k = 0..degree``.

    ``path`` selects the basis evaluation: ``"recursive"`` (default, O(d)) or
    ``"explicit"`` (monomial table, O(d^2)).
    """

    family = "hermite"

    def __init__(self, degree, a, path="recursive"):
        degree = int(degree)
        if degree < 0:
            raise ValueError(f"degree must be >= 0, got {degree}")
        if path not in ("recursive", "explicit"):
            raise ValueError(f"unknown evaluation path {path!r}")
        self.degree = degree
        self.a = _vec(a, degree + 1, "a")
        self.path = path
        self._inv_fact = _inv_factorials(degree)
        self._table = build_hermite_table(degree) if path == "explicit" else None

    def normalized_basis(self, x):
        """``He_k(x) / k!`` for every k, shape ``np.shape(x) + (degree + 1,)``."""
        if self.path == "explicit":
            return hermite_explicit(x, self._table)
        he = hermite_recursive(x, self.degree)
        return he * self._inv_fact.astype(he.dtype)

    def eval(self, x):
        x = np.asarray(x)
        if self.path == "explicit":
            basis = hermite_explicit(x, self._table)
            out = np.zeros(basis.shape[:-1], dtype=basis.dtype)
            for k in range(self.degree + 1):
                out = out + basis.dtype.type(self.a[k]) * basis[..., k]
            return _unwrap(out)
        out = None
        for k, he in enumerate(iter_hermite(x, self.degree)):
            term = he.dtype.type(self.a[k] * self._inv_fact[k]) * he
            out = term if out is None else out + term
        return _unwrap(out)

    def deriv(self, x):
        x = np.asarray(x)
        if self.path == "explicit":
            basis = hermite_explicit(x, self._table)
            out = np.zeros(basis.shape[:-1], dtype=basis.dtype)
            for k in range(1, self.degree + 1):
                out = out + basis.dtype.type(self.a[k]) * basis[..., k - 1]
            return _unwrap(out)
        out = None
        for k, he in enumerate(iter_hermite(x, max(self.degree - 1, 0)), start=1):
            if k > self.degree:
                break
            term = he.dtype.type(self.a[k] * self._inv_fact[k - 1]) * he
            out = term if out is None else out + term
        if out is None:
            out = np.zeros(np.shape(x), dtype=_float_dtype(x))
        return _unwrap(out)

    def param_grad(self, x):
        return {"a": hermite_recursive(x, self.degree) * self._inv_fact}

    def params(self):
        return {"a": self.a}

    def flops_per_eval(self):
        return 4 * self.degree + 1

    def to_dict(self):
        return {"family": self.family, "degree": self.degree, "a": self.a.tolist(), "path": self.path}


class FourierActivation(Activation):
    """Amplitude-phase Fourier activation.

    ``F(x) = a0 + sqrt(2) * sum_k a_k cos(f_k w x - phi_k) / k!`` for
    ``k = 1..degree``, where ``w`` is ``fundamental_scale``. With ``f_k = k``
    and ``phi_k = pi/4`` this is the sine-cosine series with equal cosine and
    sine coefficients.

    Frequencies and phases are learnable unless ``learn_frequencies`` is
    False, in which case they are excluded from ``params()``.
    """

    family = "fourier"

    def __init__(self, degree, a0, a, f=None, phi=None, fundamental_scale=1.0,
                 learn_frequencies=True):
        degree = int(degree)
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        self.degree = degree
        self.a0 = _vec([a0], 1, "a0")
        self.a = _vec(a, degree, "a")
        self.f = _vec(np.arange(1, degree + 1) if f is None else f, degree, "f")
        self.phi = _vec(np.full(degree, math.pi / 4) if phi is None else phi, degree, "phi")
        self.fundamental_scale = float(fundamental_scale)
        self.learn_frequencies = bool(learn_frequencies)
        self._inv_fact = _inv_factorials(degree)[1:]

    def _phase(self, x, k):
        return self.f[k] * self.fundamental_scale * x - self.phi[k]

    def eval(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape, self.a0[0])
        for k in range(self.degree):
            out = out + (SQRT2 * self.a[k] * self._inv_fact[k]) * np.cos(self._phase(x, k))
        return _unwrap(out)

    def deriv(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape)
        w = self.fundamental_scale
        for k in range(self.degree):
            out = out - (SQRT2 * self.a[k] * self.f[k] * w * self._inv_fact[k]) * np.sin(self._phase(x, k))
        return _unwrap(out)

    def param_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        theta = self.f * self.fundamental_scale * x[..., None] - self.phi
        c = SQRT2 * self._inv_fact
        sin = np.sin(theta)
        grads = {
            "a0": np.ones(x.shape + (1,)),
            "a": c * np.cos(theta),
        }
        if self.learn_frequencies:
            grads["f"] = -c * self.a * self.fundamental_scale * x[..., None] * sin
            grads["phi"] = c * self.a * sin
        return grads

    def deriv_and_param_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        w = self.fundamental_scale
        theta = self.f * w * x[..., None] - self.phi
        c = SQRT2 * self._inv_fact
        sin = np.sin(theta)
        weighted = c * self.a * sin
        deriv = -(weighted * (self.f * w)).sum(axis=-1)
        grads = {"a0": np.ones(x.shape + (1,)), "a": c * np.cos(theta)}
        if self.learn_frequencies:
            grads["f"] = -weighted * (w * x[..., None])
            grads["phi"] = weighted
        return deriv, grads

    def params(self):
        p = {"a0": self.a0, "a": self.a}
        if self.learn_frequencies:
            p["f"] = self.f
            p["phi"] = self.phi
        return p

    def sine_cosine_coefficients(self):
        """Equivalent ``(a0, cos_coeffs, sin_coeffs)`` of the sine-cosine form.

        Only meaningful when the frequencies are integers; ``sqrt(2) a cos(kx - phi)``
        expands to ``sqrt(2) a cos(phi) cos(kx) + sqrt(2) a sin(phi) sin(kx)``.
        """
        return (float(self.a0[0]), SQRT2 * self.a * np.cos(self.phi),
                SQRT2 * self.a * np.sin(self.phi))

    def flops_per_eval(self):
        return 7 * self.degree + 1

    def to_dict(self):
        return {
            "family": self.family,
            "degree": self.degree,
            "a0": float(self.a0[0]),
            "a": self.a.tolist(),
            "f": self.f.tolist(),
            "phi": self.phi.tolist(),
            "fundamental_scale": self.fundamental_scale,
            "learn_frequencies": self.learn_frequencies,
        }


def fourier_sine_cosine(x, a0, a, b, fundamental_scale=1.0):
    """``a0 + sum_k (a_k cos(k w x) + b_k sin(k w x)) / k!``, the sine-cosine series."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inv_fact = _inv_factorials(len(a))[1:]
    out = np.full(x.shape, float(a0))
    for k in range(len(a)):
        t = (k + 1) * fundamental_scale * x
        out = out + inv_fact[k] * (a[k] * np.cos(t) + b[k] * np.sin(t))
    return _unwrap(out)


class TropicalActivation(Activation):
    """Scaled max-plus polynomial ``F(x) = scale * max_k(a_k + p_k x)``.

    ``powers`` default to ``0..degree``; real-valued (including negative)
    powers are accepted. The subgradient at a breakpoint is taken from the
    highest-index maximal piece.
    """

    family = "tropical"

    def __init__(self, degree, a, scale=None, powers=None, learn_powers=False):
        degree = int(degree)
        if degree < 0:
            raise ValueError(f"degree must be >= 0, got {degree}")
        if scale is None:
            if degree < 1:
                raise ValueError("default scale sqrt(2)/n needs degree >= 1")
            scale = SQRT2 / degree
        self.degree = degree
        self.a = _vec(a, degree + 1, "a")
        self.powers = _vec(np.arange(degree + 1) if powers is None else powers, degree + 1, "powers")
        self.scale = float(scale)
        self.learn_powers = bool(learn_powers)

    def _argmax(self, x):
        best = self.a[0] + self.powers[0] * x
        idx = np.zeros(x.shape, dtype=np.intp)
        for k in range(1, self.degree + 1):
            z = self.a[k] + self.powers[k] * x
            take = z >= best
            best = np.where(take, z, best)
            idx = np.where(take, k, idx)
        return best, idx

    def eval(self, x):
        x = np.asarray(x, dtype=np.float64)
        best, _ = self._argmax(x)
        return _unwrap(self.scale * best)

    def deriv(self, x):
        x = np.asarray(x, dtype=np.float64)
        _, idx = self._argmax(x)
        return _unwrap(self.scale * self.powers[idx])

    def param_grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        _, idx = self._argmax(x)
        onehot = (idx[..., None] == np.arange(self.degree + 1)).astype(np.float64)
        grads = {"a": self.scale * onehot}
        if self.learn_powers:
            grads["powers"] = self.scale * x[..., None] * onehot
        return grads

    def params(self):
        p = {"a": self.a}
        if self.learn_powers:
            p["powers"] = self.powers
        return p

    def flops_per_eval(self):
        return 3 * self.degree + 1

    def to_dict(self):
        return {
            "family": self.family,
            "degree": self.degree,
            "a": self.a.tolist(),
            "powers": self.powers.tolist(),
            "scale": self.scale,
            "learn_powers": self.learn_powers,
        }


class TropicalRationalActivation(Activation):
    """Tropical quotient ``F(x) = F1(x) - F2(x)`` of two max-plus polynomials.

    Each part is a :class:`TropicalActivation` (usually with ``scale=1`` and
    learnable real powers). The difference of two convex functions can be
    non-convex.
    """

    family = "tropical_rational"

    def __init__(self, numerator, denominator):
        self.numerator = numerator
        self.denominator = denominator

    @property
    def degree(self):
        return (self.numerator.degree, self.denominator.degree)

    def eval(self, x):
        return self.numerator.eval(x) - self.denominator.eval(x)

    def deriv(self, x):
        return self.numerator.deriv(x) - self.denominator.deriv(x)

    def param_grad(self, x):
        grads = {f"num.{k}": v for k, v in self.numerator.param_grad(x).items()}
        grads.update({f"den.{k}": -v for k, v in self.denominator.param_grad(x).items()})
        return grads

    def params(self):
        p = {f"num.{k}": v for k, v in self.numerator.params().items()}
        p.update({f"den.{k}": v for k, v in self.denominator.params().items()})
        return p

    def flops_per_eval(self):
        return self.numerator.flops_per_eval() + self.denominator.flops_per_eval() + 1

    def to_dict(self):
        return {
            "family": self.family,
            "numerator": self.numerator.to_dict(),
            "denominator": self.denominator.to_dict(),
        }


class ClassicalActivation(Activation):
    """Parameter-free ReLU, GELU (exact erf form) or SiLU."""

    # GELU from the reference FLOP table; ReLU and SiLU are our own count
    _FLOPS = {"relu": 1, "gelu": 12, "silu": 4}

    def __init__(self, kind):
        kind = kind.lower()
        if kind not in self._FLOPS:
            raise ValueError(f"unknown classical activation {kind!r}")
        self.kind = kind

    @property
    def family(self):
        return self.kind

    @property
    def degree(self):
        return None

    def eval(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "relu":
            out = np.maximum(x, 0.0)
        elif self.kind == "gelu":
            out = x * special.ndtr(x)
        else:
            out = x * special.expit(x)
        return _unwrap(out)

    def deriv(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "relu":
            out = (x > 0).astype(np.float64)
        elif self.kind == "gelu":
            out = special.ndtr(x) + x * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        else:
            s = special.expit(x)
            out = s * (1.0 + x * (1.0 - s))
        return _unwrap(out)

    def flops_per_eval(self):
        return self._FLOPS[self.kind]

    def to_dict(self):
        return {"family": self.kind}


def eval_batch(activation, xs):
    return np.asarray(activation.eval(np.asarray(xs, dtype=np.float64)))


def deriv_batch(activation, xs):
    return np.asarray(activation.deriv(np.asarray(xs, dtype=np.float64)))


def flops_per_eval(activation):
    return activation.flops_per_eval()


def activation_from_dict(doc):
    family = doc["family"]
    if family == "hermite":
        return HermiteActivation(doc["degree"], doc["a"], doc.get("path", "recursive"))
    if family == "fourier":
        return FourierActivation(
            doc["degree"], doc["a0"], doc["a"], doc.get("f"), doc.get("phi"),
            doc.get("fundamental_scale", 1.0), doc.get("learn_frequencies", True),
        )
    if family == "tropical":
        return TropicalActivation(
            doc["degree"], doc["a"], doc.get("scale"), doc.get("powers"),
            doc.get("learn_powers", False),
        )
    if family == "tropical_rational":
        return TropicalRationalActivation(
            activation_from_dict(doc["numerator"]), activation_from_dict(doc["denominator"])
        )
    if family in ("relu", "gelu", "silu"):
        return ClassicalActivation(family)
    raise ValueError(f"unknown activation family {family!r}")


def to_json(activation, **kwargs):
    # json writes floats with repr(), which round-trips every double exactly
    return json.dumps(activation.to_dict(), **kwargs)


def from_json(text):
    return activation_from_dict(json.loads(text))
