"""Fit a learnable activation to a reference function on a uniform grid.

Two modes are supported:

``lagrange``
    least squares on function values only;
``hermite``
    joint least squares on values and first derivatives,
    ``sum (F - g)^2 + lam * (F' - g')^2`` (a "Hermite interpolation" in the
    interpolation-theory sense, unrelated to Hermite polynomials).

Hermite activations and Fourier activations with frozen frequencies/phases are
linear in their coefficients and are solved directly. A Fourier fit can then
be refined over all parameters by Levenberg-Marquardt. Tropical rational
activations are fitted by subgradient descent.
"""

import math
from dataclasses import dataclass

import numpy as np

from .activations import (
    FourierActivation,
    HermiteActivation,
    TropicalActivation,
    TropicalRationalActivation,
)
from .errors import NonConvergent, RankDeficient, UnsupportedFamily

MODES = ("lagrange", "hermite")
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class FitGrid:
    lo: float = -4.0
    hi: float = 4.0
    points: int = 401

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.points < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.points}")

    @property
    def xs(self):
        return np.linspace(self.lo, self.hi, self.points)


@dataclass
class FitResult:
    activation: object
    value_rmse: float
    deriv_rmse: float
    grid: FitGrid
    mode: str
    iterations: int = 0
    loss: float = 0.0


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def _mode(mode):
    mode = mode.lower()
    if mode in ("hermiteinterp", "hermite_interp"):
        mode = "hermite"
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _result(act, target, grid, mode, iterations=0, lam=1.0):
    xs = grid.xs
    v = _rmse(act.eval(xs), target.eval(xs))
    d = _rmse(act.deriv(xs), target.deriv(xs))
    loss = v * v + (lam * d * d if mode == "hermite" else 0.0)
    return FitResult(act, v, d, grid, mode, iterations, loss)


def _template(family, degree, fundamental_scale):
    if family == "hermite":
        return HermiteActivation(degree, np.zeros(degree + 1))
    if family == "fourier":
        act = FourierActivation(degree, 0.0, np.zeros(degree),
                                fundamental_scale=fundamental_scale, learn_frequencies=False)
        return act
    raise UnsupportedFamily(f"direct fitting supports hermite and fourier, not {family!r}")


def _linear_columns(act, xs):
    """Value and derivative columns of a model linear in its coefficients.

    Column j is obtained by evaluating the activation with the j-th unit
    coefficient vector, so no family-specific derivative bookkeeping is needed.
    """
    params = act.params()
    names = list(params)
    sizes = [params[k].size for k in names]
    cols_v, cols_d = [], []
    for name, size in zip(names, sizes):
        for j in range(size):
            for other in names:
                params[other][:] = 0.0
            params[name][j] = 1.0
            cols_v.append(np.asarray(act.eval(xs)))
            cols_d.append(np.asarray(act.deriv(xs)))
    for other in names:
        params[other][:] = 0.0
    return names, sizes, np.column_stack(cols_v), np.column_stack(cols_d)


def solve_scaled_least_squares(A, b):
    """Least squares with unit-norm column scaling and a conditioning guard."""
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise RankDeficient("design matrix has an all-zero column")
    scaled = A / norms
    cond = np.linalg.cond(scaled)
    if not cond <= MAX_CONDITION:
        raise RankDeficient(f"design matrix condition {cond:.3e} exceeds {MAX_CONDITION:.0e}")
    y, *_ = np.linalg.lstsq(scaled, b, rcond=None)
    return y / norms


def fit(target, family, degree, grid=None, mode="hermite", lam=1.0, refine=False,
        fundamental_scale=1.0, max_iter=10_000, tol=1e-10, strict=False):
    """Fit ``family`` of the given degree to ``target`` on ``grid``.

    ``target`` is any object with vectorized ``eval`` and ``deriv`` methods.
    With ``refine=True`` a Fourier fit is continued over amplitudes,
    frequencies and phases by Levenberg-Marquardt; ``strict`` turns an
    exhausted iteration budget into :class:`NonConvergent`.
    """
    grid = grid or FitGrid()
    mode = _mode(mode)
    family = family.lower()
    act = _template(family, int(degree), fundamental_scale)
    n_free = act.num_params()
    if grid.points < 2 * n_free:
        raise ValueError(f"grid of {grid.points} points is too coarse for {n_free} parameters")

    xs = grid.xs
    names, sizes, V, D = _linear_columns(act, xs)
    g = np.asarray(target.eval(xs), dtype=np.float64)
    if mode == "lagrange":
        A, b = V, g
    else:
        w = math.sqrt(lam)
        A = np.vstack([V, w * D])
        b = np.concatenate([g, w * np.asarray(target.deriv(xs), dtype=np.float64)])
    theta = solve_scaled_least_squares(A, b)
    params = act.params()
    offset = 0
    for name, size in zip(names, sizes):
        params[name][:] = theta[offset:offset + size]
        offset += size

    if family == "fourier":
        act.learn_frequencies = True
        if refine:
            it = _refine_fourier(act, target, xs, mode, lam, max_iter, tol, strict)
            return _result(act, target, grid, mode, it, lam)
    return _result(act, target, grid, mode, 0, lam)


def _fourier_deriv_param_grad(act, x):
    """Gradient of ``F'(x)`` with respect to each Fourier parameter."""
    w = act.fundamental_scale
    theta = act.f * w * x[..., None] - act.phi
    c = math.sqrt(2.0) * np.array([1.0 / math.factorial(k) for k in range(1, act.degree + 1)])
    sin, cos = np.sin(theta), np.cos(theta)
    return {
        "a0": np.zeros(x.shape + (1,)),
        "a": -c * act.f * w * sin,
        "f": -c * act.a * w * (sin + act.f * w * x[..., None] * cos),
        "phi": c * act.a * act.f * w * cos,
    }


def _loss_and_grad(act, xs, g, dg, mode, lam, deriv_param_grad, smooth=None):
    r = act.eval(xs) - g
    loss = np.mean(r * r)
    pg = act.param_grad(xs)
    grad = {k: 2.0 * np.mean(r[:, None] * v, axis=0) for k, v in pg.items()}
    if mode == "hermite":
        rd = act.deriv(xs) - dg
        if smooth is not None:
            rd = np.where(smooth(act, xs), rd, 0.0)
        loss += lam * np.mean(rd * rd)
        for k, v in deriv_param_grad(act, xs).items():
            grad[k] = grad[k] + 2.0 * lam * np.mean(rd[:, None] * v, axis=0)
    return float(loss), grad


def _residual_jacobian(act, xs, g, dg, mode, lam):
    params = act.params()
    names = list(params)
    pg = act.param_grad(xs)
    r = [act.eval(xs) - g]
    J = [np.concatenate([pg[k] for k in names], axis=1)]
    if mode == "hermite":
        w = math.sqrt(lam)
        dpg = _fourier_deriv_param_grad(act, xs)
        r.append(w * (act.deriv(xs) - dg))
        J.append(w * np.concatenate([dpg[k] for k in names], axis=1))
    return np.concatenate(r), np.vstack(J)


def _refine_fourier(act, target, xs, mode, lam, max_iter, tol, strict):
    """Levenberg-Marquardt over all Fourier parameters (damped Gauss-Newton)."""
    g = np.asarray(target.eval(xs))
    dg = np.asarray(target.deriv(xs))
    params = act.params()
    names = list(params)
    sizes = [params[k].size for k in names]

    def assign(theta):
        offset = 0
        for k, size in zip(names, sizes):
            params[k][:] = theta[offset:offset + size]
            offset += size

    theta = np.concatenate([params[k] for k in names])
    r, J = _residual_jacobian(act, xs, g, dg, mode, lam)
    loss = float(r @ r)
    damping = 1e-3
    for it in range(1, max_iter + 1):
        JtJ = J.T @ J
        rhs = -(J.T @ r)
        diag = np.diag(JtJ).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(JtJ + damping * np.diag(diag), rhs)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                assign(theta + step)
                r_new, J_new = _residual_jacobian(act, xs, g, dg, mode, lam)
                new_loss = float(r_new @ r_new)
                if np.isfinite(new_loss) and new_loss <= loss:
                    break
            damping *= 10.0
            if damping > 1e16:
                assign(theta)
                return it
        change = (loss - new_loss) / max(loss, 1e-300)
        theta = theta + step
        r, J, loss = r_new, J_new, new_loss
        damping = max(damping / 10.0, 1e-12)
        if change < tol:
            return it
    if strict:
        raise NonConvergent(f"refinement did not converge in {max_iter} iterations")
    return max_iter


def _tangent_lines(fun, dfun, nodes):
    slopes = dfun(nodes)
    return fun(nodes) - slopes * nodes, slopes


def _curvature_shift(target, xs):
    d2 = np.gradient(np.asarray(target.deriv(xs)), xs)
    return max(0.0, -float(d2.min())) * 1.05


def _tropical_smooth(act, x):
    """False at kinks, where two pieces of a tropical part tie for the max."""
    parts = (act.numerator, act.denominator) if isinstance(act, TropicalRationalActivation) else (act,)
    ok = np.ones(np.shape(x), dtype=bool)
    for part in parts:
        z = part.a + part.powers * np.asarray(x)[..., None]
        ok &= np.count_nonzero(z == z.max(axis=-1, keepdims=True), axis=-1) == 1
    return ok


def _rational_deriv_param_grad(act, x):
    grads = {}
    for prefix, part, sign in (("num", act.numerator, 1.0), ("den", act.denominator, -1.0)):
        _, idx = part._argmax(x)
        onehot = (idx[..., None] == np.arange(part.degree + 1)).astype(np.float64)
        grads[f"{prefix}.a"] = np.zeros_like(onehot)
        if part.learn_powers:
            grads[f"{prefix}.powers"] = sign * part.scale * onehot
    return grads


def _tropical_deriv_param_grad(act, x):
    _, idx = act._argmax(x)
    onehot = (idx[..., None] == np.arange(act.degree + 1)).astype(np.float64)
    grads = {"a": np.zeros_like(onehot)}
    if act.learn_powers:
        grads["powers"] = act.scale * onehot
    return grads


def initial_tropical_rational(target, deg_num, deg_den, grid):
    """Difference-of-convex starting point built from tangent lines.

    With ``c`` bounding the target's negative curvature, ``g + c x^2/2`` and
    ``c x^2/2`` are both convex; each is replaced by the max of its tangent
    lines at evenly spaced nodes. ``deg_den == 0`` gives a single convex
    tropical polynomial.
    """
    xs = grid.xs
    c = _curvature_shift(target, xs) if deg_den > 0 else 0.0
    nodes_num = np.linspace(grid.lo, grid.hi, deg_num + 1)
    a_num, p_num = _tangent_lines(lambda t: target.eval(t) + 0.5 * c * t * t,
                                  lambda t: target.deriv(t) + c * t, nodes_num)
    num = TropicalActivation(deg_num, a_num, scale=1.0, powers=p_num, learn_powers=True)
    if deg_den == 0:
        return num
    nodes_den = np.linspace(grid.lo, grid.hi, deg_den + 1)
    a_den, p_den = -0.5 * c * nodes_den ** 2, c * nodes_den
    den = TropicalActivation(deg_den, a_den, scale=1.0, powers=p_den, learn_powers=True)
    return TropicalRationalActivation(num, den)


def fit_tropical_rational(target, deg_num, deg_den, grid=None, lam=1.0, max_iter=5000,
                          lr=1e-2, tol=1e-12, strict=False, init=None):
    """Fit ``F1 - F2`` to ``target`` on values and derivatives jointly.

    Optimizes coefficients and real-valued powers of both parts with Adam on
    subgradients, starting from :func:`initial_tropical_rational` (or ``init``)
    and returning the best iterate seen. Grid points sitting exactly on a kink
    are left out of the derivative term. Each part stays a max of affine
    functions, hence convex. ``deg_den=0`` fits a single tropical polynomial.
    """
    grid = grid or FitGrid()
    deg_num, deg_den = int(deg_num), int(deg_den)
    if deg_num < 1 or deg_den < 0:
        raise ValueError(f"need deg_num >= 1 and deg_den >= 0, got {deg_num}, {deg_den}")
    act = init if init is not None else initial_tropical_rational(target, deg_num, deg_den, grid)
    dpg = _tropical_deriv_param_grad if isinstance(act, TropicalActivation) else _rational_deriv_param_grad
    xs = grid.xs
    g = np.asarray(target.eval(xs), dtype=np.float64)
    dg = np.asarray(target.deriv(xs), dtype=np.float64)
    params = act.params()

    beta1, beta2, eps = 0.9, 0.999, 1e-12
    m = {k: np.zeros_like(v) for k, v in params.items()}
    s = {k: np.zeros_like(v) for k, v in params.items()}
    loss, grad = _loss_and_grad(act, xs, g, dg, "hermite", lam, dpg, _tropical_smooth)
    best_loss, best = loss, {k: v.copy() for k, v in params.items()}
    it = 0
    stalled = 0
    for it in range(1, max_iter + 1):
        if loss <= tol:
            break
        rate = lr / math.sqrt(1.0 + it / 500.0)
        for k, v in params.items():
            m[k] = beta1 * m[k] + (1 - beta1) * grad[k]
            s[k] = beta2 * s[k] + (1 - beta2) * grad[k] ** 2
            mh = m[k] / (1 - beta1 ** it)
            sh = s[k] / (1 - beta2 ** it)
            v -= rate * mh / (np.sqrt(sh) + eps)
        loss, grad = _loss_and_grad(act, xs, g, dg, "hermite", lam, dpg, _tropical_smooth)
        if not np.isfinite(loss):
            raise NonConvergent(f"non-finite loss at iteration {it}")
        if loss < best_loss * (1 - 1e-9):
            best_loss = loss
            best = {k: v.copy() for k, v in params.items()}
            stalled = 0
        else:
            stalled += 1
            if stalled >= 1000:
                break
    else:
        if strict:
            raise NonConvergent(f"subgradient descent did not settle in {max_iter} iterations")
    for k, v in params.items():
        v[:] = best[k]
    return _result(act, target, grid, "hermite", it, lam)
