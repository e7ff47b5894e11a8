"""Problem definitions for -div(a(x, u) grad u) = f, u = g on the boundary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import ExprError, parse_expr

__all__ = [
    "ProblemSpec",
    "ProblemError",
    "builtin_problem",
    "problem_from_config",
    "load_problem",
    "validate_problem",
    "BUILTIN_NAMES",
]

BUILTIN_NAMES = ("ex1", "ex2")


class ProblemError(ValueError):
    """A problem definition failed validation."""


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficient, data and (optionally) exact solution of a model problem.

    All callables are vectorised: ``a(x, y, u)``, ``a_u(x, y, u)``,
    ``f(x, y)``, ``g(x, y)``, ``u_exact(x, y)`` and ``grad_u_exact(x, y)``
    (returning a pair).  ``alpha0 <= a <= alpha1`` is checked over
    ``u_range``; ``m_a`` bounds |a|, |a_u|, |a_uu| on the same range.
    """

    name: str
    a: Callable
    a_u: Callable
    f: Callable
    g: Callable
    u_exact: Optional[Callable] = None
    grad_u_exact: Optional[Callable] = None
    alpha0: float = 1.0
    alpha1: float = 1.0
    u_range: tuple = (-5.0, 5.0)
    m_a: Optional[float] = None
    linear: bool = False
    source: dict = field(default_factory=dict, compare=False)

    @property
    def has_exact(self):
        return self.u_exact is not None and self.grad_u_exact is not None

    @property
    def coercivity(self):
        """min(alpha0, 1)."""
        return min(self.alpha0, 1.0)


# -- Example 1: a(u) = 1 + u, u = sin(pi x) sin(pi y) ----------------------------

def _ex1():
    pi = np.pi

    def u(x, y):
        return np.sin(pi * x) * np.sin(pi * y)

    def grad(x, y):
        return (pi * np.cos(pi * x) * np.sin(pi * y),
                pi * np.sin(pi * x) * np.cos(pi * y))

    def f(x, y):
        s = u(x, y)
        cx, sx = np.cos(pi * x), np.sin(pi * x)
        cy, sy = np.cos(pi * y), np.sin(pi * y)
        return 2 * pi ** 2 * s * (1 + s) - pi ** 2 * (cx ** 2 * sy ** 2 + sx ** 2 * cy ** 2)

    # 1 + u is positive only for u > -1; the exact solution lives in [0, 1]
    return ProblemSpec(
        name="ex1",
        a=lambda x, y, w: 1.0 + w,
        a_u=lambda x, y, w: np.ones_like(np.asarray(w, dtype=float)),
        f=f,
        g=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        u_exact=u,
        grad_u_exact=grad,
        alpha0=0.5,
        alpha1=2.5,
        u_range=(-0.5, 1.5),
        m_a=2.5,
    )


# -- Example 2: a(u) = 1 + sin(u)/2, u = phi(x) phi(y), phi(t) = t(1-t)e^{2t} -------

def _phi(t):
    return t * (1 - t) * np.exp(2 * t)


def _dphi(t):
    return (1 - 2 * t ** 2) * np.exp(2 * t)


def _d2phi(t):
    return (2 - 4 * t - 4 * t ** 2) * np.exp(2 * t)


def _ex2():
    def u(x, y):
        return _phi(x) * _phi(y)

    def grad(x, y):
        return _dphi(x) * _phi(y), _phi(x) * _dphi(y)

    def f(x, y):
        w = u(x, y)
        gx, gy = grad(x, y)
        lap = _d2phi(x) * _phi(y) + _phi(x) * _d2phi(y)
        return -(1 + 0.5 * np.sin(w)) * lap - 0.5 * np.cos(w) * (gx ** 2 + gy ** 2)

    return ProblemSpec(
        name="ex2",
        a=lambda x, y, w: 1.0 + 0.5 * np.sin(w),
        a_u=lambda x, y, w: 0.5 * np.cos(w),
        f=f,
        g=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        u_exact=u,
        grad_u_exact=grad,
        alpha0=0.5,
        alpha1=1.5,
        m_a=1.5,
    )


_BUILTINS = {"ex1": _ex1, "ex2": _ex2}


def builtin_problem(name):
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ProblemError(f"unknown problem {name!r}; built-ins are "
                           f"{', '.join(BUILTIN_NAMES)}") from None


# -- user problems -------------------------------------------------------------

def _wrap_xy(ast):
    return lambda x, y: np.broadcast_to(ast.evaluate(x=x, y=y, u=0.0),
                                        np.broadcast(x, y).shape).astype(float)


def _wrap_xyu(ast):
    return lambda x, y, u: np.broadcast_to(ast.evaluate(x=x, y=y, u=u),
                                           np.broadcast(x, y, u).shape).astype(float)


def problem_from_config(config, name="custom"):
    """Build a problem from the JSON config mapping of expression strings."""
    required = ("a", "a_u", "f", "g", "alpha0", "alpha1")
    missing = [key for key in required if key not in config]
    if missing:
        raise ProblemError(f"problem config lacks {', '.join(missing)}")
    try:
        a = parse_expr(config["a"])
        a_u = parse_expr(config["a_u"])
        f = parse_expr(config["f"])
        g = parse_expr(config["g"])
        u_exact = parse_expr(config["u_exact"]) if config.get("u_exact") else None
        grad = config.get("grad_u_exact")
        if grad is not None:
            if not isinstance(grad, list) or len(grad) != 2:
                raise ProblemError("grad_u_exact must be a list of two expressions")
            grad = [parse_expr(s) for s in grad]
    except ExprError as exc:
        raise ProblemError(f"bad expression: {exc}") from None
    for label, ast in (("f", f), ("g", g), ("u_exact", u_exact)):
        if ast is not None and "u" in ast.variables():
            raise ProblemError(f"{label} may depend on x and y only")

    alpha0, alpha1 = float(config["alpha0"]), float(config["alpha1"])
    if not 0 < alpha0 <= alpha1:
        raise ProblemError("need 0 < alpha0 <= alpha1")
    u_range = tuple(config.get("u_range", (-5.0, 5.0)))
    grad_fn = None
    if grad is not None:
        gx, gy = _wrap_xy(grad[0]), _wrap_xy(grad[1])
        grad_fn = lambda x, y: (gx(x, y), gy(x, y))  # noqa: E731
    return ProblemSpec(
        name=name,
        a=_wrap_xyu(a),
        a_u=_wrap_xyu(a_u),
        f=_wrap_xy(f),
        g=_wrap_xy(g),
        u_exact=_wrap_xy(u_exact) if u_exact is not None else None,
        grad_u_exact=grad_fn,
        alpha0=alpha0,
        alpha1=alpha1,
        u_range=(float(u_range[0]), float(u_range[1])),
        m_a=float(config["m_a"]) if "m_a" in config else None,
        linear="u" not in a.variables(),
        source=dict(config),
    )


def load_problem(spec):
    """Resolve a built-in name or a path to a JSON problem config."""
    if spec in _BUILTINS:
        return builtin_problem(spec)
    try:
        with open(spec, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ProblemError(f"no built-in problem or config file named {spec!r}") from None
    except json.JSONDecodeError as exc:
        raise ProblemError(f"malformed problem config: {exc}") from None
    return problem_from_config(config, name=str(spec))


def validate_problem(problem, n_points=10_000, n_u=11, rtol=1e-6):
    """Check the coefficient bounds and a_u against finite differences.

    Samples a 100 x 100 grid of the unit square times ``n_u`` values of u over
    ``problem.u_range``.  Raises :class:`ProblemError` on the first violation.
    """
    m = int(round(np.sqrt(n_points)))
    t = (np.arange(m) + 0.5) / m
    X, Y = np.meshgrid(t, t)
    X, Y = X.ravel()[:, None], Y.ravel()[:, None]
    U = np.linspace(problem.u_range[0], problem.u_range[1], n_u)[None, :]
    X, Y, U = np.broadcast_arrays(X, Y, U)
    a = problem.a(X, Y, U)
    if not np.all(np.isfinite(a)):
        raise ProblemError("a(x, u) is not finite on the validation grid")
    lo, hi = float(a.min()), float(a.max())
    tol = 1e-12 * max(1.0, abs(problem.alpha1))
    if lo < problem.alpha0 - tol or hi > problem.alpha1 + tol:
        raise ProblemError(f"a ranges over [{lo:.6g}, {hi:.6g}], outside "
                           f"[alpha0, alpha1] = [{problem.alpha0}, {problem.alpha1}]")
    eps = 1e-6
    fd = (problem.a(X, Y, U + eps) - problem.a(X, Y, U - eps)) / (2 * eps)
    au = problem.a_u(X, Y, U)
    scale = np.maximum(np.abs(fd), 1.0)
    err = np.abs(au - fd) / scale
    if err.max() > rtol:
        i = np.unravel_index(np.argmax(err), err.shape)
        raise ProblemError(
            f"a_u disagrees with finite differences of a at x={X[i]:.4g}, y={Y[i]:.4g}, "
            f"u={U[i]:.4g}: {au[i]:.8g} vs {fd[i]:.8g}")
