"""Cutoff calculus and Lyapunov function families with analytic derivatives.

The families are built from a fixed C^2 convex cutoff psi (constant left of
-1, identity right of 0) through the weighted sums

    Psi_eps(x)      = sum_i psi(eps x_i) / mu_i,
    Psi(x)          = sum_i psi(x_i) / mu_i,
    Psi*_{eps,th}(x)= eps th Psi(-x) + Psi_eps(x),

which track the workload (positive part) and idleness (negative part) of the
state.  All evaluations are exact and vectorized; exp-scale families expose
log-scale accessors so generator computations never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .model import DiffusionSpec, SystemParams, drift_truncated, spare_capacity


# ---------------------------------------------------------------------------
# cutoff function
# ---------------------------------------------------------------------------

def _shifted(t: np.ndarray) -> np.ndarray:
    # s = t + 1 clipped to the middle piece; outside [-1, 0] the polynomial
    # pieces below evaluate to the correct constant continuations.
    return np.clip(t, -1.0, 0.0) + 1.0


def psi(t):
    """Piecewise cutoff: -1/2 for t <= -1, (t+1)^3 - (t+1)^4/2 - 1/2 on [-1,0], t for t >= 0."""
    t = np.asarray(t, dtype=float)
    s = _shifted(t)
    mid = s**3 - 0.5 * s**4 - 0.5
    out = np.where(t > 0.0, t, mid)
    return out if out.ndim else float(out)


def psi_d1(t):
    """First derivative of psi; equals s^2 (3 - 2 s) with s = clip(t,-1,0)+1."""
    t = np.asarray(t, dtype=float)
    s = _shifted(t)
    out = s * s * (3.0 - 2.0 * s)
    return out if out.ndim else float(out)


def psi_d2(t):
    """Second derivative of psi; equals 6 s (1 - s), maximal value 3/2 at t = -1/2."""
    t = np.asarray(t, dtype=float)
    s = _shifted(t)
    out = 6.0 * s * (1.0 - s)
    return out if out.ndim else float(out)


def psi_eps(t, eps: float):
    return psi(np.asarray(t, dtype=float) * eps)


def psi_eps_d1(t, eps: float):
    return eps * psi_d1(np.asarray(t, dtype=float) * eps)


def psi_eps_d2(t, eps: float):
    return eps * eps * psi_d2(np.asarray(t, dtype=float) * eps)


def big_psi_star(x, eps: float, theta: float, mu) -> np.ndarray:
    """Psi*_{eps,theta}(x) = eps theta Psi(-x) + Psi_eps(x), vectorized over rows."""
    v, _, _ = psi_star_terms(x, eps, theta, mu)
    return v


def psi_star_terms(x, eps: float, theta: float, mu):
    """Value, per-coordinate gradient and per-coordinate second derivative of Psi*."""
    if eps <= 0 or theta <= 0:
        raise ValueError("eps and theta must be positive")
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    val = np.sum((eps * theta * psi(-x) + psi(eps * x)) / mu, axis=-1)
    g = (-eps * theta * psi_d1(-x) + eps * psi_d1(eps * x)) / mu
    h = (eps * theta * psi_d2(-x) + eps * eps * psi_d2(eps * x)) / mu
    return val, g, h


# ---------------------------------------------------------------------------
# family specifications
# ---------------------------------------------------------------------------

class Family(str, Enum):
    EXP_LINEAR = "exp_linear"                  # exp(Psi*)
    SUB_GAUSSIAN = "sub_gaussian"              # exp(Psi*^2 / 2)
    POWER = "power"                            # (eps th PsiBar(-x) + PsiBar_eps(x))^p
    NEG_PART_EXP = "neg_part_exp"              # exp(eta Phi_1)
    ABANDON_EXP = "abandon_exp"                # exp(eta th Psi(-x) + eta Psi(x))
    NEG_PART_SUB_GAUSSIAN = "neg_part_sub_gaussian"  # exp([eta Phi_eta]^2 / 2)


class Goal(str, Enum):
    """Certification target for ``select_parameters``."""

    EXP_ERGODIC = "exp_ergodic"                # exp-linear Foster bound, needs rho > 0
    SUB_GAUSSIAN = "sub_gaussian"              # squared family, needs all gamma_i > 0
    ABANDON = "abandon"                        # linear-decay family, needs all gamma_i > 0
    NEG_PART = "neg_part"                      # exp of idleness over gamma_i <= mu_i classes
    NEG_PART_SUB_GAUSSIAN = "neg_part_sub_gaussian"


class InfeasibleGoal(ValueError):
    """The requested certification goal has no admissible parameters."""


@dataclass(frozen=True)
class LyapunovSpec:
    family: Family
    mu: np.ndarray
    epsilon: float | None = None
    theta: float | None = None
    eta: float | None = None
    p: float | None = None
    class_subset: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        f = self.family
        need = {
            Family.EXP_LINEAR: ("epsilon", "theta"),
            Family.SUB_GAUSSIAN: ("epsilon", "theta"),
            Family.POWER: ("epsilon", "theta", "p"),
            Family.NEG_PART_EXP: ("eta",),
            Family.ABANDON_EXP: ("eta", "theta"),
            Family.NEG_PART_SUB_GAUSSIAN: ("eta",),
        }[f]
        for name in need:
            v = getattr(self, name)
            if v is None:
                raise ValueError(f"{f.value} requires parameter {name}")
            if name == "p":
                if v < 0:
                    raise ValueError("power exponent must be >= 0")
            elif v <= 0:
                raise ValueError(f"parameter {name} must be positive, got {v}")
        if f in (Family.NEG_PART_EXP, Family.NEG_PART_SUB_GAUSSIAN):
            if self.class_subset is None:
                raise ValueError(f"{f.value} requires class_subset")
            subset = tuple(int(i) for i in self.class_subset)
            if any(i < 0 or i >= self.m for i in subset):
                raise ValueError("class_subset indices out of range")
            object.__setattr__(self, "class_subset", subset)

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    def subset_mask(self) -> np.ndarray:
        mask = np.zeros(self.m)
        if self.class_subset:
            mask[list(self.class_subset)] = 1.0
        return mask


def _inner_terms(spec: LyapunovSpec, x: np.ndarray):
    """Separable inner sum T(x) with per-coordinate first/second derivatives.

    For EXP_LINEAR/ABANDON_EXP/NEG_PART_EXP the log of the family is T itself;
    for the squared families the log is T^2/2; for POWER the log is
    p log(T + shift) with the strictly positive shift (1 + eps theta) sum 1/mu.
    """
    mu = spec.mu
    f = spec.family
    if f in (Family.EXP_LINEAR, Family.SUB_GAUSSIAN, Family.POWER):
        return psi_star_terms(x, spec.epsilon, spec.theta, mu)
    if f == Family.ABANDON_EXP:
        eta, th = spec.eta, spec.theta
        val = eta * np.sum((th * psi(-x) + psi(x)) / mu, axis=-1)
        g = eta * (-th * psi_d1(-x) + psi_d1(x)) / mu
        h = eta * (th * psi_d2(-x) + psi_d2(x)) / mu
        return val, g, h
    if f == Family.NEG_PART_EXP:
        eta = spec.eta
        mask = spec.subset_mask()
        val = eta * np.sum(mask * psi(-x) / mu, axis=-1)
        g = -eta * mask * psi_d1(-x) / mu
        h = eta * mask * psi_d2(-x) / mu
        return val, g, h
    if f == Family.NEG_PART_SUB_GAUSSIAN:
        # the +1/2 shift keeps the inner sum nonnegative (zero deep in the
        # positive orthant); squaring an inner sum that dips negative would
        # flip the gradient sign there and destroy the drift bound
        eta = spec.eta
        mask = spec.subset_mask()
        val = eta * np.sum(mask * (psi(-eta * x) + 0.5) / mu, axis=-1)
        g = -eta * eta * mask * psi_d1(-eta * x) / mu
        h = eta**3 * mask * psi_d2(-eta * x) / mu
        return val, g, h
    raise ValueError(f"unknown family {f}")


def log_terms(spec: LyapunovSpec, x):
    """Log-scale value, gradient and diagonal Hessian of the family at x.

    Returns (L, grad L, diag grad^2 L) with L = log f; shapes (...,), (..., m),
    (..., m).  The diagonal is all the generator needs since a is diagonal.
    """
    x = np.asarray(x, dtype=float)
    val, g, h = _inner_terms(spec, x)
    f = spec.family
    if f in (Family.EXP_LINEAR, Family.ABANDON_EXP, Family.NEG_PART_EXP):
        return val, g, h
    if f in (Family.SUB_GAUSSIAN, Family.NEG_PART_SUB_GAUSSIAN):
        L = 0.5 * val**2
        gl = val[..., None] * g
        hl = g * g + val[..., None] * h
        return L, gl, hl
    if f == Family.POWER:
        base = val + (1.0 + spec.epsilon * spec.theta) * float(np.sum(1.0 / spec.mu))
        L = spec.p * np.log(base)
        gl = spec.p * g / base[..., None]
        hl = spec.p * (h / base[..., None] - (g / base[..., None]) ** 2)
        return L, gl, hl
    raise ValueError(f"unknown family {f}")


def log_value(spec: LyapunovSpec, x) -> np.ndarray:
    return log_terms(spec, x)[0]


def evaluate(spec: LyapunovSpec, x) -> np.ndarray:
    """Linear-scale value of the family (may overflow far out; see log_value)."""
    return np.exp(log_value(spec, x))


def gradient(spec: LyapunovSpec, x) -> np.ndarray:
    L, gl, _ = log_terms(spec, x)
    return np.exp(L)[..., None] * gl


def hessian(spec: LyapunovSpec, x) -> np.ndarray:
    """Full Hessian (..., m, m) of the linear-scale value."""
    x = np.asarray(x, dtype=float)
    val, g, h = _inner_terms(spec, x)
    f = spec.family
    if f in (Family.EXP_LINEAR, Family.ABANDON_EXP, Family.NEG_PART_EXP):
        L, gl = val, g
        hess_l = _diag_embed(h)
    elif f in (Family.SUB_GAUSSIAN, Family.NEG_PART_SUB_GAUSSIAN):
        L = 0.5 * val**2
        gl = val[..., None] * g
        hess_l = _outer(g, g) + val[..., None, None] * _diag_embed(h)
    elif f == Family.POWER:
        base = val + (1.0 + spec.epsilon * spec.theta) * float(np.sum(1.0 / spec.mu))
        L = spec.p * np.log(base)
        gb = g / base[..., None]
        gl = spec.p * gb
        hess_l = spec.p * (_diag_embed(h / base[..., None]) - _outer(gb, gb))
    else:
        raise ValueError(f"unknown family {f}")
    return np.exp(L)[..., None, None] * (_outer(gl, gl) + hess_l)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


def _diag_embed(d: np.ndarray) -> np.ndarray:
    out = np.zeros(d.shape + (d.shape[-1],))
    idx = np.arange(d.shape[-1])
    out[..., idx, idx] = d
    return out


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def generator_ratio(spec, x, u, dspec: DiffusionSpec, c: float = math.inf,
                    check: bool = True) -> np.ndarray:
    """(L_u f / f)(x) for the truncated drift, computed entirely in log scale.

    For f = exp(L) this is  (1/2) sum_i a_ii ((d_i L)^2 + d_ii L) + <b_c, grad L>,
    which stays finite where the linear-scale value overflows.  ``spec`` may be
    a single LyapunovSpec or a sequence, in which case the product family
    (log-sum) is used.
    """
    specs = [spec] if isinstance(spec, LyapunovSpec) else list(spec)
    x = np.asarray(x, dtype=float)
    gl = 0.0
    hl = 0.0
    for s in specs:
        _, g, h = log_terms(s, x)
        gl = gl + g
        hl = hl + h
    b = drift_truncated(x, u, dspec, c, check=check)
    return 0.5 * np.sum(dspec.a_diag * (gl * gl + hl), axis=-1) + np.sum(b * gl, axis=-1)


def generator_apply(spec, x, u, dspec: DiffusionSpec, c: float = math.inf,
                    check: bool = True) -> np.ndarray:
    """L_u f(x) on linear scale (ratio form times the value)."""
    specs = [spec] if isinstance(spec, LyapunovSpec) else list(spec)
    L = sum(log_value(s, x) for s in specs)
    return generator_ratio(specs, x, u, dspec, c, check=check) * np.exp(L)


def generator_apply_direct(spec: LyapunovSpec, x, u, dspec: DiffusionSpec,
                           c: float = math.inf) -> np.ndarray:
    """L_u f(x) assembled from linear-scale gradient and Hessian.

    Redundant with ``generator_apply``; kept as the second route of the
    dual-path consistency check.
    """
    x = np.asarray(x, dtype=float)
    grad = gradient(spec, x)
    hess = hessian(spec, x)
    b = drift_truncated(x, u, dspec, c)
    idx = np.arange(spec.m)
    tr = np.sum(dspec.a_diag * hess[..., idx, idx], axis=-1)
    return 0.5 * tr + np.sum(b * grad, axis=-1)


# ---------------------------------------------------------------------------
# parameter selection
# ---------------------------------------------------------------------------

def exp_linear_theta_bound(varrho: float, m: int, beta_max: float) -> float:
    """Largest admissible theta for the exp-linear Foster bound."""
    bound = varrho / (3.0 * m * (2.0 * varrho + m))
    if beta_max > 1.0:
        bound = min(bound, 1.0 / (beta_max - 1.0))
    return min(1.0, bound)


def sub_gaussian_theta(beta_min: float, beta_max: float) -> float:
    return max(1.0 - beta_min, 0.5) / beta_max


def sub_gaussian_eps0(theta: float, beta_min: float, c_bar: float,
                      mu_min: float, mu_max: float) -> float:
    decay = min(theta, beta_min * min(beta_min, 0.5))
    return (decay / (2.0 * math.sqrt(c_bar))
            * (min(1.0, theta) * mu_min) / (max(1.0, theta) ** 2 * mu_max))


def select_parameters(goal: Goal, params: SystemParams, eta: float = 1.0,
                      p: float = 2.0) -> LyapunovSpec:
    """Admissible family parameters for a certification goal.

    theta is set to the largest admissible value and eps to half its
    admissible bound; raises InfeasibleGoal when the goal's sign conditions
    fail (e.g. exp-linear decay with nonpositive spare capacity).
    """
    goal = Goal(goal)
    varrho = spare_capacity(params)
    beta = params.beta
    beta_max = float(beta.max())
    beta_min = float(beta.min())
    c_bar = float(np.sum(params.lambda_tilde / params.mu**2))
    mu = params.mu

    if goal in (Goal.EXP_ERGODIC, Goal.NEG_PART, Goal.NEG_PART_SUB_GAUSSIAN):
        if varrho <= 0:
            raise InfeasibleGoal(f"goal {goal.value} needs positive spare capacity, got {varrho}")
        theta = exp_linear_theta_bound(varrho, params.m, beta_max)
        eps = 0.5 * varrho / (6.0 * params.m * (3.0 + 2.0 * c_bar))
        if goal == Goal.EXP_ERGODIC:
            return LyapunovSpec(Family.EXP_LINEAR, mu, epsilon=eps, theta=theta)
        subset = tuple(int(i) for i in np.nonzero(params.gamma <= params.mu)[0])
        family = Family.NEG_PART_EXP if goal == Goal.NEG_PART else Family.NEG_PART_SUB_GAUSSIAN
        return LyapunovSpec(family, mu, eta=eta, class_subset=subset)

    if goal in (Goal.SUB_GAUSSIAN, Goal.ABANDON):
        if beta_min <= 0:
            raise InfeasibleGoal(f"goal {goal.value} needs all abandonment rates positive")
        theta = sub_gaussian_theta(beta_min, beta_max)
        if goal == Goal.ABANDON:
            return LyapunovSpec(Family.ABANDON_EXP, mu, eta=eta, theta=theta)
        eps = 0.5 * sub_gaussian_eps0(theta, beta_min, c_bar, float(mu.min()), float(mu.max()))
        return LyapunovSpec(Family.SUB_GAUSSIAN, mu, epsilon=eps, theta=theta)

    raise ValueError(f"unknown goal {goal}")


def power_spec(params: SystemParams, p: float = 2.0) -> LyapunovSpec:
    """Polynomial family sharing the exp-linear eps/theta selection."""
    base = select_parameters(Goal.EXP_ERGODIC, params)
    return LyapunovSpec(Family.POWER, params.mu, epsilon=base.epsilon,
                        theta=base.theta, p=p)
