"""Core model: system parameters, controlled drift, cones, and diffusion scaling.

The limiting diffusion for an m-class many-server system in the
Halfin-Whitt regime is

    dX_t = b(X_t, U_t) dt + sigma dW_t,
    b(x, u) = -(rho/m) M e - M (x - <e,x>^+ u) - <e,x>^+ Gamma u,

with M = diag(mu), Gamma = diag(gamma), and u a point of the simplex
Delta = {u >= 0, <e,u> = 1}.  Everything in this module is a pure function
of its inputs and vectorizes over a leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Accepted floating-point slack for simplex membership before projection.
SIMPLEX_TOL = 1e-12


class SimplexError(ValueError):
    """Control vector is not on the simplex beyond tolerance."""


class WorkConservationError(ValueError):
    """Allocation is inconsistent with a work-conserving policy."""


def _as_array(v, m: int | None = None) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if m is not None and a.shape[-1] != m:
        raise ValueError(f"expected last axis of length {m}, got shape {a.shape}")
    return a


def project_simplex(u, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate u against Delta within ``tol``, then clip and renormalize.

    Rejects controls whose coordinates are below -tol or whose sum deviates
    from 1 by more than ``tol``; accepted controls are cleaned up so that
    downstream code sees an exact simplex point.
    """
    u = _as_array(u)
    if np.any(u < -tol):
        raise SimplexError(f"negative control coordinate beyond tolerance: {u}")
    s = u.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > tol):
        raise SimplexError(f"control sum deviates from 1 beyond tolerance: sums {s.ravel()}")
    u = np.clip(u, 0.0, None)
    return u / u.sum(axis=-1, keepdims=True)


def simplex_vertices(m: int) -> np.ndarray:
    return np.eye(m)


def simplex_barycenter(m: int) -> np.ndarray:
    return np.full(m, 1.0 / m)


@dataclass(frozen=True)
class SystemParams:
    """Fluid-scale rates and their second-order Halfin-Whitt perturbations.

    lambda_/mu/gamma are per-class arrival, service and abandonment rates of
    the fluid limit; hat_lambda/hat_mu are the sqrt(n)-order corrections used
    to build the n-server systems; scv holds the squared coefficients of
    variation of the interarrival times (1 for Poisson input).

    Invariant: sum_i lambda_i / mu_i = 1 (critical load).
    """

    m: int
    lambda_: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    hat_lambda: np.ndarray
    hat_mu: np.ndarray
    scv: np.ndarray
    load_tol: float = field(default=1e-9, compare=False)

    def __post_init__(self):
        for name in ("lambda_", "mu", "gamma", "hat_lambda", "hat_mu", "scv"):
            object.__setattr__(self, name, _as_array(getattr(self, name), self.m))
        if self.m < 1:
            raise ValueError("class count m must be >= 1")
        if np.any(self.lambda_ <= 0) or np.any(self.mu <= 0):
            raise ValueError("arrival and service rates must be positive")
        if np.any(self.gamma < 0):
            raise ValueError("abandonment rates must be nonnegative")
        if np.any(self.scv <= 0):
            raise ValueError("interarrival SCVs must be positive")
        load = float(np.sum(self.lambda_ / self.mu))
        if abs(load - 1.0) > self.load_tol:
            raise ValueError(f"sum of lambda_i/mu_i must be 1, got {load}")

    @property
    def rho(self) -> np.ndarray:
        return self.lambda_ / self.mu

    @property
    def beta(self) -> np.ndarray:
        """Abandonment-to-service rate ratios gamma_i / mu_i (never stored)."""
        return self.gamma / self.mu

    @property
    def lambda_tilde(self) -> np.ndarray:
        """Half the diffusion covariance: lambda_i (1 + scv_i) / 2."""
        return 0.5 * self.lambda_ * (1.0 + self.scv)


def make_system(lambda_, mu, gamma=None, hat_lambda=None, hat_mu=None, scv=None,
                load_tol: float = 1e-9) -> SystemParams:
    """Convenience constructor filling optional blocks with zeros/ones."""
    lambda_ = _as_array(lambda_)
    m = lambda_.shape[-1]
    mu = _as_array(mu, m)
    gamma = np.zeros(m) if gamma is None else _as_array(gamma, m)
    hat_lambda = np.zeros(m) if hat_lambda is None else _as_array(hat_lambda, m)
    hat_mu = np.zeros(m) if hat_mu is None else _as_array(hat_mu, m)
    scv = np.ones(m) if scv is None else _as_array(scv, m)
    return SystemParams(m, lambda_, mu, gamma, hat_lambda, hat_mu, scv, load_tol)


def spare_capacity(params: SystemParams) -> float:
    """Safety-staffing parameter rho = sum_i (rho_i hat_mu_i - hat_lambda_i) / mu_i."""
    return float(np.sum((params.rho * params.hat_mu - params.hat_lambda) / params.mu))


@dataclass(frozen=True)
class PrelimitParams:
    """Rates of a single n-server system."""

    n: int
    lambda_n: np.ndarray
    mu_n: np.ndarray
    gamma_n: np.ndarray

    def __post_init__(self):
        m = len(np.atleast_1d(self.lambda_n))
        for name in ("lambda_n", "mu_n", "gamma_n"):
            object.__setattr__(self, name, _as_array(getattr(self, name), m))
        if self.n < 1:
            raise ValueError("server count n must be >= 1")
        if np.any(self.lambda_n <= 0) or np.any(self.mu_n <= 0):
            raise ValueError("prelimit rates must be positive")
        if np.any(self.gamma_n < 0):
            raise ValueError("abandonment rates must be nonnegative")

    @property
    def m(self) -> int:
        return self.lambda_n.shape[0]

    @property
    def rho_n(self) -> np.ndarray:
        return self.lambda_n / (self.n * self.mu_n)

    @property
    def varrho_n(self) -> float:
        """Spare capacity sqrt(n) (1 - sum_i lambda^n_i / (n mu^n_i)), never stored."""
        return float(math.sqrt(self.n) * (1.0 - np.sum(self.rho_n)))

    @property
    def beta_n(self) -> np.ndarray:
        return self.gamma_n / self.mu_n

    @property
    def fluid_center(self) -> np.ndarray:
        return self.lambda_n / self.mu_n


def prelimit_params(params: SystemParams, n: int) -> PrelimitParams:
    """n-server rates realizing the Halfin-Whitt limits.

    lambda^n = n lambda + sqrt(n) hat_lambda, mu^n = mu + hat_mu / sqrt(n),
    gamma^n = gamma: the simplest family with the required first- and
    second-order behavior.
    """
    rt = math.sqrt(n)
    return PrelimitParams(
        n=n,
        lambda_n=n * params.lambda_ + rt * params.hat_lambda,
        mu_n=params.mu + params.hat_mu / rt,
        gamma_n=params.gamma.copy(),
    )


@dataclass(frozen=True)
class DiffusionSpec:
    """Drift and covariance data of the limiting diffusion.

    a_diag is the diagonal of a = sigma sigma^T, equal to
    lambda_i (1 + scv_i) = 2 lambda~_i.  Invariant: sum_i lambda~_i/mu_i = 1.
    """

    varrho: float
    mu: np.ndarray
    gamma: np.ndarray
    a_diag: np.ndarray

    def __post_init__(self):
        m = len(np.atleast_1d(self.mu))
        for name in ("mu", "gamma", "a_diag"):
            object.__setattr__(self, name, _as_array(getattr(self, name), m))

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma_diag(self) -> np.ndarray:
        return np.sqrt(self.a_diag)

    @property
    def lambda_tilde(self) -> np.ndarray:
        return 0.5 * self.a_diag

    @property
    def beta(self) -> np.ndarray:
        return self.gamma / self.mu

    @property
    def c_bar(self) -> float:
        """Curvature constant sum_i lambda~_i / mu_i^2."""
        return float(np.sum(self.lambda_tilde / self.mu**2))

    def validate(self, tol: float = 1e-8) -> None:
        s = float(np.sum(self.lambda_tilde / self.mu))
        if abs(s - 1.0) > tol:
            raise ValueError(f"sum lambda~_i/mu_i must be 1, got {s}")


def diffusion_spec(params: SystemParams, varrho: float | None = None) -> DiffusionSpec:
    spec = DiffusionSpec(
        varrho=spare_capacity(params) if varrho is None else float(varrho),
        mu=params.mu.copy(),
        gamma=params.gamma.copy(),
        a_diag=params.lambda_ * (1.0 + params.scv),
    )
    spec.validate()
    return spec


def drift(x, u, spec: DiffusionSpec, check: bool = True) -> np.ndarray:
    """Controlled drift b(x, u); on {<e,x> <= 0} it reduces to the
    u-independent affine branch -(rho/m) M e - M x."""
    x = _as_array(x, spec.m)
    if check:
        u = project_simplex(u)
    else:
        u = _as_array(u)
    pos = np.maximum(x.sum(axis=-1, keepdims=True), 0.0)
    return -(spec.varrho / spec.m) * spec.mu - spec.mu * (x - pos * u) - pos * spec.gamma * u


def drift_truncated(x, u, spec: DiffusionSpec, c: float, check: bool = True) -> np.ndarray:
    """Drift with the abandonment term of class i dropped on {x_i > c}.

    c = inf reproduces ``drift`` exactly; c must be >= 1.
    """
    if not c >= 1.0:
        raise ValueError(f"truncation level must satisfy c >= 1, got {c}")
    x = _as_array(x, spec.m)
    if check:
        u = project_simplex(u)
    else:
        u = _as_array(u)
    pos = np.maximum(x.sum(axis=-1, keepdims=True), 0.0)
    keep = (x <= c).astype(float)
    return -(spec.varrho / spec.m) * spec.mu - spec.mu * (x - pos * u) - pos * spec.gamma * u * keep


def in_cone(x, delta: float) -> np.ndarray:
    """Vectorized cone classification: +1 on K_delta^+, -1 on K_delta^-, 0 otherwise.

    K_delta^+ = {<e,x> >= delta ||x||_1}, K_delta^- = {<e,x> <= -delta ||x||_1}.
    Points satisfying both (only possible when delta = 0 and <e,x> = 0) are
    reported as +1.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    x = _as_array(x)
    s = x.sum(axis=-1)
    r = np.abs(x).sum(axis=-1)
    out = np.zeros(s.shape, dtype=np.int8)
    out[s <= -delta * r] = -1
    out[s >= delta * r] = 1
    return out


def cone_membership(x, delta: float) -> str:
    """Classify a single state against K_delta^+/-: 'plus', 'minus' or 'neither'."""
    code = int(in_cone(np.atleast_2d(_as_array(x)), delta)[0])
    return {1: "plus", -1: "minus", 0: "neither"}[code]


def cone_boundary_gap(x, delta: float) -> np.ndarray:
    """Identity residual <e, x^+> - (1 + sign * delta)/2 ||x||_1 on the cone boundary.

    For x on the boundary of K_delta^{+/-} the positive-part sum equals
    (1 +/- delta)/2 ||x||_1; this helper returns the residual used by tests.
    """
    x = _as_array(x)
    s = x.sum(axis=-1)
    r = np.abs(x).sum(axis=-1)
    plus = np.maximum(x, 0.0).sum(axis=-1)
    sign = np.sign(s)
    return plus - (1.0 + sign * delta) / 2.0 * r


def scale_state(x, p: PrelimitParams) -> np.ndarray:
    """Diffusion scaling: xhat_i = (x_i - lambda^n_i/mu^n_i)/sqrt(n) - varrho^n/m."""
    x = _as_array(x, p.m)
    return (x - p.fluid_center) / math.sqrt(p.n) - p.varrho_n / p.m


def unscale_state(xhat, p: PrelimitParams) -> np.ndarray:
    """Inverse of ``scale_state`` (real-valued; round for lattice states)."""
    xhat = _as_array(xhat, p.m)
    return math.sqrt(p.n) * (xhat + p.varrho_n / p.m) + p.fluid_center


def allocation_to_control(xhat, zhat, tol: float = 1e-9) -> np.ndarray | None:
    """Recover the simplex control u from a scaled work-conserving allocation.

    zhat = xhat - <e,xhat>^+ u.  When <e,xhat> > 0 returns u in Delta; when
    <e,xhat> <= 0 work-conservation forces zhat = xhat and u is unconstrained,
    so None is returned.  Raises WorkConservationError if the input cannot
    have come from a work-conserving allocation.
    """
    xhat = _as_array(xhat)
    zhat = _as_array(zhat, xhat.shape[-1])
    s = float(xhat.sum())
    scale0 = max(1.0, float(np.max(np.abs(xhat))))
    if s <= tol * scale0:
        if np.max(np.abs(zhat - xhat)) > tol * scale0:
            raise WorkConservationError("zhat != xhat although <e,xhat> <= 0")
        return None
    u = (xhat - zhat) / s
    scale = max(1.0, float(np.max(np.abs(xhat))) / s)
    try:
        return project_simplex(u, tol=tol * scale + SIMPLEX_TOL)
    except SimplexError as err:
        raise WorkConservationError(f"recovered control leaves the simplex: {err}") from err
