"""Empirical measures built from simulation output, with moment and tail queries.

A measure carries (i) thinned state snapshots with weights, used for
histograms and tail fits, and (ii) exact per-replica time integrals of a
declared list of moment functionals, used for means with replica-level
standard errors.  Merging measures is associative and order-independent up
to float addition; replicas are always combined in index order so replays
are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORMALIZATION_TOL = 1e-12


@dataclass
class EmpiricalMeasure:
    """Weighted sample representation of a time-average or terminal-time law."""

    samples: np.ndarray                    # (N, m) thinned states
    weights: np.ndarray                    # (N,)
    replica_time: np.ndarray               # (R,) accumulated (post burn-in) time
    replica_integrals: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (R,)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        self.replica_time = np.asarray(self.replica_time, dtype=float)

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def normalized_weights(self) -> np.ndarray:
        w = self.weights / self.weights.sum()
        assert abs(w.sum() - 1.0) <= NORMALIZATION_TOL
        return w

    def moment(self, name: str) -> tuple[float, float]:
        """Time-average of a declared functional with a replica-spread SE."""
        if name not in self.replica_integrals:
            raise KeyError(f"moment {name!r} was not accumulated; have {sorted(self.replica_integrals)}")
        integ = self.replica_integrals[name]
        live = self.replica_time > 0
        if not np.any(live):
            raise ValueError("no replica accumulated any time (all tripped before burn-in?)")
        est = float(integ[live].sum() / self.replica_time[live].sum())
        per_rep = integ[live] / self.replica_time[live]
        r = int(live.sum())
        se = float(per_rep.std(ddof=1) / np.sqrt(r)) if r > 1 else float("inf")
        return est, se

    def sample_mean(self, fn) -> float:
        w = self.normalized_weights()
        return float(np.sum(w * fn(self.samples)))

    def tail_values(self, direction) -> np.ndarray:
        """Scalar functional of each snapshot for tail estimation.

        direction: 'l1', ('neg_coord', i), or ('neg_sum', index tuple).
        """
        x = self.samples
        if direction == "l1":
            return np.abs(x).sum(axis=1)
        kind, arg = direction
        if kind == "neg_coord":
            return np.maximum(-x[:, int(arg)], 0.0)
        if kind == "neg_sum":
            idx = list(arg)
            return np.maximum(-x[:, idx], 0.0).sum(axis=1)
        raise ValueError(f"unknown tail direction {direction!r}")

    def histogram(self, bins_per_dim: int, box: tuple[np.ndarray, np.ndarray] | None = None):
        """Fixed-width histogram over a box; returns (edges list, weights array)."""
        if box is None:
            lo = self.samples.min(axis=0)
            hi = self.samples.max(axis=0)
            pad = 1e-9 + 0.01 * (hi - lo)
            lo, hi = lo - pad, hi + pad
        else:
            lo, hi = box
        edges = [np.linspace(lo[d], hi[d], bins_per_dim + 1) for d in range(self.m)]
        h, _ = np.histogramdd(self.samples, bins=edges, weights=self.normalized_weights())
        return edges, h

    def merge(self, other: "EmpiricalMeasure") -> "EmpiricalMeasure":
        keys = set(self.replica_integrals) | set(other.replica_integrals)
        integrals = {}
        for k in sorted(keys):
            a = self.replica_integrals.get(k, np.zeros(len(self.replica_time)))
            b = other.replica_integrals.get(k, np.zeros(len(other.replica_time)))
            integrals[k] = np.concatenate([a, b])
        return EmpiricalMeasure(
            samples=np.concatenate([self.samples, other.samples], axis=0),
            weights=np.concatenate([self.weights, other.weights]),
            replica_time=np.concatenate([self.replica_time, other.replica_time]),
            replica_integrals=integrals,
        )


def from_samples(samples, weights=None) -> EmpiricalMeasure:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    return EmpiricalMeasure(samples, weights, replica_time=np.array([float(n)]),
                            replica_integrals={})


@dataclass
class TailFit:
    form: str            # "exponential" (log mass ~ r) or "sub_gaussian" (~ r^2)
    slope: float
    intercept: float
    r2: float
    r_lo: float
    r_hi: float
    n_levels: int
    flag: str = ""

    @property
    def ok(self) -> bool:
        return not self.flag


def fit_tail(values: np.ndarray, weights: np.ndarray, form: str,
             min_tail_count: int = 50, n_levels: int = 40,
             start_quantile: float = 0.5) -> TailFit:
    """Least-squares slope of log tail mass against r (or r^2) over the
    resolvable range [quantile(start), largest r with >= min_tail_count
    samples beyond]."""
    if form not in ("exponential", "sub_gaussian"):
        raise ValueError(f"unknown tail form {form!r}")
    values = np.asarray(values, dtype=float)
    order = np.argsort(values)
    v = values[order]
    w = np.asarray(weights, dtype=float)[order]
    w = w / w.sum()
    surv = np.concatenate([[1.0], 1.0 - np.cumsum(w)[:-1]])  # P(X >= v_k)

    lo = float(np.interp(start_quantile, np.cumsum(w), v))
    if len(v) <= min_tail_count:
        return TailFit(form, 0.0, 0.0, 0.0, lo, lo, 0, flag="insufficient tail samples")
    hi = float(v[-min_tail_count])
    if hi <= lo:
        return TailFit(form, 0.0, 0.0, 0.0, lo, hi, 0, flag="tail range empty")
    grid = np.linspace(lo, hi, n_levels)
    mass = np.array([float(surv[np.searchsorted(v, r)]) if np.searchsorted(v, r) < len(v) else 0.0
                     for r in grid])
    keep = mass > 0
    grid, mass = grid[keep], mass[keep]
    if len(grid) < 4:
        return TailFit(form, 0.0, 0.0, 0.0, lo, hi, len(grid), flag="insufficient tail levels")
    y = np.log(mass)
    xr = grid if form == "exponential" else grid**2
    A = np.vstack([xr, np.ones_like(xr)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return TailFit(form, float(coef[0]), float(coef[1]), r2,
                   float(grid[0]), float(grid[-1]), len(grid))


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation between two binned probability vectors."""
    p = p / p.sum()
    q = q / q.sum()
    return 0.5 * float(np.abs(p - q).sum())
