"""Dataset containers, validation, the shift policy, and support bounds.

The observed unit is ``(W, C, C*A, Y)``: covariates on everyone, an
exposure measured only on the second-phase subsample (``C = 1``), and a
bounded outcome. Unmeasured exposures are stored as NaN sentinels rather
than zeros so that accidental use is loud.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ObservedDataset:
    """Validated, immutable sample of (W, C, C*A, Y) rows.

    ``a`` holds NaN exactly where ``c == 0``; use :meth:`exposure` or
    :attr:`a_obs` for guarded access. ``y_scale`` records the original
    outcome range when min-max scaling was applied at ingestion.
    """

    w: np.ndarray
    a: np.ndarray
    y: np.ndarray
    c: np.ndarray
    ids: np.ndarray
    y_scale: tuple = (0.0, 1.0)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        a = np.asarray(self.a, dtype=np.float64).ravel()
        y = np.asarray(self.y, dtype=np.float64).ravel()
        c = np.asarray(self.c)
        ids = np.asarray(self.ids)
        n = w.shape[0]
        if not (a.size == y.size == c.size == ids.size == n):
            raise DataError("field lengths disagree")
        if n < 2:
            raise DataError("need at least 2 rows")
        if not np.isin(c, (0, 1)).all():
            raise DataError("C entries must be 0 or 1")
        c = c.astype(np.int8)
        if int(c.sum()) < 1:
            raise DataError("no second-phase rows (C=1)")
        if not np.isfinite(w).all():
            raise DataError("non-finite covariate values")
        if not np.isfinite(y).all():
            raise DataError("non-finite outcome values")
        if np.any((y < 0) | (y > 1)):
            raise DataError("outcome outside [0,1]")
        phase2 = c == 1
        if not np.isfinite(a[phase2]).all():
            raise DataError("A missing in second-phase row")
        a = a.copy()
        a[~phase2] = np.nan
        for name, arr in (("w", w), ("a", a), ("y", y), ("c", c), ("ids", ids)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def n_covariates(self):
        return self.w.shape[1]

    @property
    def phase2(self):
        return self.c == 1

    @property
    def n_phase2(self):
        return int(self.c.sum())

    @property
    def a_obs(self):
        return self.a[self.phase2]

    @property
    def w_obs(self):
        return self.w[self.phase2]

    @property
    def y_obs(self):
        return self.y[self.phase2]

    def exposure(self, rows=None):
        """Exposure values for the requested rows; raises outside phase 2."""
        if rows is None:
            rows = np.arange(self.n)
        rows = np.asarray(rows)
        if np.any(self.c[rows] == 0):
            raise DataError("exposure accessed on a row with C=0")
        return self.a[rows]

    def phase2_subset(self):
        """The complete-case restriction (all C=1), reindexed."""
        mask = self.phase2
        return ObservedDataset(
            w=self.w[mask].copy(),
            a=self.a[mask].copy(),
            y=self.y[mask].copy(),
            c=np.ones(int(mask.sum()), dtype=np.int8),
            ids=self.ids[mask].copy(),
            y_scale=self.y_scale,
        )

    def to_frame(self):
        cols = {f"w{j + 1}": self.w[:, j] for j in range(self.n_covariates)}
        cols["a"] = self.a
        cols["y"] = self.y
        cols["c"] = self.c
        return pd.DataFrame(cols)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, na_rep="")

    def unscale_y(self, value):
        lo, hi = self.y_scale
        return lo + np.asarray(value) * (hi - lo)


def validate(table, scale_y=False):
    """Build an :class:`ObservedDataset` from a tabular source.

    Expects columns ``w1..wp, a, y, c``; the ``a`` cell may be empty only
    where ``c = 0``. With ``scale_y=True`` an out-of-range outcome is
    min-max scaled to [0,1] and the original bounds retained.
    """
    df = pd.DataFrame(table)
    lower = {str(name).strip().lower(): name for name in df.columns}
    for required in ("a", "y", "c"):
        if required not in lower:
            raise DataError(f"missing column '{required}'")
    wnames = sorted(
        (name for name in lower if name.startswith("w") and name[1:].isdigit()),
        key=lambda s: int(s[1:]),
    )
    if not wnames:
        raise DataError("missing covariate columns 'w1..wp'")
    expected = [f"w{k + 1}" for k in range(len(wnames))]
    if wnames != expected:
        raise DataError(f"covariate columns must be consecutive w1..wp, got {wnames}")

    w = df[[lower[name] for name in wnames]].to_numpy(dtype=np.float64)
    a = pd.to_numeric(df[lower["a"]], errors="coerce").to_numpy(dtype=np.float64)
    y = pd.to_numeric(df[lower["y"]], errors="coerce").to_numpy(dtype=np.float64)
    c_raw = pd.to_numeric(df[lower["c"]], errors="coerce").to_numpy()
    if np.any(~np.isfinite(c_raw)) or np.any(~np.isin(c_raw, (0, 1))):
        raise DataError("C entries must be 0 or 1")
    c = c_raw.astype(np.int8)

    y_scale = (0.0, 1.0)
    if scale_y and np.isfinite(y).all():
        lo, hi = float(y.min()), float(y.max())
        if hi > lo and (lo < 0.0 or hi > 1.0):
            y = (y - lo) / (hi - lo)
            y_scale = (lo, hi)

    return ObservedDataset(
        w=w, a=a, y=y, c=c, ids=np.arange(len(df)), y_scale=y_scale
    )


def read_csv(path, scale_y=False):
    return validate(
        pd.read_csv(path, float_precision="round_trip"), scale_y=scale_y
    )


SUPPORT_MODES = ("empirical_max", "density_threshold", "unbounded")


@dataclass(frozen=True)
class ShiftSpec:
    """An additive exposure shift with a support-bound rule.

    ``delta`` is the constant shift applied wherever it stays inside the
    estimated exposure support. ``density_threshold`` derives a per-row
    upper bound from a fitted conditional density; ``unbounded`` never
    truncates (appropriate when the exposure's support is the whole line).
    """

    delta: float
    support_mode: str = "empirical_max"
    density_eps: float = 0.01

    def __post_init__(self):
        if not np.isfinite(self.delta):
            raise DataError("delta must be finite")
        if self.support_mode not in SUPPORT_MODES:
            raise DataError(f"support_mode must be one of {SUPPORT_MODES}")
        if not 0.0 < self.density_eps < 1.0:
            raise DataError("density_eps must lie in (0, 1)")


@dataclass(frozen=True)
class SupportBound:
    """Upper support bound ``u(w)`` of the exposure given covariates."""

    mode: str
    constant: float = np.inf
    density: object = None
    eps: float = 0.01

    def evaluate(self, W):
        W = np.asarray(W, dtype=np.float64)
        if W.ndim == 1:
            W = W[None, :]
        if self.mode == "density_threshold":
            return np.asarray(self.density.support_upper(W, self.eps), dtype=np.float64)
        return np.full(W.shape[0], self.constant)


def estimate_support_bound(data, spec, density=None):
    """Estimate ``u(w)`` per the shift spec's support mode.

    ``empirical_max`` uses the largest observed second-phase exposure as a
    constant bound; ``density_threshold`` needs a fitted conditional
    density model exposing ``support_upper(W, eps)``.
    """
    if data.n_phase2 < 1:
        raise DataError("support bound needs at least one second-phase row")
    if spec.support_mode == "empirical_max":
        return SupportBound(mode="empirical_max", constant=float(data.a_obs.max()))
    if spec.support_mode == "unbounded":
        return SupportBound(mode="unbounded", constant=np.inf)
    if density is None:
        raise DataError("density_threshold support mode needs a fitted density model")
    return SupportBound(mode="density_threshold", density=density, eps=spec.density_eps)


def shift(a, w, spec, bound):
    """The policy value d(a, w): ``a + delta`` when that stays within
    ``u(w)``, otherwise ``a`` unchanged."""
    u = bound.evaluate(np.atleast_2d(w))
    a = np.asarray(a, dtype=np.float64)
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    shifted = np.where(a + spec.delta <= u, a + spec.delta, a)
    return float(shifted[0]) if scalar else shifted


def shift_all(a_values, W, spec, bound):
    """Vectorized shift over aligned exposure rows."""
    u = bound.evaluate(W)
    a_values = np.asarray(a_values, dtype=np.float64)
    return np.where(a_values + spec.delta <= u, a_values + spec.delta, a_values)
