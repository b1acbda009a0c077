"""Acquisition functions over GP posteriors and the masked argmax selector.

All scoring uses the maximization convention. The standard normal CDF is
computed from scipy's erf, which is deterministic and well below the
1.5e-7 absolute accuracy this module promises.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import InvalidSpecError, SearchExhaustedError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class AcquisitionKind(enum.Enum):
    EI = "ei"
    PI = "pi"
    CB = "cb"


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: AcquisitionKind = AcquisitionKind.EI
    xi: float = 0.0
    kappa: float = 2.0

    def __post_init__(self):
        if self.xi < 0:
            raise InvalidSpecError(f"xi must be >= 0, got {self.xi}")


def _norm_cdf(u):
    return 0.5 * (1.0 + erf(np.asarray(u) / _SQRT2))

def _norm_pdf(u):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.asarray(u) ** 2)


def expected_improvement(mean, sd, best, xi=0.0):
    """Gaussian expected improvement over `best + xi`; 0-uncertainty collapses
    to the plain improvement max(mean - best - xi, 0). Vectorizes over
    mean/sd arrays. Clamped at 0: for deeply negative standardized
    improvement the two closed-form terms cancel to float residue."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    imp = mean - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
        ei = np.where(sd > 0, imp * _norm_cdf(u) + sd * _norm_pdf(u), imp)
    ei = np.maximum(ei, 0.0)
    if ei.ndim == 0:
        return float(ei)
    return ei


def probability_of_improvement(mean, sd, best, xi=0.0):
    """P(improvement beyond best + xi); indicator when sd == 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    imp = mean - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sd > 0, imp / np.where(sd > 0, sd, 1.0), 0.0)
        pi = np.where(sd > 0, _norm_cdf(u), (imp > 0).astype(np.float64))
    if pi.ndim == 0:
        return float(pi)
    return pi


def confidence_bound(mean, sd, kappa):
    """Upper confidence bound mean + kappa * sd (maximization convention)."""
    mean = np.asarray(mean, dtype=np.float64)
    out = mean + kappa * np.asarray(sd, dtype=np.float64)
    if out.ndim == 0:
        return float(out)
    return out


def score(mean, sd, best, config: AcquisitionConfig):
    if config.kind is AcquisitionKind.EI:
        return expected_improvement(mean, sd, best, config.xi)
    if config.kind is AcquisitionKind.PI:
        return probability_of_improvement(mean, sd, best, config.xi)
    if config.kind is AcquisitionKind.CB:
        return confidence_bound(mean, sd, config.kappa)
    raise InvalidSpecError(f"unknown acquisition kind {config.kind!r}")


def select_next(means, sds, best, feasible_mask, evaluated: set[int],
                config: AcquisitionConfig) -> tuple[int, float]:
    """Index of the best-scoring feasible, not-yet-evaluated grid cell.

    Ties break to the lowest (row-major) index. Returns (index, score).
    Raises SearchExhaustedError when no candidate cells remain.
    """
    means = np.asarray(means, dtype=np.float64)
    sds = np.asarray(sds, dtype=np.float64)
    candidates = np.asarray(feasible_mask, dtype=bool).copy()
    if evaluated:
        candidates[np.fromiter(evaluated, dtype=np.int64)] = False
    if not candidates.any():
        raise SearchExhaustedError("no feasible, unevaluated grid cells remain")
    values = np.asarray(score(means, sds, best, config), dtype=np.float64)
    values = np.where(candidates, values, -np.inf)
    idx = int(np.argmax(values))  # argmax returns the first (lowest) max index
    return idx, float(values[idx])
