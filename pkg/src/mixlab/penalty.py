"""Additive variance penalty for normal mixtures with free component variances.

The default per-component penalty is

    p(sigma) = -(1/n) * (a / sigma^2 + log(sigma^2 / a))

with anchor ``a`` (the sample variance for the scale-invariant form, 1.0 for
the raw form).  It tends to -inf as sigma -> 0 and as sigma -> inf and peaks
at sigma^2 = a.  ``form="log_only"`` drops the ``a / sigma^2`` term and is kept
as a negative control: it is too weak to stop a component from collapsing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractViolation, DomainError
from .model import MixingDistribution

INVERSE_GAMMA = "inverse_gamma"
LOG_ONLY = "log_only"
PENALTY_FORMS = (INVERSE_GAMMA, LOG_ONLY)


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty settings.

    ``scale_anchor=None`` means "use the sample variance of the data being
    fitted"; call :meth:`resolve` before evaluating the penalty.
    """

    scale_anchor: float | None = None
    form: str = INVERSE_GAMMA
    strength_mode: str = "per_n"

    def __post_init__(self):
        if self.scale_anchor is not None and not (self.scale_anchor > 0 and math.isfinite(self.scale_anchor)):
            raise ContractViolation(f"scale_anchor must be positive, got {self.scale_anchor}")
        if self.form not in PENALTY_FORMS:
            raise ContractViolation(f"unknown penalty form {self.form!r}")
        if self.strength_mode != "per_n":
            raise ContractViolation(f"unsupported strength_mode {self.strength_mode!r}")

    @classmethod
    def raw(cls, form: str = INVERSE_GAMMA):
        return cls(1.0, form)

    @property
    def anchor_coefficient(self) -> float:
        """Multiplier of a/sigma^2 inside the penalty (0 for the control form)."""
        return 1.0 if self.form == INVERSE_GAMMA else 0.0

    def resolve(self, sample_variance: float) -> "PenaltyConfig":
        if self.scale_anchor is not None:
            return self
        if not sample_variance > 0:
            raise ContractViolation("sample variance is zero; the penalty anchor is undefined")
        return replace(self, scale_anchor=float(sample_variance))

    def to_dict(self):
        return {"scale_anchor": self.scale_anchor, "form": self.form,
                "strength_mode": self.strength_mode}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("scale_anchor"), d.get("form", INVERSE_GAMMA),
                   d.get("strength_mode", "per_n"))


def _anchor(cfg: PenaltyConfig) -> float:
    if cfg.scale_anchor is None:
        raise ContractViolation("penalty anchor unresolved; call PenaltyConfig.resolve first")
    return cfg.scale_anchor


def penalty_component(cfg: PenaltyConfig, n: int, sigma):
    """Penalty for one component with standard deviation ``sigma``."""
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise DomainError(f"sigma must be positive, got {sigma}")
    a = _anchor(cfg)
    # through log v so that sigma^2 underflowing to 0 still gives -inf, not nan
    log_v = 2.0 * np.log(s) - math.log(a)
    out = -log_v / n
    if cfg.anchor_coefficient:
        with np.errstate(over="ignore"):
            out = out - cfg.anchor_coefficient * np.exp(-log_v) / n
    return float(out) if out.ndim == 0 else out


def penalty_total(cfg: PenaltyConfig, n: int, G: MixingDistribution) -> float:
    if not G.has_scale:
        raise ContractViolation("penalty needs atoms with a scale")
    return math.fsum(np.atleast_1d(penalty_component(cfg, n, G.scales)))


@dataclass
class PenaltyReport:
    form: str
    n_grid: list
    sigma_grid: list
    p2_upper_passed: bool
    max_positive_part: dict
    p2_lower_passed: bool
    abs_over_n: dict
    p3_passed: bool
    p3_n0: int | None
    p3_violations: list = field(default_factory=list)
    p3_min_margin: float | None = None

    @property
    def passed(self) -> bool:
        return self.p2_upper_passed and self.p2_lower_passed and self.p3_passed

    def to_dict(self):
        return {
            "form": self.form,
            "passed": self.passed,
            "p2_upper_passed": self.p2_upper_passed,
            "max_positive_part": {str(k): v for k, v in self.max_positive_part.items()},
            "p2_lower_passed": self.p2_lower_passed,
            "p3_passed": self.p3_passed,
            "p3_n0": self.p3_n0,
            "p3_min_margin": self.p3_min_margin,
            "p3_violations": self.p3_violations,
        }


def _nonincreasing_to_smaller(values) -> bool:
    values = list(values)
    if all(v == 0 for v in values):
        return True
    steps_ok = all(b <= a for a, b in zip(values, values[1:]))
    return steps_ok and values[-1] < values[0]


def validate_penalty_properties(cfg: PenaltyConfig, n_grid, sigma_grid) -> PenaltyReport:
    """Certify the P2 and P3 conditions on finite grids.

    P2 (upper): sup of the positive part, divided by n, shrinks along n_grid.
    P2 (lower): |p(sigma)|/n shrinks along n_grid at every fixed sigma.
    P3: p(sigma) < (log n)^2 log(sigma) at every grid sigma < log(n)/n, for all
    grid n >= n0; ``p3_n0`` is the smallest such grid n (None if none).  P3
    only passes when at least one grid sigma was actually tested past n0.
    """
    n_grid = sorted(int(n) for n in n_grid)
    sigmas = np.sort(np.asarray(sigma_grid, dtype=float))
    if not n_grid or sigmas.size == 0:
        raise ContractViolation("grids must be nonempty")
    a = _anchor(cfg)
    probe = np.append(sigmas, math.sqrt(a))

    max_pos = {}
    ratios = {}
    for n in n_grid:
        p = penalty_component(cfg, n, probe)
        max_pos[n] = float(np.max(np.maximum(p, 0.0)))
        ratios[n] = np.abs(penalty_component(cfg, n, sigmas)) / n
    p2_upper = _nonincreasing_to_smaller(max_pos[n] / n for n in n_grid)
    p2_lower = all(
        _nonincreasing_to_smaller(ratios[n][k] for n in n_grid) for k in range(sigmas.size)
    )

    holds = {}
    violations = []
    margins = {}
    for n in n_grid:
        small = sigmas[sigmas < math.log(n) / n]
        if small.size == 0:
            holds[n] = True
            continue
        p = np.atleast_1d(penalty_component(cfg, n, small))
        rhs = math.log(n) ** 2 * np.log(small)
        margin = rhs - p
        margins[n] = float(np.min(margin))
        bad = margin <= 0
        holds[n] = not bool(np.any(bad))
        for s, pv, rv in zip(small[bad], p[bad], rhs[bad]):
            violations.append({"n": n, "sigma": float(s), "penalty": float(pv), "bound": float(rv)})

    n0 = None
    for n in reversed(n_grid):
        if not holds[n]:
            break
        n0 = n
    tail_margins = [margins[n] for n in n_grid if n0 is not None and n >= n0 and n in margins]
    return PenaltyReport(
        form=cfg.form,
        n_grid=n_grid,
        sigma_grid=[float(s) for s in sigmas],
        p2_upper_passed=p2_upper,
        max_positive_part=max_pos,
        p2_lower_passed=p2_lower,
        abs_over_n={n: r.tolist() for n, r in ratios.items()},
        p3_passed=bool(tail_margins),
        p3_n0=n0,
        p3_violations=violations,
        p3_min_margin=min(tail_margins) if tail_margins else None,
    )
