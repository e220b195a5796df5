"""Mixing distributions, component families and mixture densities.

All density arithmetic is carried out on the log scale.  A mixture
log-density is reduced with the max-shift (log-sum-exp) trick so that
components with very small scales (down to ``1e-150``) neither overflow nor
produce NaNs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from .errors import ContractViolation, DomainError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
MASS_TOL = 1e-12
INTEGER_TOL = 1e-9

POISSON = "poisson"
NORMAL_EQUAL = "normal_equal"
NORMAL_FREE = "normal_free"
FAMILY_KINDS = (POISSON, NORMAL_EQUAL, NORMAL_FREE)


@dataclass(frozen=True)
class ParamPoint:
    """Parameter of a single mixture component.

    ``mean`` holds the Poisson rate or the normal location; ``scale`` is the
    normal standard deviation and is only present for free-variance atoms.
    """

    mean: float
    scale: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mean", float(self.mean))
        if self.scale is not None:
            object.__setattr__(self, "scale", float(self.scale))
        if not math.isfinite(self.mean):
            raise ContractViolation(f"atom mean must be finite, got {self.mean}")
        if self.scale is not None and not (self.scale > 0 and math.isfinite(self.scale)):
            raise ContractViolation(f"atom scale must be positive, got {self.scale}")

    def sort_key(self):
        return (self.mean, -math.inf if self.scale is None else self.scale)

    def to_dict(self):
        return {"mean": self.mean, "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d.get("scale"))


def as_atom(value) -> ParamPoint:
    """Coerce a number, ``(mean, scale)`` pair or mapping into a ParamPoint."""
    if isinstance(value, ParamPoint):
        return value
    if isinstance(value, dict):
        return ParamPoint.from_dict(value)
    if isinstance(value, (tuple, list)):
        if len(value) == 1:
            return ParamPoint(value[0])
        if len(value) == 2:
            return ParamPoint(value[0], value[1])
        raise ContractViolation(f"cannot interpret {value!r} as an atom")
    return ParamPoint(value)


@dataclass(frozen=True)
class ComponentFamily:
    """The parametric kernel being mixed.

    Use the constructors :meth:`poisson`, :meth:`normal_equal` and
    :meth:`normal_free` rather than building instances by hand.
    """

    kind: str
    sigma2: float | None = None

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ContractViolation(f"unknown component family {self.kind!r}")
        if self.kind == NORMAL_EQUAL:
            if self.sigma2 is None or not (float(self.sigma2) > 0 and math.isfinite(self.sigma2)):
                raise ContractViolation("equal-variance family needs a structural sigma2 > 0")
            object.__setattr__(self, "sigma2", float(self.sigma2))
        elif self.sigma2 is not None:
            raise ContractViolation(f"{self.kind} family takes no structural variance")

    @classmethod
    def poisson(cls):
        return cls(POISSON)

    @classmethod
    def normal_equal(cls, sigma2: float):
        return cls(NORMAL_EQUAL, sigma2)

    @classmethod
    def normal_free(cls):
        return cls(NORMAL_FREE)

    @property
    def is_normal(self) -> bool:
        return self.kind != POISSON

    def with_sigma2(self, sigma2: float) -> "ComponentFamily":
        if self.kind != NORMAL_EQUAL:
            raise ContractViolation("only the equal-variance family has a structural variance")
        return ComponentFamily(NORMAL_EQUAL, sigma2)

    def validate_atom(self, atom: ParamPoint) -> None:
        if self.kind == NORMAL_FREE:
            if atom.scale is None:
                raise ContractViolation("free-variance normal atoms need a scale")
        elif atom.scale is not None:
            raise ContractViolation(f"{self.kind} atoms must not carry a scale")
        if self.kind == POISSON and atom.mean < 0:
            raise ContractViolation(f"Poisson rate must be >= 0, got {atom.mean}")

    def to_dict(self):
        d = {"kind": self.kind}
        if self.sigma2 is not None:
            d["sigma2"] = self.sigma2
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("sigma2"))


@dataclass(frozen=True)
class MixingDistribution:
    """Finitely supported mixing law, possibly a sub-distribution.

    ``weights`` are the atom masses; they sum to ``mass`` which may be
    smaller than one.  Construction does not reorder atoms; see
    :func:`canonicalize`.
    """

    atoms: tuple
    weights: tuple
    mass: float | None = field(default=None)

    def __post_init__(self):
        atoms = tuple(as_atom(a) for a in self.atoms)
        weights = tuple(float(w) for w in self.weights)
        if not atoms:
            raise ContractViolation("a mixing distribution needs at least one atom")
        if len(atoms) != len(weights):
            raise ContractViolation(
                f"{len(atoms)} atoms but {len(weights)} weights"
            )
        for w in weights:
            if not (w > 0 and math.isfinite(w)):
                raise ContractViolation(f"weights must be positive and finite, got {w}")
        total = math.fsum(weights)
        mass = total if self.mass is None else float(self.mass)
        if abs(mass - total) > MASS_TOL:
            raise ContractViolation(f"weights sum to {total!r}, not mass {mass!r}")
        if not 0 < mass <= 1 + MASS_TOL:
            raise ContractViolation(f"mass must lie in (0, 1], got {mass}")
        has_scale = {a.scale is not None for a in atoms}
        if len(has_scale) > 1:
            raise ContractViolation("atoms must either all carry a scale or none")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "mass", min(mass, 1.0))

    @classmethod
    def point_mass(cls, mean, scale=None):
        """delta at ``mean`` (a number, (mean, scale) pair, dict or ParamPoint)."""
        atom = as_atom(mean) if scale is None else ParamPoint(mean, scale)
        return cls((atom,), (1.0,))

    @classmethod
    def from_arrays(cls, weights, means, scales=None):
        means = np.atleast_1d(np.asarray(means, dtype=float))
        if scales is None:
            atoms = [ParamPoint(m) for m in means]
        else:
            atoms = [ParamPoint(m, s) for m, s in zip(means, np.atleast_1d(scales))]
        return cls(tuple(atoms), tuple(np.atleast_1d(weights)))

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def has_scale(self) -> bool:
        return self.atoms[0].scale is not None

    @property
    def means(self) -> np.ndarray:
        return np.array([a.mean for a in self.atoms])

    @property
    def scales(self) -> np.ndarray:
        if not self.has_scale:
            raise ContractViolation("atoms carry no scale")
        return np.array([a.scale for a in self.atoms])

    @property
    def weight_array(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def proportions(self) -> np.ndarray:
        w = np.array(self.weights)
        return w / w.sum()

    def with_mass(self, rho: float) -> "MixingDistribution":
        """Rescale to total mass ``rho`` (the sub-distribution rho*G)."""
        if not 0 < rho <= 1:
            raise ContractViolation(f"mass must lie in (0, 1], got {rho}")
        p = self.proportions
        weights = tuple(float(x) for x in p * rho)
        return MixingDistribution(self.atoms, weights, mass=math.fsum(weights))

    def to_dict(self):
        return {
            "atoms": [a.to_dict() for a in self.atoms],
            "weights": list(self.weights),
            "mass": self.mass,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(ParamPoint.from_dict(a) for a in d["atoms"]),
            tuple(d["weights"]),
            d.get("mass"),
        )


def mixing(weights: Sequence[float], atoms: Iterable) -> MixingDistribution:
    """Build a canonical mixing distribution, dropping zero weights."""
    pairs = [(float(w), as_atom(a)) for w, a in zip(weights, atoms)]
    pairs = [(w, a) for w, a in pairs if w != 0.0]
    if not pairs:
        raise ContractViolation("all weights are zero")
    return canonicalize(
        MixingDistribution(tuple(a for _, a in pairs), tuple(w for w, _ in pairs))
    )


def canonicalize(G: MixingDistribution) -> MixingDistribution:
    """Sort atoms by (mean, scale) and merge bitwise-equal atoms.

    Returns ``G`` itself when it is already canonical.
    """
    order = sorted(range(G.size), key=lambda j: G.atoms[j].sort_key())
    atoms: list[ParamPoint] = []
    weights: list[float] = []
    for j in order:
        a, w = G.atoms[j], G.weights[j]
        if atoms and atoms[-1] == a:
            weights[-1] += w
        else:
            atoms.append(a)
            weights.append(w)
    if tuple(atoms) == G.atoms and tuple(weights) == G.weights:
        return G
    return MixingDistribution(tuple(atoms), tuple(weights), mass=G.mass)


def is_canonical(G: MixingDistribution) -> bool:
    keys = [a.sort_key() for a in G.atoms]
    return all(k1 < k2 for k1, k2 in zip(keys, keys[1:]))


def convex_combination(G1: MixingDistribution, G2: MixingDistribution, u: float) -> MixingDistribution:
    """The mixing distribution u*G1 + (1 - u)*G2."""
    if not 0 <= u <= 1:
        raise ContractViolation(f"u must lie in [0, 1], got {u}")
    weights = [u * w for w in G1.weights] + [(1 - u) * w for w in G2.weights]
    return mixing(weights, G1.atoms + G2.atoms)


def _check_compatible(family: ComponentFamily, G: MixingDistribution) -> None:
    for a in G.atoms:
        family.validate_atom(a)


def _poisson_counts(x: np.ndarray) -> np.ndarray:
    r = np.rint(x)
    bad = (np.abs(x - r) > INTEGER_TOL) | (r < 0) | ~np.isfinite(x)
    if np.any(bad):
        raise DomainError(
            f"Poisson observations must be nonnegative integers, got {x[bad][0]!r}"
        )
    return r


def _logpdf_matrix(family: ComponentFamily, means, scales, x) -> np.ndarray:
    """log f(x_i; theta_j) as an (n, m) array."""
    x = np.asarray(x, dtype=float)[:, None]
    means = np.asarray(means, dtype=float)[None, :]
    if family.kind == POISSON:
        k = _poisson_counts(x)
        return xlogy(k, means) - means - gammaln(k + 1.0)
    if scales is None:
        scales = math.sqrt(family.sigma2)
    scales = np.asarray(scales, dtype=float)
    z = (x - means) / scales
    return -0.5 * z * z - np.log(scales) - LOG_SQRT_2PI


def component_logpdf_matrix(family: ComponentFamily, G: MixingDistribution, x) -> np.ndarray:
    _check_compatible(family, G)
    scales = G.scales if family.kind == NORMAL_FREE else None
    return _logpdf_matrix(family, G.means, scales, np.atleast_1d(x))


def component_logpdf(family: ComponentFamily, atom, x):
    atom = as_atom(atom)
    family.validate_atom(atom)
    scalar = np.ndim(x) == 0
    out = _logpdf_matrix(family, [atom.mean], None if atom.scale is None else [atom.scale],
                         np.atleast_1d(x))[:, 0]
    return float(out[0]) if scalar else out


def component_density(family: ComponentFamily, atom, x):
    """Density (or pmf) of one component, evaluated through its log."""
    out = np.exp(component_logpdf(family, atom, x))
    return float(out) if np.ndim(out) == 0 else out


def _normalized_logpdf(family, G, x):
    L = component_logpdf_matrix(family, G, x)
    with np.errstate(divide="ignore"):
        return logsumexp(L + np.log(G.proportions)[None, :], axis=1)


def mixture_logpdf(family: ComponentFamily, G: MixingDistribution, x):
    """log f(x; G) for a (sub-)distribution G, vectorised over ``x``."""
    out = _normalized_logpdf(family, G, x) + math.log(G.mass)
    return float(out[0]) if np.ndim(x) == 0 else out


def mixture_density(family: ComponentFamily, G: MixingDistribution, x):
    # mass applied outside exp so that f(x; rho G) = rho f(x; G) holds exactly
    out = G.mass * np.exp(_normalized_logpdf(family, G, x))
    return float(out[0]) if np.ndim(x) == 0 else out


def _values(sample) -> np.ndarray:
    return sample.values if isinstance(sample, Sample) else np.asarray(sample, dtype=float)


def log_likelihood(family: ComponentFamily, G: MixingDistribution, sample) -> float:
    """Sum of log mixture densities; ``-inf`` if any observation has zero density."""
    x = np.atleast_1d(_values(sample))
    L = component_logpdf_matrix(family, G, x)
    with np.errstate(divide="ignore"):
        per_obs = logsumexp(L + np.log(G.proportions)[None, :], axis=1)
    if np.any(per_obs == -np.inf):
        return -math.inf
    return float(math.fsum(per_obs) + x.size * math.log(G.mass))


@dataclass(frozen=True, eq=False)
class Sample:
    """Observed data plus the seed and generator that produced it."""

    values: np.ndarray
    seed: int | None = None
    provenance: dict | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ContractViolation("a sample needs at least one value")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("sample values must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.n

    def mean(self) -> float:
        return float(np.mean(self.values))

    def variance(self) -> float:
        """Sample variance with denominator n."""
        return float(np.var(self.values))

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (np.array_equal(self.values, other.values) and self.seed == other.seed
                and self.provenance == other.provenance)

    __hash__ = None


def sample_mixture(family: ComponentFamily, G: MixingDistribution, n: int, seed: int) -> Sample:
    """Draw n observations: atom index by weight, then the component draw."""
    if abs(G.mass - 1.0) > MASS_TOL:
        raise ContractViolation(f"cannot sample a sub-distribution (mass {G.mass})")
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    _check_compatible(family, G)
    rng = np.random.default_rng(seed)
    idx = rng.choice(G.size, size=n, p=G.proportions)
    means = G.means[idx]
    if family.kind == POISSON:
        values = rng.poisson(means).astype(float)
    else:
        scales = G.scales[idx] if family.kind == NORMAL_FREE else math.sqrt(family.sigma2)
        values = rng.normal(means, scales)
    provenance = {"family": family.to_dict(), "G": G.to_dict()}
    return Sample(values, seed=seed, provenance=provenance)


@dataclass(frozen=True, eq=False)
class EmpiricalCDF:
    sorted_values: np.ndarray

    def __post_init__(self):
        v = np.sort(np.asarray(self.sorted_values, dtype=float).ravel())
        if v.size == 0:
            raise ContractViolation("empty empirical CDF")
        v.flags.writeable = False
        object.__setattr__(self, "sorted_values", v)

    @classmethod
    def from_sample(cls, sample) -> "EmpiricalCDF":
        return cls(_values(sample))

    @property
    def n(self) -> int:
        return int(self.sorted_values.size)

    def __call__(self, x):
        counts = np.searchsorted(self.sorted_values, x, side="right")
        return counts / self.n


def cdf_window_sup(ecdf: EmpiricalCDF, eps: float) -> float:
    """Exact sup over theta of F_n(theta + eps) - F_n(theta).

    A window (theta, theta + eps] holds a run x_i <= ... <= x_j exactly when
    x_j - x_i < eps, so it suffices to anchor theta just below each x_i.
    """
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    xs = ecdf.sorted_values
    left = np.searchsorted(xs, xs, side="left")
    right = np.searchsorted(xs, xs + eps, side="left")
    return float(np.max(right - left)) / ecdf.n
