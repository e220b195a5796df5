"""Numerical witnesses for the inequalities and counterexamples behind
mixture-model consistency.

Every check returns a :class:`CheckReport` whose ``passed`` flag is the
comparison ``statistic <op> threshold``; checks with several conditions fold
them into a single worst-case margin compared against zero.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaincc, gammaln

from .errors import ContractViolation, DomainError
from .estimators import EQUAL_VARIANCE, FitConfig, em_fit
from .model import (
    LOG_SQRT_2PI,
    ComponentFamily,
    EmpiricalCDF,
    MixingDistribution,
    _values,
    canonicalize,
    cdf_window_sup,
    component_logpdf,
    log_likelihood,
    mixture_logpdf,
    sample_mixture,
)

_OPS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt}


@dataclass
class CheckReport:
    name: str
    statistic: float
    threshold: float
    comparison: str
    standard_error: float | None = None
    details: str = ""
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(_OPS[self.comparison](self.statistic, self.threshold))

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        se = "" if self.standard_error is None else f" (se {self.standard_error:.3g})"
        return (f"[{verdict}] {self.name}: {self.statistic:.6g}{se} "
                f"{self.comparison} {self.threshold:.6g}")

    def to_dict(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "comparison": self.comparison,
            "standard_error": self.standard_error,
            "details": self.details,
            "data": self.data,
        }


def _mc_mean(values):
    values = np.asarray(values, dtype=float)
    est = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return est, se


def check_jensen_kl(family: ComponentFamily, G_star: MixingDistribution, G_alt: MixingDistribution,
                    mc_n: int = 100_000, seed: int = 0) -> CheckReport:
    """Monte Carlo estimate of E* log{f(X; G_alt) / f(X; G*)}, which must be <= 0."""
    if mc_n < 2:
        raise ContractViolation("mc_n must be at least 2")
    G_star, G_alt = canonicalize(G_star), canonicalize(G_alt)
    x = sample_mixture(family, G_star, mc_n, seed).values
    terms = mixture_logpdf(family, G_alt, x) - mixture_logpdf(family, G_star, x)
    est, se = _mc_mean(terms)
    return CheckReport(
        name="jensen_kl",
        statistic=est,
        threshold=3 * se if math.isfinite(se) else 0.0,
        comparison="<=",
        standard_error=se,
        details="estimate of -KL(f*, f_alt); nonpositive within 3 standard errors",
        data={"mc_n": mc_n, "seed": seed},
    )


def pfanzagl_terms(log_ratio, u: float) -> np.ndarray:
    """log{1 + u (exp(log_ratio) - 1)}, exactly 0 where log_ratio == 0."""
    d = np.asarray(log_ratio, dtype=float)
    out = np.empty_like(d)
    big = d > 700
    neg = d < 0
    mid = ~(big | neg)
    out[mid] = np.log1p(u * np.expm1(d[mid]))
    # log{(1-u) + u e^d}: logaddexp never rounds below its first argument
    out[neg] = np.logaddexp(math.log1p(-u), math.log(u) + d[neg])
    out[big] = d[big] + math.log(u) + np.log1p((1 - u) / u * np.exp(-d[big]))
    return out


def check_pfanzagl(family: ComponentFamily, G_star: MixingDistribution, G_alt: MixingDistribution,
                   u: float = 0.5, mc_n: int = 100_000, seed: int = 0) -> CheckReport:
    """Monte Carlo estimate of E* log{1 + u[f*(X)/f(X) - 1]}, which must be >= 0.

    Every summand is also checked against the floor log(1 - u); a breach
    sets the statistic to -inf.
    """
    if not 0 < u < 1:
        raise ContractViolation(f"u must lie in (0, 1), got {u}")
    G_star, G_alt = canonicalize(G_star), canonicalize(G_alt)
    x = sample_mixture(family, G_star, mc_n, seed).values
    with np.errstate(invalid="ignore"):
        log_ratio = mixture_logpdf(family, G_star, x) - mixture_logpdf(family, G_alt, x)
    terms = pfanzagl_terms(log_ratio, u)
    floor = math.log1p(-u)
    floor_ok = bool(np.all(terms >= floor))
    est, se = _mc_mean(terms)
    return CheckReport(
        name="pfanzagl",
        statistic=est if floor_ok else -math.inf,
        threshold=-3 * se if math.isfinite(se) else 0.0,
        comparison=">=",
        standard_error=se,
        details=f"summand floor log(1-u)={floor:.6g} {'respected' if floor_ok else 'VIOLATED'}",
        data={"u": u, "mc_n": mc_n, "seed": seed, "min_term": float(np.min(terms)),
              "floor": floor, "floor_ok": floor_ok},
    )


def finite_grid_mle_demo(family: ComponentFamily, theta_star, candidates, n_grid, reps: int = 200,
                         seed: int = 0) -> CheckReport:
    """Fraction of replications in which the MLE over a finite candidate set is theta*.

    Passes when the fraction is nondecreasing in n up to one inversion and
    reaches 0.99 at the largest n.  The statistic is the worst margin of the
    two conditions.
    """
    cands = [MixingDistribution.point_mass(c) if not isinstance(c, MixingDistribution) else c
             for c in candidates]
    star = (MixingDistribution.point_mass(theta_star)
            if not isinstance(theta_star, MixingDistribution) else theta_star)
    star_idx = [i for i, c in enumerate(cands) if canonicalize(c) == canonicalize(star)]
    if not star_idx:
        raise ContractViolation("theta_star must be one of the candidates")
    star_idx = star_idx[0]
    n_grid = [int(n) for n in n_grid]
    fractions = []
    root = np.random.SeedSequence(seed)
    for n, child in zip(n_grid, root.spawn(len(n_grid))):
        seeds = child.generate_state(reps)
        hits = 0
        for s in seeds:
            x = sample_mixture(family, star, n, int(s)).values
            lls = [log_likelihood(family, c, x) for c in cands]
            hits += int(np.argmax(lls) == star_idx)
        fractions.append(hits / reps)
    inversions = sum(b < a for a, b in zip(fractions, fractions[1:]))
    margin = min(fractions[-1] - 0.99, 1 - inversions)
    return CheckReport(
        name="finite_grid_mle",
        statistic=margin,
        threshold=0.0,
        comparison=">=",
        details=f"selection fractions {fractions} over n={n_grid}; {inversions} inversion(s)",
        data={"n_grid": n_grid, "fractions": fractions, "inversions": inversions, "reps": reps},
    )


def degenerate_mixing(x1: float, k: float) -> MixingDistribution:
    """G_k = 0.5 N(0, 1) + 0.5 N(x1, (1/(2k))^2), as a mixing distribution."""
    return MixingDistribution(((0.0, 1.0), (x1, 1.0 / (2.0 * k))), (0.5, 0.5))


def degenerate_log_likelihood(values, log_k: float) -> float:
    """log-likelihood of G_k evaluated through log k, so k may exceed float range."""
    x = np.asarray(values, dtype=float)
    log_sd = -math.log(2.0) - log_k
    d = np.abs(x - x[0])
    with np.errstate(divide="ignore", over="ignore"):
        log_z = np.where(d > 0, np.log(d) - log_sd, -np.inf)
        zsq = np.exp(2 * log_z)
    narrow = math.log(0.5) - 0.5 * zsq - log_sd - LOG_SQRT_2PI
    wide = math.log(0.5) - 0.5 * x * x - LOG_SQRT_2PI
    return float(math.fsum(np.logaddexp(narrow, wide)))


def degenerate_bound(values, k: float) -> float:
    x = np.asarray(values, dtype=float)
    return math.log(k) - 0.5 * float(np.sum(x[1:] ** 2)) - x.size * math.log(2 * math.pi)


def degenerate_sequence_demo(sample, k_list, excess: float = 100.0) -> CheckReport:
    """Likelihood along the degenerate sequence G_k.

    (a) the lower bound log k - sum_{i>=2} x_i^2 / 2 - n log(2 pi) holds at every
    k, with no tolerance; (b) at the largest k the likelihood exceeds the
    equal-variance two-component MLE by at least ``excess``.
    """
    x = np.asarray(_values(sample), dtype=float)
    k_list = [float(k) for k in k_list]
    if any(b <= a for a, b in zip(k_list, k_list[1:])):
        raise ContractViolation("k_list must be increasing")
    family = ComponentFamily.normal_free()
    lls, bounds = [], []
    for k in k_list:
        if 1.0 / (2.0 * k) >= 1e-150:
            ll = log_likelihood(family, degenerate_mixing(x[0], k), x)
        else:
            ll = degenerate_log_likelihood(x, math.log(k))
        lls.append(ll)
        bounds.append(degenerate_bound(x, k))
    bound_margin = min(l - b for l, b in zip(lls, bounds))

    m = 2 if np.unique(x).size >= 2 else 1
    ev = em_fit(FitConfig(ComponentFamily.normal_equal(1.0), m, EQUAL_VARIANCE, restarts=3), x)
    gap = lls[-1] - ev.loglik
    return CheckReport(
        name="degenerate_sequence",
        statistic=min(bound_margin, gap - excess),
        threshold=0.0,
        comparison=">=",
        details=(f"min(l_n(G_k) - bound) = {bound_margin:.6g}; "
                 f"l_n(G_kmax) - equal-variance MLE = {gap:.6g} (need >= {excess})"),
        data={"k": k_list, "loglik": lls, "bound": bounds, "bound_margin": bound_margin,
              "gap_to_equal_variance_mle": gap, "equal_variance_loglik": ev.loglik},
    )


def check_concentration(density_sup_M: float, sample, eps_list) -> CheckReport:
    """sup_theta {F_n(theta + eps) - F_n(theta)} <= 2 M eps + 10 log(n) / n for all eps."""
    ecdf = EmpiricalCDF.from_sample(sample)
    n = ecdf.n
    if n < 20:
        raise ContractViolation("concentration check needs n >= 20")
    eps = np.sort(np.asarray(eps_list, dtype=float))
    lhs = np.array([cdf_window_sup(ecdf, e) for e in eps])
    bound = 2 * density_sup_M * eps + 10 * math.log(n) / n
    margins = bound - lhs
    monotone = bool(np.all(np.diff(lhs) >= 0))
    worst = float(np.min(margins)) if monotone else -math.inf
    return CheckReport(
        name="concentration",
        statistic=worst,
        threshold=0.0,
        comparison=">=",
        details=f"worst margin {float(np.min(margins)):.6g}; window sup monotone in eps: {monotone}",
        data={"n": n, "eps": eps.tolist(), "lhs": lhs.tolist(), "bound": bound.tolist(),
              "violations": int(np.sum(margins < 0)), "monotone": monotone},
    )


HEAVY_TAIL_N0 = 20
HEAVY_TAIL_NMAX = 10_000_000
HEAVY_TAIL_XMAX = 30


def heavy_tail_series(x_values, n_max: int = HEAVY_TAIL_NMAX, chunk: int = 1_000_000):
    """Bracket S(x) = sum_{n>=20} (log n)^(x-1) / (n log log n)^2 for each x.

    Returns ``(partial, tail)``: the partial sum up to ``n_max`` and an upper
    bound on the remainder.  For log(n_max) > (x - 1)/2 the summand decreases
    beyond n_max, so the remainder is at most the integral, which after
    u = log t is bounded by Gamma(x, log n_max) / (log log n_max)^2.
    """
    xs = np.asarray(x_values, dtype=int)
    partial = np.full(xs.size, -np.inf)
    for start in range(HEAVY_TAIL_N0, n_max + 1, chunk):
        n = np.arange(start, min(start + chunk, n_max + 1), dtype=float)
        l1 = np.log(n)
        l2 = np.log(l1)
        base = -2 * l1 - 2 * np.log(l2)
        for i, x in enumerate(xs):
            t = (x - 1) * np.log(l1) + base
            mx = t.max()
            partial[i] = np.logaddexp(partial[i], mx + math.log(np.exp(t - mx).sum()))
    a = math.log(n_max)
    tail = np.array([
        math.exp(gammaln(x) + math.log(gammaincc(x, a)) - 2 * math.log(math.log(a)))
        for x in xs
    ])
    return np.exp(partial), tail


def heavy_tail_integral(x: int) -> float:
    """int_{log 20}^inf u^(x-1) e^(-u) / (log u)^2 du by adaptive quadrature."""
    lo = math.log(HEAVY_TAIL_N0)

    def f(u):
        return math.exp((x - 1) * math.log(u) - u) / math.log(u) ** 2

    mode = max(lo, x - 1.0)
    a, _ = integrate.quad(f, lo, mode, epsabs=0, epsrel=1e-12, limit=200)
    b, _ = integrate.quad(f, mode, math.inf, epsabs=0, epsrel=1e-12, limit=200)
    return a + b


def poisson_heavy_tail_check(x_list) -> CheckReport:
    """log f(x; G*) <= -log x for the mixing law G*({log n}) = 1/{n log n (log log n)^2}.

    f(x; G*) is bounded above by (partial sum + tail bound) / x!.  The
    integral comparison against (x-1)! is checked alongside.
    """
    xs = [int(x) for x in x_list]
    for x in xs:
        if not 1 <= x <= HEAVY_TAIL_XMAX:
            raise DomainError(f"x must lie in [1, {HEAVY_TAIL_XMAX}], got {x}")
    partial, tail = heavy_tail_series(xs)
    log_fact = gammaln(np.array(xs) + 1.0)
    log_f_upper = np.log(partial + tail) - log_fact
    series_margin = -np.log(xs) - log_f_upper
    integrals = np.array([heavy_tail_integral(x) for x in xs])
    rel_margin = 1.0 - integrals / np.exp(gammaln(np.array(xs, dtype=float)))
    worst = float(min(series_margin.min(), rel_margin.min()))
    return CheckReport(
        name="poisson_heavy_tail",
        statistic=worst,
        threshold=0.0,
        comparison=">=",
        details=(f"min(-log x - log f) = {series_margin.min():.6g}; "
                 f"min relative integral margin = {rel_margin.min():.6g}"),
        data={"x": xs, "log_f_upper": log_f_upper.tolist(), "series_margin": series_margin.tolist(),
              "partial": partial.tolist(), "tail_bound": tail.tolist(),
              "integral": integrals.tolist(), "integral_relative_margin": rel_margin.tolist()},
    )


def g_dominance_check(eps0: float, sigma1_list, x_offsets) -> CheckReport:
    """phi(x; 0, s^2) <= phi(x; 0, 2 eps0^2) whenever |x| >= s log(1/s), s <= eps0.

    Offsets are measured from the threshold: x = s log(1/s) + offset, for
    every offset >= 0 and both signs.  The statistic is the largest
    log-density ratio (<= 0 means dominance holds).
    """
    if eps0 > 0.05:
        raise ContractViolation("eps0 must be <= 0.05")
    sig = np.asarray(sigma1_list, dtype=float)
    if np.any(sig > eps0) or np.any(sig <= 0):
        raise ContractViolation("every sigma1 must lie in (0, eps0]")
    offsets = np.abs(np.asarray(x_offsets, dtype=float))
    family = ComponentFamily.normal_free()
    wide = (0.0, math.sqrt(2.0) * eps0)
    worst = -math.inf
    worst_at = None
    for s in sig:
        edge = s * math.log(1.0 / s)
        x = edge + offsets
        x = np.concatenate([x, -x])
        r = component_logpdf(family, (0.0, s), x) - component_logpdf(family, wide, x)
        i = int(np.argmax(r))
        if r[i] > worst:
            worst, worst_at = float(r[i]), (float(s), float(x[i]))
    return CheckReport(
        name="g_dominance",
        statistic=worst,
        threshold=0.0,
        comparison="<=",
        details=f"worst ratio {math.exp(worst):.6g} at (sigma1, x) = {worst_at}",
        data={"eps0": eps0, "worst_log_ratio": worst, "worst_ratio": math.exp(worst),
              "worst_at": worst_at},
    )


def check_kl_finiteness_bounded_poisson(M_bound: float, G_star: MixingDistribution,
                                        mc_n: int = 100_000, seed: int = 0) -> CheckReport:
    """Witness that E*|log f(X; G*)| is finite when G* has bounded support.

    The running mean must move by less than 1% over the last doubling of
    the Monte Carlo size.
    """
    if np.any(G_star.means > M_bound):
        raise ContractViolation("all atoms of G* must be <= M_bound")
    family = ComponentFamily.poisson()
    x = sample_mixture(family, G_star, mc_n, seed).values
    terms = np.abs(mixture_logpdf(family, G_star, x))
    half = mc_n // 2
    est_half = float(np.mean(terms[:half]))
    est, se = _mc_mean(terms)
    rel = abs(est - est_half) / max(abs(est), 1e-300)
    return CheckReport(
        name="kl_finiteness_bounded_poisson",
        statistic=rel,
        threshold=0.01,
        comparison="<",
        standard_error=se,
        details=f"E*|log f| ~ {est:.6g} (half sample {est_half:.6g})",
        data={"estimate": est, "estimate_half": est_half, "mc_n": mc_n, "seed": seed},
    )


CHECKS = {
    "jensen_kl": check_jensen_kl,
    "pfanzagl": check_pfanzagl,
    "finite_grid_mle": finite_grid_mle_demo,
    "degenerate_sequence": degenerate_sequence_demo,
    "concentration": check_concentration,
    "poisson_heavy_tail": poisson_heavy_tail_check,
    "g_dominance": g_dominance_check,
    "kl_finiteness_bounded_poisson": check_kl_finiteness_bounded_poisson,
}
