"""Maximum likelihood estimation for finite and nonparametric mixtures.

:func:`em_fit` runs EM for an m-component mixture under one of four modes:

``plain``
    the ordinary likelihood.  With free component variances it has no
    maximiser (a component can collapse on one observation), so reports in
    this configuration always carry a warning.
``penalized``
    likelihood plus the additive variance penalty from :mod:`mixlab.penalty`.
``constrained``
    component standard deviations bounded below by ``sigma_floor``.
``equal_variance``
    all components share one unknown variance.

:func:`npmle_fit` maximises the likelihood over all mixing distributions
supported on a fixed grid and certifies the result with the gradient
function D(theta; G) = sum_i f(x_i; theta) / f(x_i; G) - n.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, xlogy

from .errors import (
    ComponentDeathError,
    ContractViolation,
    DegenerateInputError,
    FitFailureError,
    UnderdeterminedError,
)
from .model import (
    LOG_SQRT_2PI,
    NORMAL_EQUAL,
    NORMAL_FREE,
    POISSON,
    ComponentFamily,
    MixingDistribution,
    _logpdf_matrix,
    _poisson_counts,
    _values,
    canonicalize,
    component_logpdf_matrix,
)
from .penalty import PenaltyConfig, penalty_component

log = logging.getLogger(__name__)

PLAIN = "plain"
PENALIZED = "penalized"
CONSTRAINED = "constrained"
EQUAL_VARIANCE = "equal_variance"
MODES = (PLAIN, PENALIZED, CONSTRAINED, EQUAL_VARIANCE)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000
# responsibility mass below which a component is considered dead
DEATH_MASS = 1e-8
# a scale this small relative to its location cannot be resolved in float64
COLLAPSE_RTOL = 1e-12
PLAIN_FREE_WARNING = (
    "plain likelihood with free variances is unbounded; "
    "no maximum likelihood estimate exists"
)


@dataclass(frozen=True)
class FitConfig:
    family: ComponentFamily
    m: int
    mode: str = PLAIN
    penalty: PenaltyConfig | None = None
    sigma_floor: float | None = None
    max_iter: int = DEFAULT_MAX_ITER
    tol: float = DEFAULT_TOL
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ContractViolation(f"m must be >= 1, got {self.m}")
        if self.mode not in MODES:
            raise ContractViolation(f"unknown mode {self.mode!r}")
        if not self.tol > 0:
            raise ContractViolation(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1 or self.restarts < 1:
            raise ContractViolation("max_iter and restarts must be >= 1")
        kind = self.family.kind
        if self.mode in (PENALIZED, CONSTRAINED) and kind != NORMAL_FREE:
            raise ContractViolation(f"{self.mode} mode needs the free-variance normal family")
        if self.mode == EQUAL_VARIANCE and kind != NORMAL_EQUAL:
            raise ContractViolation("equal_variance mode needs the equal-variance normal family")
        if self.mode == CONSTRAINED and not (self.sigma_floor is not None and self.sigma_floor > 0):
            raise ContractViolation("constrained mode needs sigma_floor > 0")
        if self.mode == PENALIZED and self.penalty is None:
            object.__setattr__(self, "penalty", PenaltyConfig())

    def to_dict(self):
        return {
            "family": self.family.to_dict(),
            "m": self.m,
            "mode": self.mode,
            "penalty": None if self.penalty is None else self.penalty.to_dict(),
            "sigma_floor": self.sigma_floor,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "restarts": self.restarts,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        pen = d.get("penalty")
        return cls(
            family=ComponentFamily.from_dict(d["family"]),
            m=int(d["m"]),
            mode=d.get("mode", PLAIN),
            penalty=None if pen is None else PenaltyConfig.from_dict(pen),
            sigma_floor=d.get("sigma_floor"),
            max_iter=int(d.get("max_iter", DEFAULT_MAX_ITER)),
            tol=float(d.get("tol", DEFAULT_TOL)),
            restarts=int(d.get("restarts", 1)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class FitReport:
    estimate: MixingDistribution
    family: ComponentFamily
    objective_trace: list
    converged: bool
    iterations: int
    best_of_restarts: int
    loglik: float
    penalty_value: float = 0.0
    sigma2: float | None = None
    degenerate: bool = False
    warnings: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def to_dict(self):
        return {
            "estimate": self.estimate.to_dict(),
            "family": self.family.to_dict(),
            "sigma2": self.sigma2,
            "objective": self.objective,
            "loglik": self.loglik,
            "penalty_value": self.penalty_value,
            "objective_trace": list(self.objective_trace),
            "converged": self.converged,
            "iterations": self.iterations,
            "best_of_restarts": self.best_of_restarts,
            "degenerate": self.degenerate,
            "warnings": list(self.warnings),
            "restart_objectives": list(self.restart_objectives),
            "failures": list(self.failures),
        }


@dataclass
class MStepResult:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray


class _Collapse(Exception):
    """A component variance fell below float resolution (plain likelihood only)."""


def _log_joint(kind, x, lgam, weights, means, variances):
    """log(alpha_j f(x_i; theta_j)) as an (n, m) array."""
    with np.errstate(divide="ignore"):
        logw = np.log(weights)[None, :]
    if kind == POISSON:
        return logw + xlogy(x[:, None], means[None, :]) - means[None, :] - lgam[:, None]
    sd = np.sqrt(variances)
    z = (x[:, None] - means[None, :]) / sd[None, :]
    return logw - 0.5 * z * z - np.log(sd)[None, :] - LOG_SQRT_2PI


def _responsibilities(L, x):
    """Row-normalised exp(L) and the row log-sum-exp."""
    mx = L.max(axis=1)
    bad = ~np.isfinite(mx)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateInputError(i, float(x[i]))
    e = np.exp(L - mx[:, None])
    total = e.sum(axis=1)
    return e / total[:, None], np.log(total) + mx


def e_step(family: ComponentFamily, G: MixingDistribution, sample) -> np.ndarray:
    """Posterior component probabilities, one row per observation."""
    x = np.atleast_1d(_values(sample)).astype(float)
    L = component_logpdf_matrix(family, G, x)
    with np.errstate(divide="ignore"):
        L = L + np.log(G.proportions)[None, :]
    resp, _ = _responsibilities(L, x)
    return resp


def penalized_variance(S, SS, n, anchor, anchor_coefficient=1.0):
    """Maximiser over v of -S/2 log v - SS/(2v) - (c*anchor/v + log v)/n."""
    return (SS + 2.0 * anchor_coefficient * anchor / n) / (S + 2.0 / n)


def m_step(family: ComponentFamily, mode: str, responsibilities, sample, n=None, *,
           penalty: PenaltyConfig | None = None, sigma_floor: float | None = None,
           min_mass: float = DEATH_MASS) -> MStepResult:
    """Closed-form parameter update from responsibilities.

    ``penalty`` must already carry a resolved anchor in penalized mode.
    For families without a free variance the returned variances are the
    structural one (fixed, or shared and re-estimated in equal_variance mode).
    """
    x = np.atleast_1d(_values(sample)).astype(float)
    R = np.asarray(responsibilities, dtype=float)
    n = x.size if n is None else n
    S = R.sum(axis=0)
    dead = np.flatnonzero(S <= min_mass)
    if dead.size:
        raise ComponentDeathError(int(dead[0]), float(S[dead[0]]))
    weights = S / n
    means = (R.T @ x) / S
    if family.kind == POISSON:
        return MStepResult(weights, means, np.full(S.size, np.nan))
    SS = np.einsum("ij,ij->j", R, (x[:, None] - means[None, :]) ** 2)
    if mode == PLAIN and family.kind == NORMAL_FREE:
        var = SS / S
    elif mode == PENALIZED:
        if penalty is None or penalty.scale_anchor is None:
            raise ContractViolation("penalized m-step needs a resolved penalty")
        var = penalized_variance(S, SS, n, penalty.scale_anchor, penalty.anchor_coefficient)
    elif mode == CONSTRAINED:
        var = np.maximum(SS / S, sigma_floor ** 2)
    elif mode == EQUAL_VARIANCE:
        var = np.full(S.size, SS.sum() / n)
    else:
        var = np.full(S.size, family.sigma2)
    return MStepResult(weights, means, var)


class _Problem:
    """Data and settings shared by every EM iteration of one fit."""

    def __init__(self, cfg: FitConfig, sample):
        self.cfg = cfg
        self.kind = cfg.family.kind
        x = np.atleast_1d(_values(sample)).astype(float)
        if self.kind == POISSON:
            x = _poisson_counts(x)
            self.lgam = gammaln(x + 1.0)
        else:
            self.lgam = None
        self.x = x
        self.n = x.size
        if self.n < cfg.m:
            raise UnderdeterminedError(
                f"precondition n >= m violated: n={self.n} observations, m={cfg.m} components")
        if self.kind != POISSON and self.n < 2:
            raise UnderdeterminedError(
                "precondition n >= 2 violated: variance estimation needs two observations")
        self.var_x = float(np.var(x))
        self.penalty = None
        if cfg.mode == PENALIZED:
            self.penalty = cfg.penalty.resolve(self.var_x)

    def objective(self, params: MStepResult):
        L = _log_joint(self.kind, self.x, self.lgam, params.weights, params.means, params.variances)
        resp, lse = _responsibilities(L, self.x)
        ll = math.fsum(lse)
        pen = 0.0
        if self.penalty is not None:
            pen = math.fsum(penalty_component(self.penalty, self.n, np.sqrt(params.variances)))
        return ll + pen, ll, pen, resp

    def update(self, resp) -> MStepResult:
        new = m_step(self.cfg.family, self.cfg.mode, resp, self.x, self.n,
                     penalty=self.penalty, sigma_floor=self.cfg.sigma_floor)
        if self.kind != POISSON:
            sd = np.sqrt(new.variances)
            tiny = ~(sd > COLLAPSE_RTOL * np.maximum(1.0, np.abs(new.means)))
            if np.any(tiny):
                raise _Collapse(int(np.flatnonzero(tiny)[0]))
        return new

    def initial(self, restart: int, init: MixingDistribution | None) -> MStepResult:
        m = self.cfg.m
        if restart == 0 and init is not None:
            if init.size != m:
                raise ContractViolation(f"initial G has {init.size} atoms, expected m={m}")
            if self.kind == NORMAL_FREE:
                var = init.scales ** 2
            elif self.kind == NORMAL_EQUAL:
                var = np.full(m, self.cfg.family.sigma2)
            else:
                var = np.full(m, np.nan)
            return MStepResult(init.proportions, init.means.astype(float), var)
        levels = (np.arange(m) + 0.5) / m
        means = np.quantile(self.x, levels)
        if restart > 0:
            rng = np.random.default_rng([self.cfg.seed, restart])
            means = means + rng.normal(0.0, math.sqrt(self.var_x), m)
        if self.kind == POISSON:
            means = np.maximum(np.abs(means), 1e-3)
            var = np.full(m, np.nan)
        elif self.cfg.mode == PLAIN and self.kind == NORMAL_EQUAL:
            var = np.full(m, self.cfg.family.sigma2)
        else:
            var = np.full(m, self.var_x)
        return MStepResult(np.full(m, 1.0 / m), means, var)


@dataclass
class _Run:
    params: MStepResult
    trace: list
    loglik: float
    penalty: float
    converged: bool
    iterations: int
    degenerate: bool = False


def _run_em(prob: _Problem, params: MStepResult) -> _Run:
    obj, ll, pen, resp = prob.objective(params)
    trace = [obj]
    for it in range(1, prob.cfg.max_iter + 1):
        try:
            new = prob.update(resp)
        except _Collapse:
            trace.append(math.inf)
            return _Run(params, trace, math.inf, pen, False, it, degenerate=True)
        new_obj, new_ll, new_pen, new_resp = prob.objective(new)
        trace.append(new_obj)
        params, resp, ll, pen = new, new_resp, new_ll, new_pen
        if new_obj - obj < prob.cfg.tol:
            return _Run(params, trace, ll, pen, True, it)
        obj = new_obj
    return _Run(params, trace, ll, pen, False, prob.cfg.max_iter)


def _to_mixing(prob: _Problem, params: MStepResult) -> MixingDistribution:
    w = params.weights / params.weights.sum()
    scales = np.sqrt(params.variances) if prob.kind == NORMAL_FREE else None
    return canonicalize(MixingDistribution.from_arrays(w, params.means, scales))


def _estimate_key(G: MixingDistribution):
    return tuple((a.mean, -math.inf if a.scale is None else a.scale, w)
                 for a, w in zip(G.atoms, G.weights))


def em_fit(cfg: FitConfig, sample, init: MixingDistribution | None = None) -> FitReport:
    """Fit an m-component mixture by EM, keeping the best of ``cfg.restarts`` runs.

    Restart 0 starts from ``init`` if given, otherwise from the quantile-spread
    initialiser; later restarts jitter the quantile means by seeded noise of
    size s_n.  The run with the largest final objective wins; exact ties go
    to the lexicographically smallest canonical estimate.
    """
    prob = _Problem(cfg, sample)

    best = None
    best_key = None
    objectives = []
    failures = []
    for r in range(cfg.restarts):
        try:
            run = _run_em(prob, prob.initial(r, init))
        except (ComponentDeathError, DegenerateInputError) as exc:
            log.debug("restart %d failed: %s", r, exc)
            failures.append({"restart": r, "error": str(exc)})
            objectives.append(None)
            continue
        G = _to_mixing(prob, run.params)
        objectives.append(run.trace[-1])
        key = (-run.trace[-1], _estimate_key(G))
        if best is None or key < best_key:
            best, best_key, best_r, best_G = run, key, r, G
    if best is None:
        raise FitFailureError(f"all {cfg.restarts} EM restarts failed", failures)

    family = cfg.family
    sigma2 = None
    if prob.kind == NORMAL_EQUAL:
        sigma2 = float(best.params.variances[0])
        family = family.with_sigma2(sigma2)
    warnings = []
    if cfg.mode == PLAIN and prob.kind == NORMAL_FREE:
        warnings.append(PLAIN_FREE_WARNING)
    if best.degenerate:
        warnings.append("a component collapsed onto a single observation; objective is +inf")
    return FitReport(
        estimate=best_G,
        family=family,
        objective_trace=best.trace,
        converged=best.converged,
        iterations=best.iterations,
        best_of_restarts=best_r,
        loglik=best.loglik,
        penalty_value=best.penalty,
        sigma2=sigma2,
        degenerate=best.degenerate,
        warnings=warnings,
        restart_objectives=objectives,
        failures=failures,
    )


# ---------------------------------------------------------------------------
# Nonparametric MLE on a grid
# ---------------------------------------------------------------------------

@dataclass
class NPMLEResult:
    estimate: MixingDistribution
    gradient_sup: float
    support_size: int
    distinct_obs: int
    certified: bool
    support_gradient: float
    gradient_sup_refined: float
    loglik: float
    grid_size: int
    iterations: int

    def to_dict(self):
        return {
            "estimate": self.estimate.to_dict(),
            "gradient_sup": self.gradient_sup,
            "support_size": self.support_size,
            "distinct_obs": self.distinct_obs,
            "certified": self.certified,
            "support_gradient": self.support_gradient,
            "gradient_sup_refined": self.gradient_sup_refined,
            "loglik": self.loglik,
            "grid_size": self.grid_size,
            "iterations": self.iterations,
        }


def default_grid(family: ComponentFamily, x, size: int = 200) -> np.ndarray:
    """Equally spaced grid over [min x, max x]; integer-aligned for Poisson."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi == lo:
        return np.array([lo])
    if family.kind == POISSON:
        per_unit = max(1, int((size - 1) // (hi - lo)))
        steps = int(round((hi - lo) * per_unit))
        return lo + np.arange(steps + 1) / per_unit
    return np.linspace(lo, hi, size)


def _grid_kernel(family, grid, x):
    return _logpdf_matrix(family, grid, None, x)


class _GridLikelihood:
    """phi(w) = sum_i c_i log (F w)_i - n sum(w), with rows of F rescaled."""

    def __init__(self, logF, counts):
        shift = logF.max(axis=1, keepdims=True)
        self.shift = shift[:, 0]
        self.F = np.exp(logF - shift)
        self.c = counts
        self.n = counts.sum()

    def fitted(self, w):
        return self.F @ w

    def value(self, w):
        f = self.fitted(w)
        if np.any(f <= 0):
            return -math.inf
        return float(self.c @ np.log(f) - self.n * w.sum())

    def gradient(self, w, F=None):
        F = self.F if F is None else F
        return F.T @ (self.c / self.fitted(w)) - self.n


def _newton_on_support(lik: _GridLikelihood, w, S, tol, max_iter=200):
    """Maximise phi over the atoms in S (w >= 0), dropping atoms that hit zero."""
    S = list(S)
    it = 0
    for it in range(max_iter):
        FS = lik.F[:, S]
        wS = w[S]
        f = FS @ wS
        g = FS.T @ (lik.c / f) - lik.n
        if np.max(np.abs(g)) <= tol:
            break
        A = FS.T @ (FS * (lik.c / f ** 2)[:, None])
        d = np.linalg.lstsq(A, g, rcond=None)[0]
        if not g @ d > 0:
            d = g / np.max(np.diag(A))
        neg = d < 0
        t_max = np.min(-wS[neg] / d[neg]) if np.any(neg) else math.inf
        t = min(1.0, t_max)
        phi0 = lik.value(w)
        while True:
            trial = w.copy()
            trial[S] = np.maximum(wS + t * d, 0.0)
            if lik.value(trial) >= phi0 + 1e-4 * t * (g @ d) or t < 1e-14:
                break
            t *= 0.5
        w = trial
        blocked = [j for j in S if w[j] <= 1e-14 * max(1.0, wS.max())]
        if t == t_max and neg.any():
            blocked.append(S[int(np.flatnonzero(neg)[np.argmin(-wS[neg] / d[neg])])])
        for j in set(blocked):
            w[j] = 0.0
            S.remove(j)
        if not S:
            raise RuntimeError("active set emptied during Newton polish")
    return w, S, it


def _add_atom(lik: _GridLikelihood, w, j):
    """Line search along e_j from w (vertex direction step)."""
    f = lik.fitted(w)
    col = lik.F[:, j]

    def deriv(s):
        return float(lik.c @ (col / (f + s * col)) - lik.n)

    hi = 1.0
    while deriv(hi) > 0 and hi < 1e6:
        hi *= 2
    s = brentq(deriv, 0.0, hi) if deriv(hi) < 0 else hi
    w = w.copy()
    w[j] += s
    return w


def _exchange(lik: _GridLikelihood, w, S, j, k):
    """Move mass from atom k to atom j with an exact line search.

    Handles nearly collinear atom pairs, where the Newton system is too
    ill-conditioned to resolve the direction e_j - e_k.
    """
    f = lik.fitted(w)
    diff = lik.F[:, j] - lik.F[:, k]

    def deriv(s):
        return float(lik.c @ (diff / (f + s * diff)))

    cap = w[k]
    s = cap if deriv(cap) >= 0 else brentq(deriv, 0.0, cap)
    w = w.copy()
    w[j] += s
    w[k] -= s
    S = list(S)
    if j not in S:
        S.append(j)
    if w[k] <= 1e-14 * w[j]:
        w[k] = 0.0
        S.remove(k)
    return w, S


def _caratheodory(lik: _GridLikelihood, w, S, max_support):
    """Remove atoms along null directions of F_S until |S| <= max_support."""
    S = list(S)
    while len(S) > max_support:
        FS = lik.F[:, S]
        v = np.linalg.svd(FS)[2][-1]
        if not np.any(v < 0):
            v = -v
        neg = v < 0
        ratios = np.full(v.size, math.inf)
        ratios[neg] = w[S][neg] / -v[neg]
        k = int(np.argmin(ratios))
        w[S] = np.maximum(w[S] + ratios[k] * v, 0.0)
        w[S[k]] = 0.0
        S.pop(k)
    return w, S


def npmle_fit(family: ComponentFamily, sample, grid=None, tol_grad: float = 1e-3,
              grid_size: int = 200, em_iter: int = 500, max_rounds: int = 100) -> NPMLEResult:
    """Nonparametric MLE of the mixing distribution over a fixed grid.

    Multiplicative EM gives a warm start; atoms below 1e-10 are pruned, and
    the remaining active set is polished by Newton steps with vertex-direction
    additions until the gradient function is nonpositive over the grid.  The
    fit is certified when sup_grid D(theta; G) <= tol_grad * n.
    """
    if family.kind not in (POISSON, NORMAL_EQUAL):
        raise ContractViolation("NPMLE needs the Poisson or equal-variance normal family")
    x = np.atleast_1d(_values(sample)).astype(float)
    if family.kind == POISSON:
        x = _poisson_counts(x)
    values, counts = np.unique(x, return_counts=True)
    counts = counts.astype(float)
    n = counts.sum()
    grid = default_grid(family, values, grid_size) if grid is None else np.sort(np.asarray(grid, float))
    if grid.min() > values.min() or grid.max() < values.max():
        raise ContractViolation("grid must cover [min(x), max(x)]")

    lik = _GridLikelihood(_grid_kernel(family, grid, values), counts)
    w = np.full(grid.size, 1.0 / grid.size)
    for _ in range(em_iter):
        w = w * (lik.F.T @ (counts / lik.fitted(w))) / n
    w[w < 1e-10] = 0.0
    S = list(np.flatnonzero(w > 0))

    inner_tol = 1e-10 * n
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        # reducing first keeps the Newton system nonsingular
        w, S = _caratheodory(lik, w, S, values.size)
        w, S, _ = _newton_on_support(lik, w, S, inner_tol)
        D = lik.gradient(w)
        j = int(np.argmax(D))
        if D[j] <= 1e-9 * n:
            break
        if j in S:
            k = S[int(np.argmin(D[S]))]
            if k == j:
                break
            w, S = _exchange(lik, w, S, j, k)
            continue
        w = _add_atom(lik, w, j)
        S.append(j)
    else:
        w, S = _caratheodory(lik, w, S, values.size)
        w, S, _ = _newton_on_support(lik, w, S, inner_tol)

    D = lik.gradient(w)
    support = sorted(S)
    mids = 0.5 * (grid[1:] + grid[:-1])
    if mids.size:
        Dm = (np.exp(_grid_kernel(family, mids, values) - lik.shift[:, None]).T
              @ (counts / lik.fitted(w))) - n
        refined = float(max(D.max(), Dm.max()))
    else:
        refined = float(D.max())
    weights = w[support] / w[support].sum()
    estimate = canonicalize(MixingDistribution.from_arrays(weights, grid[support]))
    loglik = float(lik.c @ (np.log(lik.fitted(w)) + lik.shift))
    gsup = float(D.max())
    return NPMLEResult(
        estimate=estimate,
        gradient_sup=gsup,
        support_size=estimate.size,
        distinct_obs=int(values.size),
        certified=bool(gsup <= tol_grad * n),
        support_gradient=float(np.max(np.abs(D[support]))),
        gradient_sup_refined=refined,
        loglik=loglik,
        grid_size=int(grid.size),
        iterations=rounds,
    )
