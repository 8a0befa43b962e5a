"""Maximum-likelihood fitting and uncertainty quantification.

The optimizer is a plain Nelder-Mead simplex (reflect/expand/contract/
shrink) so fits depend on nothing but this package and numpy. Standard
errors come from inverting a central-difference Hessian of the negative
log-likelihood; abundance inference propagates the covariance through the
intensity integral with a first-order delta method, reported on both the
natural and log scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.stats import norm

from .covariates import CovariateField, region_of
from .errors import ConfigError, DataError
from .geometry import StudyRegion
from .likelihoods import LikelihoodSpec, WorkingParams, loglik, phi_saturation_knee
from .pointprocess import ModelParams


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    reason: str
    trace: list[float]


def nelder_mead(objective, start, *, ftol: float = 1e-10, xtol: float = 1e-9,
                max_iter: int = 2000, initial_step: float = 0.25) -> NelderMeadResult:
    """Minimize ``objective`` from ``start`` with the simplex method.

    Terminates when the simplex value spread falls below
    ``ftol * (|best| + ftol)`` (spread measured relative to the best value,
    as in R's optim), when the simplex diameter falls below ``xtol``, or
    after ``max_iter`` iterations (flagged as non-converged, not fatal).
    The returned point never has a value above the starting one.
    """
    x0 = np.asarray(start, dtype=float).copy()
    n = len(x0)
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise ConfigError("objective is not finite at the starting point")

    simplex = [x0]
    values = [f0]
    for i in range(n):
        xi = x0.copy()
        xi[i] += initial_step * max(1.0, abs(x0[i]))
        simplex.append(xi)
        values.append(float(objective(xi)))
    simplex = np.array(simplex)
    values = np.array(values)

    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    trace = []
    reason = "max-iter"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        trace.append(float(values[0]))

        spread = float(values[-1] - values[0])
        diam = float(np.max(np.abs(simplex[1:] - simplex[0])))
        if spread <= ftol * (abs(values[0]) + ftol):
            reason, converged = "f-tol", True
            break
        if diam < xtol:
            reason, converged = "x-tol", True
            break

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = float(objective(xr))
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[0]:
            xe = centroid + gamma * (centroid - worst)
            fe = float(objective(xe))
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        xc = centroid + rho * (worst - centroid)
        fc = float(objective(xc))
        if fc < values[-1]:
            simplex[-1], values[-1] = xc, fc
            continue
        best = simplex[0]
        for k in range(1, n + 1):
            simplex[k] = best + sigma * (simplex[k] - best)
            values[k] = float(objective(simplex[k]))

    order = np.argsort(values, kind="stable")
    simplex, values = simplex[order], values[order]
    return NelderMeadResult(simplex[0].copy(), float(values[0]), it,
                            converged, reason, trace)


def numerical_hessian(objective, point, step=None) -> np.ndarray:
    """Central second differences, symmetrized as (H + H')/2."""
    x = np.asarray(point, dtype=float)
    n = len(x)
    if step is None:
        step = 1e-4 * np.maximum(1.0, np.abs(x))
    else:
        step = np.broadcast_to(np.asarray(step, dtype=float), (n,)).copy()
    H = np.empty((n, n))
    f0 = float(objective(x))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = step[i]
        fpp = float(objective(x + ei))
        fmm = float(objective(x - ei))
        H[i, i] = (fpp - 2.0 * f0 + fmm) / step[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = step[j]
            fa = float(objective(x + ei + ej))
            fb = float(objective(x + ei - ej))
            fc = float(objective(x - ei + ej))
            fd = float(objective(x - ei - ej))
            H[i, j] = H[j, i] = (fa - fb - fc + fd) / (4.0 * step[i] * step[j])
    return 0.5 * (H + H.T)


def wald_ci(estimate: float, se: float, level: float = 0.95) -> tuple[float, float]:
    """estimate +/- z * se with the two-sided normal quantile."""
    if se < 0:
        raise ConfigError("standard error must be nonnegative")
    z = float(norm.ppf(0.5 + level / 2.0))
    return (estimate - z * se, estimate + z * se)


def abundance(params: ModelParams, field: CovariateField,
              region: StudyRegion | None = None):
    """Expected abundance over the region and its gradient w.r.t. beta.

    Integrates exp(x(s)'beta) over the field's native grid (cells whose
    centers fall in the region), which is exact for the piecewise-constant
    field.
    """
    if region is None:
        region = region_of(field)
    X = field.design_matrix()
    keep = region.contains(field.cell_centers())
    Xk = X[keep]
    lam = np.exp(Xk @ params.beta) * field.cell_area
    lam_bar = float(lam.sum())
    grad = Xk.T @ lam
    return lam_bar, grad


@dataclass(frozen=True)
class AbundanceEstimate:
    value: float
    se: float
    interval: tuple[float, float]
    log_interval: tuple[float, float]


def delta_method_ci(lambda_bar: float, gradient: np.ndarray,
                    covariance: np.ndarray, level: float = 0.95) -> AbundanceEstimate:
    """First-order delta-method interval for the abundance.

    ``gradient`` is d(lambda_bar)/d(beta); since the working scale leaves
    beta untransformed and phi, theta do not enter the abundance, the
    gradient is zero-padded to the full working vector.
    """
    k = covariance.shape[0]
    g = np.zeros(k)
    g[: len(gradient)] = gradient
    var = float(g @ covariance @ g)
    se = math.sqrt(max(var, 0.0))
    interval = wald_ci(lambda_bar, se, level)
    if lambda_bar > 0:
        se_log = se / lambda_bar
        log_interval = wald_ci(math.log(lambda_bar), se_log, level)
    else:
        log_interval = (-math.inf, math.inf)
    return AbundanceEstimate(lambda_bar, se, interval, log_interval)


@dataclass(frozen=True)
class FitSettings:
    ftol: float = 1e-10
    xtol: float = 1e-9
    max_iter: int = 4000
    initial_step: float = 0.25
    polish: bool = True
    n_starts: int = 1
    start_jitter: float = 1.0
    start_seed: int = 0
    level: float = 0.95
    hessian_step_scale: float = 1e-4
    flat_tolerance: float = 1.92


@dataclass
class FitResult:
    """Estimates, working-scale covariance, and abundance inference."""

    working: WorkingParams
    params: ModelParams
    loglik: float
    converged: bool
    iterations: int
    message: str
    covariance: np.ndarray | None
    se: dict | None
    cis: dict | None
    abundance: AbundanceEstimate | None
    n_starts_used: int = 1

    @property
    def has_covariance(self) -> bool:
        return self.covariance is not None

    def report(self) -> dict:
        out = {
            "converged": self.converged,
            "iterations": self.iterations,
            "message": self.message,
            "loglik": self.loglik,
            "estimates": {
                **{f"beta{i}": float(b) for i, b in enumerate(self.params.beta)},
                "phi": self.params.phi,
                "theta": self.params.theta,
            },
        }
        if self.se is not None:
            out["se"] = dict(self.se)
            out["ci"] = {k: list(v) for k, v in self.cis.items()}
            out["ci_width"] = {k: float(v[1] - v[0]) for k, v in self.cis.items()}
        if self.abundance is not None:
            ab = {
                "lambda_bar": self.abundance.value,
                "log_lambda_bar": (math.log(self.abundance.value)
                                   if self.abundance.value > 0 else None),
            }
            if self.se is not None:
                ab["se"] = self.abundance.se
                ab["ci"] = list(self.abundance.interval)
                ab["log_ci"] = list(self.abundance.log_interval)
                ab["ci_width"] = self.abundance.interval[1] - self.abundance.interval[0]
                ab["log_ci_width"] = (self.abundance.log_interval[1]
                                      - self.abundance.log_interval[0])
            out["abundance"] = ab
        return out


def default_start(spec: LikelihoodSpec) -> WorkingParams:
    """beta = 0, phi started at (w_ds/2)^2, theta at 1/2."""
    ds = spec.design.ds_regions
    w_ds = max((r.radius for r in ds), default=0.1)
    return WorkingParams(np.zeros(1 + spec.field.q),
                         math.log(w_ds ** 2 / 4.0), 0.0)


# Working-scale logits beyond this leave the capture probability within
# float noise of 0 or 1.
_LOGIT_KNEE = 13.0


def _optimize_at_fixed(nll, x, index, value, settings):
    """Re-optimize all coordinates except ``index``, pinned at ``value``."""
    idx = index % len(x)

    def sub(v):
        return nll(np.insert(v, idx, value))

    r = nelder_mead(sub, np.delete(x, idx), ftol=settings.ftol,
                    xtol=settings.xtol, max_iter=settings.max_iter,
                    initial_step=0.02)
    return np.insert(r.x, idx, value), r.fun, r.iterations


def _flat_scan(nll, res, index, candidates, settings):
    """Walk pinned refits along a flat working coordinate and report the
    deepest equi-likely point whose observed information inverts."""
    accepted = None
    best_fun = res.fun
    for value in candidates:
        x_c, f_c, it_c = _optimize_at_fixed(nll, res.x, index, value,
                                            settings)
        best_fun = min(best_fun, f_c)
        if f_c > best_fun + settings.flat_tolerance:
            break
        accepted = (x_c, f_c, it_c)
    if accepted is not None:
        cov = _covariance_from_hessian(nll, accepted[0],
                                       settings.hessian_step_scale)
        if cov is not None:
            res.x, res.fun = accepted[0], accepted[1]
            res.iterations += accepted[2]
            return res, cov, True
    return res, None, False


def _try_invert(H: np.ndarray) -> np.ndarray | None:
    if not np.isfinite(H).all():
        return None
    try:
        cand = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        return None
    cand = 0.5 * (cand + cand.T)
    if np.isfinite(cand).all() and (np.diag(cand) >= 0).all():
        return cand
    return None


def _covariance_from_hessian(nll, x, step_scale: float) -> np.ndarray | None:
    """Invert the observed information, escalating the difference step.

    A barely-identified detection scale leaves directions whose curvature
    sits at the level of float noise at the base step; coarser steps often
    recover it. The covariance is only accepted with a nonnegative
    diagonal; nothing is substituted when every attempt fails.
    """
    for scale in (step_scale, 10 * step_scale, 100 * step_scale):
        H = numerical_hessian(nll, x, step=scale * np.maximum(1.0, np.abs(x)))
        cov = _try_invert(H)
        if cov is not None:
            return cov
    return None


def fit(spec: LikelihoodSpec, start: WorkingParams | None = None,
        settings: FitSettings | None = None) -> FitResult:
    """Maximize the scenario log-likelihood and attach Wald/delta inference.

    With ``n_starts > 1`` the extra starts are jittered around the default
    and the best converged fit wins. A singular or non-finite Hessian is
    reported with covariance absent rather than fabricated.
    """
    settings = settings or FitSettings()
    if start is None:
        start = default_start(spec)
    n_beta = 1 + spec.field.q
    if len(start.beta) != n_beta:
        raise DataError(
            f"start has {len(start.beta)} beta coefficients, field needs {n_beta}"
        )

    def nll(v: np.ndarray) -> float:
        return -loglik(WorkingParams.from_vector(v), spec)

    knee = phi_saturation_knee(spec)

    starts = [start.as_vector()]
    if settings.n_starts > 1 and knee is not None:
        # Deterministic second start at the phi saturation knee: likelihoods
        # that barely identify phi often split into a small-phi ridge and a
        # saturated branch, and each start explores one side.
        s2 = start.as_vector()
        s2[-2] = knee
        starts.append(s2)
    if settings.n_starts > len(starts):
        rng = np.random.default_rng(settings.start_seed)
        for _ in range(settings.n_starts - len(starts)):
            starts.append(start.as_vector()
                          + rng.uniform(-settings.start_jitter,
                                        settings.start_jitter, n_beta + 2))

    best = None
    for s in starts:
        res = nelder_mead(nll, s, ftol=settings.ftol, xtol=settings.xtol,
                          max_iter=settings.max_iter,
                          initial_step=settings.initial_step)
        if best is None:
            best = res
        elif (res.converged, -res.fun) > (best.converged, -best.fun):
            best = res
    res = best
    if knee is not None and res.x[-2] > knee:
        # Past the knee the likelihood is numerically constant in phi; pull
        # the point back to the knee before polishing so the polish explores
        # from measurable territory (including back down the phi ridge).
        x = res.x.copy()
        x[-2] = knee
        f = nll(x)
        if f <= res.fun + 1e-3 * (1.0 + abs(res.fun)):
            res.x, res.fun = x, f
    if settings.polish:
        # Re-run from the found point with a fresh small simplex; guards
        # against premature simplex collapse on flat ridges.
        res2 = nelder_mead(nll, res.x, ftol=settings.ftol, xtol=settings.xtol,
                           max_iter=settings.max_iter, initial_step=0.02)
        if res2.fun <= res.fun:
            res2.iterations += res.iterations
            res2.converged = res2.converged and res.converged
            res = res2

    cov = _covariance_from_hessian(nll, res.x, settings.hessian_step_scale)
    repaired = []
    if knee is not None and (cov is None or res.x[-2] >= knee):
        # A saturated or information-degenerate detection scale: the
        # likelihood is flat in phi over a wide range, so the fit is
        # reported at the interior edge of that flat zone (the most
        # moderate scale the data cannot distinguish from the optimum),
        # where the phi-beta coupling genuinely enters the observed
        # information. `flat_tolerance` is the log-likelihood drop treated
        # as indistinguishable.
        start_lp = min(float(res.x[-2]), knee)
        candidates = [start_lp - 2.0 * k for k in range(11)]
        res, cov_new, fixed = _flat_scan(nll, res, -2, candidates, settings)
        if fixed:
            cov = cov_new
            repaired.append("phi")
    if cov is None or abs(res.x[-1]) >= _LOGIT_KNEE:
        # Same treatment for a capture probability pinned against 0 or 1.
        sign = 1.0 if res.x[-1] >= 0 else -1.0
        start_lt = min(abs(float(res.x[-1])), _LOGIT_KNEE)
        candidates = [sign * (start_lt - 2.0 * k)
                      for k in range(int(start_lt / 2.0) + 1)]
        res, cov_new, fixed = _flat_scan(nll, res, -1, candidates, settings)
        if fixed:
            cov = cov_new
            repaired.append("theta")

    wp_hat = WorkingParams.from_vector(res.x)
    params_hat = wp_hat.to_model()
    message = res.reason if res.converged else f"not converged ({res.reason})"
    if repaired:
        message += (f"; {' and '.join(repaired)} only weakly identified, "
                    "reported at the most moderate equi-likely value")
    if cov is None:
        message += "; singular Hessian, covariance unavailable"

    region = spec.region
    lam_bar, grad = abundance(params_hat, spec.field, region)

    se = cis = None
    ab = AbundanceEstimate(lam_bar, float("nan"), (float("nan"),) * 2,
                           (float("nan"),) * 2)
    if cov is not None:
        names = wp_hat.names
        se = {nm: math.sqrt(max(cov[i, i], 0.0)) for i, nm in enumerate(names)}
        cis = {nm: wald_ci(res.x[i], se[nm], settings.level)
               for i, nm in enumerate(names)}
        ab = delta_method_ci(lam_bar, grad, cov, settings.level)

    return FitResult(
        working=wp_hat,
        params=params_hat,
        loglik=-res.fun,
        converged=res.converged,
        iterations=res.iterations,
        message=message,
        covariance=cov,
        se=se,
        cis=cis,
        abundance=ab,
        n_starts_used=len(starts),
    )
