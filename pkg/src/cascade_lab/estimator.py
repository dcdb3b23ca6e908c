"""Maximum-likelihood estimation from censored observations and the
confidence ellipsoid around the estimate.

The likelihood of an observation with summed feature x and outcome y under
parameter theta is ``m(z)^y (1-m(z))^(1-y)`` with ``z = x . theta`` and
``m(z) = 1 - exp(-z)``; the log of the failure term simplifies to ``-z``.
The log-likelihood is concave, so projected gradient ascent finds the global
constrained maximizer.

Two second-moment matrices summarize the data: one over successful
observations only and one over all observations.  The largest ``rho`` with
``success - rho * total`` positive semi-definite calibrates how much of the
design survives censoring, and enters the ellipsoid radius.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import linalg

LN2 = math.log(2.0)
EPS_DOM = 1e-8  # score floor keeping log m(z) finite on observed data
FEATURE_NORM_TOL = 1e-9


class OutOfDomainError(ValueError):
    """A parameter puts an observed score outside the likelihood's domain."""


class InfeasibleInitError(ValueError):
    """The requested starting point violates the feasible domain."""


class ObservationSet:
    """Growable store of (feature, outcome) pairs with optional provenance."""

    def __init__(self, dimension: int):
        self.dimension = int(dimension)
        self._features = np.empty((64, dimension))
        self._outcomes = np.empty(64, dtype=np.int8)
        self._steps = np.empty(64, dtype=np.int64)
        self._targets = np.empty(64, dtype=np.int64)
        self._n = 0

    @classmethod
    def from_arrays(cls, features, outcomes, steps=None, targets=None) -> "ObservationSet":
        """Bulk construction with vectorized validation."""
        features = np.array(features, dtype=float)
        outcomes = np.asarray(outcomes).astype(np.int8)
        n = features.shape[0]
        if features.ndim != 2 or outcomes.shape != (n,):
            raise ValueError("features must be (n, d) with matching outcomes")
        norms = np.linalg.norm(features, axis=1)
        if n and float(np.max(norms)) > 1.0 + FEATURE_NORM_TOL:
            raise ValueError("a feature norm exceeds 1")
        if not np.all((outcomes == 0) | (outcomes == 1)):
            raise ValueError("outcomes must be 0 or 1")
        obs = cls(features.shape[1])
        obs._features = features
        obs._outcomes = outcomes
        obs._steps = (np.full(n, -1, dtype=np.int64) if steps is None
                      else np.asarray(steps, dtype=np.int64))
        obs._targets = (np.full(n, -1, dtype=np.int64) if targets is None
                        else np.asarray(targets, dtype=np.int64))
        obs._n = n
        return obs

    def __len__(self) -> int:
        return self._n

    @property
    def features(self) -> np.ndarray:
        return self._features[:self._n]

    @property
    def outcomes(self) -> np.ndarray:
        return self._outcomes[:self._n]

    @property
    def steps(self) -> np.ndarray:
        return self._steps[:self._n]

    @property
    def targets(self) -> np.ndarray:
        return self._targets[:self._n]

    def append(self, feature, outcome: int, step: int = -1, target: int = -1) -> None:
        feature = np.asarray(feature, dtype=float)
        if feature.shape != (self.dimension,):
            raise ValueError(f"feature must have shape ({self.dimension},)")
        norm = float(np.linalg.norm(feature))
        if norm > 1.0 + FEATURE_NORM_TOL:
            raise ValueError(f"feature norm {norm:.6f} exceeds 1")
        if outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self._n == self._features.shape[0]:
            grow = max(self._features.shape[0] * 2, 64)
            self._features = np.resize(self._features, (grow, self.dimension))
            self._outcomes = np.resize(self._outcomes, grow)
            self._steps = np.resize(self._steps, grow)
            self._targets = np.resize(self._targets, grow)
        self._features[self._n] = feature
        self._outcomes[self._n] = outcome
        self._steps[self._n] = step
        self._targets[self._n] = target
        self._n += 1

    def extend_from_trace(self, trace) -> None:
        for obs in trace.observations:
            self.append(obs.feature, obs.outcome, step=obs.step, target=obs.target)


def observations_to_csv(obs: ObservationSet, path) -> None:
    header = ["step", "target", "y"] + [f"x_{j + 1}" for j in range(obs.dimension)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(obs)):
            row = [int(obs.steps[i]), int(obs.targets[i]), int(obs.outcomes[i])]
            row += [repr(float(v)) for v in obs.features[i]]
            writer.writerow(row)


def observations_from_csv(path) -> ObservationSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        out = ObservationSet(d)
        for row in reader:
            out.append(np.array([float(v) for v in row[3:]]), int(row[2]),
                       step=int(row[0]), target=int(row[1]))
    return out


def _scores(theta: np.ndarray, obs: ObservationSet) -> np.ndarray:
    return obs.features @ theta


def _check_domain(scores: np.ndarray, outcomes: np.ndarray) -> None:
    bad = np.nonzero((outcomes == 1) & (scores <= 0.0))[0]
    if bad.size:
        i = int(bad[0])
        raise OutOfDomainError(
            f"observation {i} succeeded but has score {scores[i]:.3e} <= 0"
        )


def _log_m(scores: np.ndarray) -> np.ndarray:
    """log(1 - exp(-z)) elementwise for positive z, stable at both ends."""
    out = np.empty_like(scores)
    small = scores <= LN2
    out[small] = np.log(-np.expm1(-scores[small]))
    out[~small] = np.log1p(-np.exp(-scores[~small]))
    return out


def _ll_from_scores(z: np.ndarray, succ: np.ndarray) -> float:
    return float(np.sum(_log_m(z[succ]))) - float(np.sum(z[~succ]))


def _grad_coef_from_scores(z: np.ndarray, succ: np.ndarray) -> np.ndarray:
    coef = np.full(z.shape, -1.0)
    coef[succ] += 1.0 / (-np.expm1(-z[succ]))
    return coef


def log_likelihood(theta, obs: ObservationSet) -> float:
    """Sum of y*log m(z) - (1-y)*z over the observation set."""
    theta = np.asarray(theta, dtype=float)
    if len(obs) == 0:
        return 0.0
    z = _scores(theta, obs)
    y = obs.outcomes
    _check_domain(z, y)
    return _ll_from_scores(z, y == 1)


def grad_ll(theta, obs: ObservationSet) -> np.ndarray:
    """Gradient: sum of x * (y / m(z) - 1)."""
    theta = np.asarray(theta, dtype=float)
    if len(obs) == 0:
        return np.zeros_like(theta)
    z = _scores(theta, obs)
    y = obs.outcomes
    _check_domain(z, y)
    return obs.features.T @ _grad_coef_from_scores(z, y == 1)


def hessian_ll(theta, obs: ObservationSet) -> np.ndarray:
    """Hessian: -sum over successes of x x^T exp(-z) / m(z)^2 (negative
    semi-definite, so only successful observations carry curvature)."""
    theta = np.asarray(theta, dtype=float)
    d = obs.dimension
    if len(obs) == 0:
        return np.zeros((d, d))
    z = _scores(theta, obs)
    y = obs.outcomes
    _check_domain(z, y)
    succ = y == 1
    zs = z[succ]
    w = np.exp(-zs) / np.expm1(-zs) ** 2
    xs = obs.features[succ]
    return -(xs * w[:, None]).T @ xs


@dataclass
class MleResult:
    theta_hat: np.ndarray
    iterations: int
    grad_norm: float
    converged: bool
    at_boundary: bool = False
    log_lik: float = math.nan


def _default_init(obs: ObservationSet, norm_bound: float, eps_dom: float) -> np.ndarray:
    """Ridge solve pushing every observed score toward log 2 (probability 1/2)."""
    x = obs.features
    gram = x.T @ x
    lam = 1e-6 * max(float(np.max(np.abs(np.diag(gram)))), 1.0)
    theta = np.linalg.solve(gram + lam * np.eye(obs.dimension), x.T @ np.full(len(obs), LN2))
    norm = float(np.linalg.norm(theta))
    if norm_bound < math.inf and norm > norm_bound:
        theta *= norm_bound / norm
    if np.min(x @ theta) < eps_dom:
        raise InfeasibleInitError("could not construct a feasible starting point; "
                                  "pass theta_init explicitly")
    return theta


def fit_mle(obs: ObservationSet, theta_init=None, tol: float = 1e-6,
            max_iter: int = 500, norm_bound: float = math.inf,
            eps_dom: float = EPS_DOM) -> MleResult:
    """Constrained maximum-likelihood fit by projected gradient ascent.

    The feasible domain keeps every observed score at least ``eps_dom`` (so
    all observed activation probabilities stay positive and the likelihood
    finite) and the parameter norm within ``norm_bound``.  Steps are projected
    onto the norm ball and rejected if any score constraint breaks; the trial
    step length starts from a Barzilai-Borwein estimate and is halved until
    the Armijo condition holds.  Concavity makes any interior stationary
    point the global constrained maximizer.  A run that stalls on the score
    boundary reports ``at_boundary`` instead of convergence.
    """
    if len(obs) == 0:
        raise ValueError("observation set is empty")
    x = obs.features

    if theta_init is None:
        theta = _default_init(obs, norm_bound, eps_dom)
    else:
        theta = np.array(theta_init, dtype=float)
        if np.min(x @ theta) < eps_dom or np.linalg.norm(theta) > norm_bound * (1 + 1e-12):
            raise InfeasibleInitError("theta_init violates the feasible domain")

    y_succ = obs.outcomes == 1

    def _ascend(theta0: np.ndarray):
        theta_c = theta0.copy()
        z_c = x @ theta_c
        _check_domain(z_c, obs.outcomes)
        ll = _ll_from_scores(z_c, y_succ)
        grad = x.T @ _grad_coef_from_scores(z_c, y_succ)
        prev_theta = None
        prev_grad = None
        eta = 1.0 / max(1.0, float(np.linalg.norm(grad)))
        at_boundary = False
        it = 0
        for it in range(1, max_iter + 1):
            gnorm = float(np.linalg.norm(grad))
            if gnorm <= tol:
                return theta_c, it - 1, gnorm, True, False, ll
            # On an active norm bound with the gradient pointing outward, the
            # tangential component is the right stationarity measure; such a
            # point is a constrained maximizer, reported via the boundary flag.
            if norm_bound < math.inf:
                nrm = float(np.linalg.norm(theta_c))
                radial = float(np.dot(grad, theta_c))
                if nrm >= norm_bound * (1.0 - 1e-10) and radial > 0.0:
                    tangent = grad - (radial / (nrm * nrm)) * theta_c
                    if float(np.linalg.norm(tangent)) <= tol:
                        return theta_c, it - 1, gnorm, False, True, ll
            if prev_theta is not None:
                s = theta_c - prev_theta
                dg = prev_grad - grad
                denom = float(np.dot(s, dg))
                if denom > 1e-300:
                    eta = min(max(float(np.dot(s, s)) / denom, 1e-12), 1e12)
            # Cap the trial step where the ascent ray exits the score domain,
            # so the backtracking loop rarely burns evaluations on rejects.
            dz = x @ grad
            shrinking = dz < 0.0
            step = eta
            if np.any(shrinking):
                eta_dom = float(np.min((z_c[shrinking] - eps_dom) / (-dz[shrinking])))
                if eta_dom > 0.0:
                    step = min(eta, 0.999 * eta_dom)
            accepted = False
            for _ in range(80):
                cand = theta_c + step * grad
                norm = float(np.linalg.norm(cand))
                if norm_bound < math.inf and norm > norm_bound:
                    cand = cand * (norm_bound / norm)
                    z_cand = x @ cand
                else:
                    z_cand = z_c + step * dz
                if np.min(z_cand) < eps_dom:
                    step *= 0.5
                    continue
                cand_ll = _ll_from_scores(z_cand, y_succ)
                if cand_ll >= ll + 1e-4 * float(np.dot(grad, cand - theta_c)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                at_boundary = bool(np.min(z_c) <= eps_dom * (1.0 + 1e-6)
                                   or (norm_bound < math.inf
                                       and np.linalg.norm(theta_c) >= norm_bound * (1 - 1e-9)))
                return theta_c, it, gnorm, False, at_boundary, ll
            prev_theta, prev_grad = theta_c, grad
            theta_c, ll, z_c = cand, cand_ll, z_cand
            grad = x.T @ _grad_coef_from_scores(z_c, y_succ)
        gnorm = float(np.linalg.norm(grad))
        at_boundary = bool(np.min(z_c) <= eps_dom * (1.0 + 1e-6))
        return theta_c, max_iter, gnorm, gnorm <= tol, at_boundary, ll

    theta_h, iters, gnorm, conv, boundary, ll = _ascend(theta)
    if not conv and not boundary:
        # one restart from a perturbed point, keeping whichever fit is better
        bump = theta_h * 0.9 + 0.1 * theta
        bump = bump + 1e-3 * (1.0 + np.abs(bump))
        if np.min(x @ bump) >= eps_dom and np.linalg.norm(bump) <= norm_bound:
            t2, i2, g2, c2, b2, ll2 = _ascend(bump)
            if ll2 > ll:
                theta_h, iters, gnorm, conv, boundary, ll = t2, iters + i2, g2, c2, b2, ll2
    return MleResult(theta_hat=theta_h, iterations=iters, grad_norm=gnorm,
                     converged=conv, at_boundary=boundary, log_lik=ll)


@dataclass
class SuffStats:
    """Second-moment summaries: successes-only and all observations."""

    success: np.ndarray  # sum of x x^T over y = 1
    total: np.ndarray    # sum of x x^T over all observations
    count: int

    @classmethod
    def zeros(cls, dimension: int) -> "SuffStats":
        return cls(success=np.zeros((dimension, dimension)),
                   total=np.zeros((dimension, dimension)), count=0)

    @property
    def dimension(self) -> int:
        return self.success.shape[0]

    def updated(self, feature, outcome: int) -> "SuffStats":
        feature = np.asarray(feature, dtype=float)
        outer = np.outer(feature, feature)
        return SuffStats(success=self.success + (outer if outcome else 0.0),
                         total=self.total + outer, count=self.count + 1)


def suff_stats(obs: ObservationSet) -> SuffStats:
    x = obs.features
    y = obs.outcomes.astype(float)
    return SuffStats(success=(x * y[:, None]).T @ x, total=x.T @ x, count=len(obs))


def update(stats: SuffStats, feature, outcome: int) -> SuffStats:
    feature = np.asarray(feature, dtype=float)
    if feature.shape != (stats.dimension,):
        raise ValueError("dimension mismatch")
    return stats.updated(feature, outcome)


@dataclass
class RhoStarResult:
    rho: float
    singular: bool


def rho_star(stats: SuffStats, tol_pd: float = 1e-10) -> RhoStarResult:
    """Largest rho keeping (success - rho * total) positive semi-definite.

    Solved by whitening with a Cholesky factor of the total matrix and taking
    the smallest eigenvalue, clamped to [0, 1].  A numerically singular total
    matrix yields rho 0 with the singular flag set.
    """
    if stats.count == 0:
        return RhoStarResult(rho=0.0, singular=True)
    try:
        lower = linalg.cholesky_lower(stats.total, tol_pd=tol_pd)
    except linalg.FactorizationError:
        return RhoStarResult(rho=0.0, singular=True)
    white = linalg.whitened_by(stats.success, lower)
    rho = linalg.min_eigenvalue(white)
    return RhoStarResult(rho=float(min(max(rho, 0.0), 1.0)), singular=False)


def matrix_floor_bound(n: int, d: int, p: float, lambda_star: float,
                       feature_bound: float, c: float = 0.5) -> float:
    """Lower bound on the probability that the success moment dominates
    c*p times the total moment, for i.i.d. Bernoulli(p) outcomes on fixed
    features (matrix Bernstein tail).

    ``lambda_star`` is the smallest eigenvalue of the total moment and
    ``feature_bound`` bounds the spectral norm of (x x^T)^2 per observation.
    """
    if not 0.0 <= c < 1.0 / p:
        raise ValueError("c must lie in [0, 1/p)")
    t = (1.0 - c) * p * lambda_star
    denom = n * feature_bound + (1.0 - c) * p * p * lambda_star / 3.0
    if denom <= 0.0:
        return 0.0
    return 1.0 - d * math.exp(-t * t / 2.0 / denom)


def kappa_from_bound(norm_bound: float) -> float:
    """Curvature floor of the likelihood over the unit ball around the truth.

    The weight ``exp(-z)/m(z)^2`` equals ``1/(4 sinh^2(z/2))``, an even and
    strictly decreasing function of |z|, and |z| <= norm_bound + 1 on the
    admissible set, so the floor is attained at that endpoint.  The argument
    need only keep norm_bound + 1 positive.
    """
    if norm_bound <= -1.0:
        raise ValueError("norm_bound + 1 must be positive")
    return 1.0 / (4.0 * math.sinh((norm_bound + 1.0) / 2.0) ** 2)


def confidence_radius_sq(n: int, d: int, rho: float, kappa: float,
                         r_bound: float, delta2: float) -> float:
    """Squared ellipsoid radius for n observations at confidence delta2."""
    if min(rho, kappa, r_bound) <= 0:
        raise ValueError("rho, kappa and r_bound must be positive")
    if not 0.0 < delta2 < 1.0:
        raise ValueError("delta2 must lie in (0, 1)")
    if n < 0 or d <= 0:
        raise ValueError("n must be nonnegative and d positive")
    lead = 4.0 * r_bound ** 2 / (kappa ** 2 * rho)
    return lead * ((d / 2.0) * math.log1p(2.0 * n / d) + math.log(1.0 / delta2))


def precondition_check(stats: SuffStats, rho: float, kappa: float,
                       r_bound: float, delta1: float) -> bool:
    """Whether the design is rich enough for the coverage guarantee."""
    lam_min = linalg.min_eigenvalue(stats.total) if stats.count else 0.0
    lhs = kappa ** 2 * rho ** 2 * lam_min
    rhs = 16.0 * r_bound ** 2 * (stats.dimension + math.log(1.0 / delta1))
    return bool(lhs >= rhs)


@dataclass
class ConfidenceEllipsoid:
    """Region {theta : (theta - center)^T shape (theta - center) <= radius_sq}."""

    center: np.ndarray
    shape: np.ndarray
    radius_sq: float
    rho_star: float = math.nan
    rho_used: float = math.nan
    kappa: float = math.nan
    r_bound: float = math.nan
    delta1: float = math.nan
    delta2: float = math.nan
    precondition_ok: bool = False
    singular: bool = False

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != self.center.shape:
            raise ValueError("dimension mismatch")
        if math.isinf(self.radius_sq):
            return True
        diff = theta - self.center
        return bool(float(diff @ self.shape @ diff) <= self.radius_sq)


def ellipsoid_contains(ell: ConfidenceEllipsoid, theta) -> bool:
    return ell.contains(theta)


def build_ellipsoid(theta_hat: np.ndarray, stats: SuffStats, kappa: float,
                    r_bound: float, delta1: float, delta2: float,
                    rho_floor: float = 0.0) -> ConfidenceEllipsoid:
    """Assemble the confidence ellipsoid from a fit and its statistics.

    The radius uses ``max(rho_star, rho_floor)``; both values are recorded.
    With no usable rho the radius is infinite and the region degenerates to
    "everything", flagged as singular.
    """
    rs = rho_star(stats)
    rho_used = max(rs.rho, rho_floor)
    if rho_used > 0.0:
        radius_sq = confidence_radius_sq(stats.count, stats.dimension, rho_used,
                                         kappa, r_bound, delta2)
    else:
        radius_sq = math.inf
    # The guarantee needs the design condition AND that the rho actually used
    # is one the data supports (rho_used <= rho_star).
    pre_ok = (rho_used > 0.0
              and rho_used <= rs.rho + 1e-12
              and precondition_check(stats, rho_used, kappa, r_bound, delta1))
    return ConfidenceEllipsoid(
        center=np.array(theta_hat, dtype=float),
        shape=stats.success.copy(),
        radius_sq=radius_sq,
        rho_star=rs.rho,
        rho_used=rho_used,
        kappa=kappa,
        r_bound=r_bound,
        delta1=delta1,
        delta2=delta2,
        precondition_ok=pre_ok,
        singular=rs.singular,
    )
