# -*- coding: utf-8 -*-

"""
    Linear TD(0) under perturbed state features.

    A LinearTDSystem holds the features X (one row per state), the on-policy
    transition matrix P, its stationary distribution mu, the perturbation E
    (one row per state) and the pairwise rewards R(s, s'). The perturbation
    enters the TD update at the current feature, the next feature, both or
    neither:

        w <- w + alpha_t (R + gamma w.x~' - w.x~) x~

    Every case has an expected update matrix M and vector b with w_TD = M^-1 b.

        none     A = X'D(I - gamma P)X
        current  A_t = A_{t,t+1} + gamma (X+E)'DPE
        next     A_{t+1} = A - gamma X'DPE
        both     A_{t,t+1} = (X+E)'D(I - gamma P)(X+E)
"""

import logging
import warnings

import numpy as np

from snmdpLab.objects.error import AnalysisError, ConfigurationError, ConvergenceError
from snmdpLab.objects.mdp import PROBABILITY_TOLERANCE

__all__ = [
    "NOISE_CASES",
    "LinearTDSystem",
    "TDTrajectory",
    "InfluenceResult",
    "stationaryDistribution",
    "buildConvergenceMatrix",
    "monteCarloConvergenceMatrix",
    "conditionMatrices",
    "bVector",
    "tdFixedPoint",
    "jacobiEigenvalues",
    "isPositiveDefinite",
    "tdSimulate",
    "randomPerturbation",
    "divergentNextStatePerturbation",
    "influenceFunction",
    "contaminatedRefit",
    "corollaryTradeoff",
    "DIVERGENCE_THRESHOLD",
    "PD_THRESHOLD",
]

NOISE_CASES = ("none", "current", "next", "both")
DIVERGENCE_THRESHOLD = 1e12
PD_THRESHOLD = 1e-10
STATIONARY_TOLERANCE = 1e-13

logger = logging.getLogger("snmdpLab")


def _checkCase(case):
    if case not in NOISE_CASES:
        raise ConfigurationError("unknown noise case", case)
    return case


def _isPrimitive(P):
    """ A nonnegative n x n matrix is primitive iff P^((n-1)^2 + 1) > 0. """
    n = P.shape[0]
    pattern = (P > 0).astype(np.int64)
    power = np.eye(n, dtype=np.int64)
    exponent = (n - 1) ** 2 + 1
    base = pattern
    while exponent:
        if exponent & 1:
            power = ((power @ base) > 0).astype(np.int64)
        base = ((base @ base) > 0).astype(np.int64)
        exponent >>= 1
    return bool(np.all(power > 0))


def stationaryDistribution(P, tol=STATIONARY_TOLERANCE, maxIterations=10 ** 6):
    """
    Stationary distribution of an irreducible aperiodic chain by power
    iteration from the uniform distribution.
    ::

        >>> stationaryDistribution([[1.0]]).tolist()
        [1.0]
        >>> stationaryDistribution([[0.5, 0.5], [0.5, 0.5]]).tolist()
        [0.5, 0.5]
        >>> stationaryDistribution([[0.0, 1.0], [1.0, 0.0]])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.AnalysisError: 'transition matrix is not irreducible and aperiodic'
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ConfigurationError("transition matrix must be square", P.shape)
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > PROBABILITY_TOLERANCE:
        raise ConfigurationError("transition matrix rows must be probability vectors")
    if not _isPrimitive(P):
        raise AnalysisError("transition matrix is not irreducible and aperiodic")
    mu = np.full(P.shape[0], 1.0 / P.shape[0])
    for iteration in range(maxIterations):
        following = mu @ P
        following /= following.sum()
        change = np.max(np.abs(following - mu))
        mu = following
        if change <= tol:
            return mu
    raise ConvergenceError("stationary distribution did not converge", maxIterations)


class LinearTDSystem(object):
    """
    Features, dynamics and perturbation of one linear TD problem.
    ::

        >>> import numpy as np
        >>> s = LinearTDSystem(np.eye(2), [[0.5, 0.5], [0.5, 0.5]], gamma=0.8)
        >>> s
        <LinearTDSystem states:2 features:2 gamma:0.8 perturbed:False >
        >>> s.mu.tolist()
        [0.5, 0.5]
    """

    def __init__(self, X, P, E=None, gamma=0.9, rewards=None, mu=None):
        X = np.array(X, dtype=float)
        P = np.array(P, dtype=float)
        if X.ndim != 2 or P.shape != (X.shape[0], X.shape[0]):
            raise ConfigurationError("features and transition matrix disagree", (X.shape, P.shape))
        if not (0.0 < gamma < 1.0):
            raise ConfigurationError("gamma must lie strictly inside (0, 1)", gamma)
        E = np.zeros_like(X) if E is None else np.array(E, dtype=float)
        if E.shape != X.shape:
            raise ConfigurationError("perturbation must match the features", E.shape)
        rewards = np.zeros_like(P) if rewards is None else np.array(rewards, dtype=float)
        if rewards.shape != P.shape:
            raise ConfigurationError("rewards must be given per (s, s')", rewards.shape)
        if mu is None:
            mu = stationaryDistribution(P)
        else:
            mu = np.array(mu, dtype=float)
            if np.any(mu < 0) or abs(mu.sum() - 1.0) > PROBABILITY_TOLERANCE:
                raise ConfigurationError("mu is not a probability vector")
            if np.max(np.abs(mu @ P - mu)) > 1e-10:
                raise ConfigurationError("mu is not stationary for P")
        for array in (X, P, E, rewards, mu):
            array.setflags(write=False)
        self.X = X
        self.P = P
        self.E = E
        self.gamma = float(gamma)
        self.rewards = rewards
        self.mu = mu

    def __repr__(self):
        return "<%s states:%d features:%d gamma:%g perturbed:%s >" % (
            self.__class__.__name__, self.nStates, self.nFeatures, self.gamma, bool(np.any(self.E)))

    @property
    def nStates(self):
        return self.X.shape[0]

    @property
    def nFeatures(self):
        return self.X.shape[1]

    @property
    def D(self):
        return np.diag(self.mu)

    def withPerturbation(self, E):
        return LinearTDSystem(self.X, self.P, E, self.gamma, self.rewards, self.mu)

    def features(self, case):
        """ Return (current, next) feature matrices as seen under case. """
        _checkCase(case)
        current = self.X + self.E if case in ("current", "both") else self.X
        following = self.X + self.E if case in ("next", "both") else self.X
        return current, following

    @classmethod
    def random(cls, nStates, nFeatures, rng, gamma=0.8, rho=0.0):
        """
        A random system with strictly positive transitions, unit-norm
        feature columns, uniform rewards in [0, 1] and a perturbation with
        |E|_F = rho |X|_F.
        """
        P = rng.dirichlet(np.ones(nStates), size=nStates)
        P /= P.sum(axis=1, keepdims=True)
        X = rng.normal(size=(nStates, nFeatures))
        X /= np.linalg.norm(X, axis=0, keepdims=True)
        rewards = rng.uniform(0.0, 1.0, size=(nStates, nStates))
        E = randomPerturbation(X, rho, rng)
        return cls(X, P, E, gamma, rewards)


def randomPerturbation(X, rho, rng):
    """ Gaussian perturbation scaled to |E|_F = rho |X|_F. """
    E = rng.normal(size=np.shape(X))
    norm = np.linalg.norm(E)
    if rho == 0 or norm == 0:
        return np.zeros_like(E)
    return E * (rho * np.linalg.norm(X) / norm)


def buildConvergenceMatrix(sys, case, check=True):
    """
    The expected TD update matrix sum_s mu(s) sum_s' P(s, s') x~(s)(x~(s) - gamma x~'(s'))'
    for case, assembled from the sums and cross-checked against the factored
    form of that case.
    ::

        >>> import numpy as np
        >>> s = LinearTDSystem(np.eye(2), [[0.5, 0.5], [0.5, 0.5]], gamma=0.8)
        >>> buildConvergenceMatrix(s, "none").round(12).tolist()
        [[0.3, -0.2], [-0.2, 0.3]]
    """
    current, following = sys.features(case)
    differences = current[:, None, :] - sys.gamma * following[None, :, :]
    weights = sys.mu[:, None] * sys.P
    matrix = np.einsum("st,si,stj->ij", weights, current, differences)
    if check:
        factored = _factoredMatrix(sys, case)
        scale = max(1.0, float(np.max(np.abs(factored))))
        if np.max(np.abs(matrix - factored)) > 1e-10 * scale:
            raise AnalysisError("convergence matrix disagrees with its factored form", case)
    return matrix


def _factoredMatrix(sys, case):
    X, E, D, P, gamma = sys.X, sys.E, sys.D, sys.P, sys.gamma
    identity = np.eye(sys.nStates)
    A = X.T @ D @ (identity - gamma * P) @ X
    perturbed = (X + E).T @ D @ (identity - gamma * P) @ (X + E)
    if case == "none":
        return A
    if case == "current":
        return perturbed + gamma * (X + E).T @ D @ P @ E
    if case == "next":
        return A - gamma * X.T @ D @ P @ E
    return perturbed


def monteCarloConvergenceMatrix(sys, case, samples, rng):
    """
    Sample transitions from (mu, P) and average x~(x~ - gamma x~')'.
    Returns the mean matrix and the standard error of every entry.
    """
    current, following = sys.features(case)
    states = rng.choice(sys.nStates, size=samples, p=sys.mu)
    cumulative = np.cumsum(sys.P, axis=1)
    nextStates = _nextStates(cumulative, states, rng)
    xc = current[states]
    outer = xc[:, :, None] * (xc - sys.gamma * following[nextStates])[:, None, :]
    return outer.mean(axis=0), outer.std(axis=0, ddof=1) / np.sqrt(samples)


def _nextStates(cumulative, states, rng):
    draws = rng.random(len(states))
    nextStates = (cumulative[states] < draws[:, None]).sum(axis=1)
    return np.minimum(nextStates, cumulative.shape[1] - 1)


def conditionMatrices(sys, case):
    """
    The matrices that must be positive definite for TD to converge under case,
    as (name, matrix) pairs.
    """
    _checkCase(case)
    X, E, D, P = sys.X, sys.E, sys.D, sys.P
    matrices = [("A", buildConvergenceMatrix(sys, "none"))]
    if case == "current":
        matrices.append(("(X+E)'DPE", (X + E).T @ D @ P @ E))
    elif case == "next":
        matrices.append(("-X'DPE", -X.T @ D @ P @ E))
    return matrices


def bVector(sys, case):
    """ sum_s mu(s) sum_s' P(s, s') R(s, s') x~(s) with the current feature of case. """
    current, following = sys.features(case)
    expectedReward = np.einsum("st,st->s", sys.P, sys.rewards)
    return current.T @ (sys.mu * expectedReward)


def tdFixedPoint(sys, case):
    """ Solve M w = b for case. """
    matrix = buildConvergenceMatrix(sys, case)
    try:
        return np.linalg.solve(matrix, bVector(sys, case))
    except np.linalg.LinAlgError:
        raise AnalysisError("convergence matrix is singular", case)


def jacobiEigenvalues(S, tol=1e-14, maxSweeps=100):
    """
    Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
    ::

        >>> jacobiEigenvalues([[2.0, 1.0], [1.0, 2.0]]).round(12).tolist()
        [1.0, 3.0]
    """
    a = np.array(S, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError("matrix must be square", a.shape)
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(a), initial=0.0))):
        raise ConfigurationError("matrix must be symmetric")
    n = a.shape[0]
    scale = max(np.linalg.norm(a), 1e-300)
    for sweep in range(maxSweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rotation = np.eye(n)
                rotation[p, p] = rotation[q, q] = c
                rotation[p, q] = s
                rotation[q, p] = -s
                a = rotation.T @ a @ rotation
    raise ConvergenceError("Jacobi sweeps did not converge", maxSweeps)


def isPositiveDefinite(M, threshold=PD_THRESHOLD):
    """
    Positive definiteness of a possibly non-symmetric matrix, judged by the
    smallest eigenvalue of its symmetric part. Returns (flag, minEig).
    ::

        >>> import numpy as np
        >>> isPositiveDefinite(np.eye(3))
        (True, 1.0)
        >>> isPositiveDefinite(-np.eye(2))
        (False, -1.0)
        >>> isPositiveDefinite([[1.0, 2.0, 3.0]])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'matrix must be square'(1, 3)
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError("matrix must be square", M.shape)
    minEig = float(jacobiEigenvalues(0.5 * (M + M.T))[0])
    return minEig > threshold, minEig


class TDTrajectory(object):
    """
    Weights of parallel TD chains at checkpoint steps.

    weights has shape (checkpoints, chains, features); a diverged chain keeps
    its last finite weights from the step it crossed the threshold.
    """

    def __init__(self, steps, weights, diverged, divergedAt):
        self.steps = list(steps)
        self.weights = weights
        self.diverged = diverged
        self.divergedAt = divergedAt

    def __repr__(self):
        return "<%s chains:%d checkpoints:%d diverged:%d >" % (
            self.__class__.__name__, self.weights.shape[1], len(self.steps), int(self.diverged.sum()))

    def final(self):
        return self.weights[-1]

    def anyDiverged(self):
        return bool(np.any(self.diverged))

    def relativeError(self, target):
        """ |mean final weights - target| / |target|, inf once a chain diverged. """
        if self.anyDiverged():
            return float("inf")
        target = np.asarray(target, dtype=float)
        gap = np.linalg.norm(self.final().mean(axis=0) - target)
        return float(gap / max(np.linalg.norm(target), 1e-12))


def _checkpoints(steps):
    marks = []
    mark = 1
    while mark < steps:
        marks.append(mark)
        mark *= 2
    marks.append(steps)
    return marks


def tdSimulate(sys, case, steps, rng, chains=1, schedule=(1.0, 100.0)):
    """
    Run chains independent TD(0) chains for steps transitions with step size
    a / (b + t), starting at w = 0 and a state drawn from mu. The perturbation
    row of a state is added to the current feature, the next feature or both
    according to case. Weights are recorded at powers of two and at the end.
    """
    a, b = schedule
    if a <= 0 or b <= 0:
        raise ConfigurationError("step size schedule needs a, b > 0", schedule)
    if steps < 1 or chains < 1:
        raise ConfigurationError("steps and chains must be positive", (steps, chains))
    current, following = sys.features(case)
    cumulative = np.cumsum(sys.P, axis=1)
    states = rng.choice(sys.nStates, size=chains, p=sys.mu)
    w = np.zeros((chains, sys.nFeatures))
    diverged = np.zeros(chains, dtype=bool)
    divergedAt = np.full(chains, -1)
    marks = _checkpoints(steps)
    recorded = []
    markIndex = 0
    for t in range(steps):
        nextStates = _nextStates(cumulative, states, rng)
        xc = current[states]
        xn = following[nextStates]
        error = sys.rewards[states, nextStates] + sys.gamma * np.einsum("ij,ij->i", w, xn) \
            - np.einsum("ij,ij->i", w, xc)
        with np.errstate(over="ignore", invalid="ignore"):
            candidate = w + (a / (b + t)) * error[:, None] * xc
        blown = ~diverged & ~np.all(np.abs(candidate) <= DIVERGENCE_THRESHOLD, axis=1)
        if np.any(blown):
            diverged |= blown
            divergedAt[blown] = t + 1
            logger.debug("tdSimulate %s: %d chains diverged at step %d", case, int(blown.sum()), t + 1)
        w = np.where(diverged[:, None], w, candidate)
        states = nextStates
        if t + 1 == marks[markIndex]:
            recorded.append(w.copy())
            markIndex += 1
    return TDTrajectory(marks, np.array(recorded), diverged, divergedAt)


def divergentNextStatePerturbation(sys, c):
    """
    Perturbation E = c (DP)^+ X, for which -X'DPE = -c X'X is negative
    definite whenever DP is invertible and X has full column rank.
    Returns a copy of sys carrying E.
    """
    E = c * np.linalg.pinv(sys.D @ sys.P) @ sys.X
    return sys.withPerturbation(E)


class InfluenceResult(object):

    def __init__(self, psi, residual, residualPair=None):
        psi = np.asarray(psi, dtype=float)
        if not np.all(np.isfinite(psi)):
            raise AnalysisError("influence has non-finite entries")
        self.psi = psi
        self.residual = residual
        self.residualPair = residualPair

    def __repr__(self):
        return "<%s norm:%g residual:%g >" % (self.__class__.__name__, np.linalg.norm(self.psi), self.residual)


def _tdDirection(xt, xnext, gamma):
    return np.asarray(xt, dtype=float) - gamma * np.asarray(xnext, dtype=float)


def influenceFunction(A, xt, xnext, R, w, gamma=0.9):
    """
    Influence of one transition (x_t, x_next, R) on the least-squares TD
    solution with expected matrix A:
    psi = (A'A)^-1 d |x_t|^2 (R - d'w), d = x_t - gamma x_next.
    ::

        >>> import numpy as np
        >>> r = influenceFunction(np.eye(1), [1.0], [0.5], 1.0, [0.5], gamma=0.5)
        >>> r.psi.tolist(), r.residual
        ([0.46875], 0.625)
    """
    A = np.asarray(A, dtype=float)
    gram = A.T @ A
    if np.linalg.svd(gram, compute_uv=False).min() <= 1e-12:
        raise AnalysisError("A'A is singular")
    xt = np.asarray(xt, dtype=float)
    d = _tdDirection(xt, xnext, gamma)
    residual = float(R - d @ np.asarray(w, dtype=float))
    psi = np.linalg.solve(gram, d) * float(xt @ xt) * residual
    return InfluenceResult(psi, residual)


def contaminatedRefit(A, b, xt, xnext, R, epsilon, gamma=0.9):
    """
    Minimizer of (1 - eps) |Aw - b|^2 + eps |x_t|^2 (R - d'w)^2, the TD
    least-squares fit with a fraction eps of mass moved onto one transition.
    (w(eps) - w(0)) / eps tends to the influence at w(0).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    xt = np.asarray(xt, dtype=float)
    d = _tdDirection(xt, xnext, gamma)
    weight = epsilon * float(xt @ xt)
    lhs = (1.0 - epsilon) * A.T @ A + weight * np.outer(d, d)
    rhs = (1.0 - epsilon) * A.T @ b + weight * R * d
    return np.linalg.solve(lhs, rhs)


def _unscaledInfluence(xt, xnext, R, w, gamma):
    d = _tdDirection(xt, xnext, gamma)
    return d * float(xt @ xt) * float(R - d @ w)


def corollaryTradeoff(xt, xnext, R, w, eta, gamma):
    """
    Exact change of the unscaled influence d |x_t|^2 (R - d'w) when eta is
    added to the current feature (delta_t) or the next feature (delta_next),
    against the first-order prediction
    gamma delta_t + delta_next ~ 2 gamma d (eta'x_t)(R - d'w).
    Returns (lhs, rhs, residual); the residual is second order in eta.
    ::

        >>> lhs, rhs, residual = corollaryTradeoff([1.0], [0.5], 1.0, [0.5], [0.01], 0.5)
        >>> round(float(lhs[0]), 8), round(float(rhs[0]), 8)
        (0.00469806, 0.0046875)
    """
    xt = np.asarray(xt, dtype=float)
    xnext = np.asarray(xnext, dtype=float)
    w = np.asarray(w, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if np.linalg.norm(eta) > 0.1 * np.linalg.norm(xt):
        warnings.warn("perturbation is large relative to the feature; first-order terms may dominate")
    base = _unscaledInfluence(xt, xnext, R, w, gamma)
    deltaCurrent = _unscaledInfluence(xt + eta, xnext, R, w, gamma) - base
    deltaNext = _unscaledInfluence(xt, xnext + eta, R, w, gamma) - base
    lhs = gamma * deltaCurrent + deltaNext
    d = _tdDirection(xt, xnext, gamma)
    rhs = 2.0 * gamma * d * float(eta @ xt) * float(R - d @ w)
    return lhs, rhs, float(np.linalg.norm(lhs - rhs))
