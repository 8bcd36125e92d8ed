# -*- coding: utf-8 -*-

"""
    Expectation-based policy evaluation in the state-noisy MDP.

    The noisy Bellman operator evaluates pi through the noise kernel N. Its
    fixed point is the clean value of the merged policy pi'(a|s) =
    sum_v N(v|s) pi(a|v), which is what evaluatePolicy solves directly.
"""

import logging

import numpy as np

from snmdpLab.objects.error import ConfigurationError, ConvergenceError
from snmdpLab.objects.mdp import mergedPolicy
from snmdpLab.objects.noise import TabularNoise, enumerateDeterministicNoises, greedyAdversarialNoise

__all__ = [
    "ValueTable",
    "bellmanBackup",
    "qBackup",
    "qFromValues",
    "evaluatePolicy",
    "solveFixedPoint",
    "adversarialFixedPoint",
    "exhaustiveAdversarialMinimum",
    "MAX_ITERATIONS",
]

MAX_ITERATIONS = 10 ** 6

logger = logging.getLogger("snmdpLab")


class ValueTable(object):
    """
    State values v[s] and, optionally, action values q[s, a].
    ::

        >>> ValueTable([1.0, 2.0])
        <ValueTable states:2 >
        >>> ValueTable([1.0, float("nan")])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'value table has non-finite entries'
    """

    def __init__(self, v, q=None):
        v = np.array(v, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ConfigurationError("value table has non-finite entries")
        if q is not None:
            q = np.array(q, dtype=float)
            if q.ndim != 2 or q.shape[0] != v.shape[0] or not np.all(np.isfinite(q)):
                raise ConfigurationError("q table does not match the state values")
            q.setflags(write=False)
        v.setflags(write=False)
        self.v = v
        self.q = q

    def __repr__(self):
        return "<%s states:%d >" % (self.__class__.__name__, self.v.shape[0])

    def distance(self, other):
        """ Sup-norm distance between the state values. """
        return float(np.max(np.abs(self.v - other.v))) if self.v.size else 0.0

    @classmethod
    def zeros(cls, nStates):
        return cls(np.zeros(nStates))


def _values(mdp, v):
    values = v.v if isinstance(v, ValueTable) else np.asarray(v, dtype=float)
    if values.shape != (mdp.nStates,):
        raise ConfigurationError("value table does not match the MDP", values.shape)
    return values


def qFromValues(mdp, v):
    """ Return q[s, a] = sum_s' p(s'|s,a) (R(s,a,s') + gamma v(s')). """
    values = _values(mdp, v)
    return mdp.expectedReward() + mdp.gamma * (mdp.transition @ values)


def bellmanBackup(mdp, pi, noise, v):
    """
    One application of the noisy Bellman operator:
    result(s) = sum_a pi'(a|s) sum_s' p(s'|s,a) (R + gamma v(s')).
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.mdp import TabularMDP, Policy
        >>> from snmdpLab.objects.noise import TabularNoise
        >>> m = TabularMDP(np.full((2, 1, 2), 0.5), np.ones((2, 1, 2)), 0.5)
        >>> t = bellmanBackup(m, Policy.uniform(2, 1), TabularNoise.identity(2), ValueTable([2.0, 4.0]))
        >>> t.v.tolist()
        [2.5, 2.5]
    """
    merged = mergedPolicy(mdp, pi, noise)
    q = qFromValues(mdp, v)
    return ValueTable(np.einsum("ij,ij->i", merged.probs, q), q)


def qBackup(mdp, pi, noise, q):
    """
    Scalar action-value backup through the noise:
    Q(s,a) = sum_s' p(s'|s,a) (R + gamma sum_v N(v|s') sum_a' pi(a'|v) Q(s',a')).
    This is the expectation of the distributional backup.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.nStates, mdp.nActions):
        raise ConfigurationError("q table does not match the MDP", q.shape)
    merged = mergedPolicy(mdp, pi, noise)
    nextValues = np.einsum("ij,ij->i", merged.probs, q)
    return mdp.expectedReward() + mdp.gamma * (mdp.transition @ nextValues)


def evaluatePolicy(mdp, pi, noise=None):
    """
    Solve (I - gamma P') V = R' for the merged policy directly.
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.mdp import TabularMDP, Policy
        >>> m = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1, 1)), 0.75)
        >>> evaluatePolicy(m, Policy.uniform(1, 1)).v.tolist()
        [4.0]
    """
    if noise is None:
        noise = TabularNoise.identity(mdp.nStates)
    merged = mergedPolicy(mdp, pi, noise)
    P = mdp.stateTransition(merged)
    R = mdp.stateReward(merged)
    v = np.linalg.solve(np.eye(mdp.nStates) - mdp.gamma * P, R)
    return ValueTable(v, qFromValues(mdp, v))


def _stoppingThreshold(gamma, tol):
    # gamma/(1-gamma) * |V_k+1 - V_k| <= tol bounds both |TV - V| and |V - V*|
    return tol * (1.0 - gamma) / gamma


def solveFixedPoint(mdp, pi, noise, tol=1e-10, initial=None, maxIterations=MAX_ITERATIONS):
    """
    Iterate synchronous backups until the fixed point is within tol.
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.mdp import TabularMDP, Policy
        >>> from snmdpLab.objects.noise import TabularNoise
        >>> m = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1, 1)), 0.75)
        >>> v = solveFixedPoint(m, Policy.uniform(1, 1), TabularNoise.identity(1))
        >>> bool(abs(v.v[0] - 4.0) <= 1e-10)
        True
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive", tol)
    current = ValueTable.zeros(mdp.nStates) if initial is None else ValueTable(_values(mdp, initial))
    threshold = _stoppingThreshold(mdp.gamma, tol)
    for iteration in range(maxIterations):
        following = bellmanBackup(mdp, pi, noise, current)
        change = following.distance(current)
        current = following
        if change <= threshold:
            return current
    logger.warning("solveFixedPoint: no convergence after %d sweeps", maxIterations)
    raise ConvergenceError("fixed point iteration did not converge", maxIterations)


def adversarialFixedPoint(mdp, pi, allowed, tol=1e-10, maxIterations=MAX_ITERATIONS, trace=None):
    """
    Alternate the greedy adversarial noise and the Bellman backup.

    The iteration starts at the noise-free value of pi, so every sweep is
    elementwise no larger than the one before. Returns (values, noise).
    If trace is a list, the state values of every sweep are appended to it.
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.mdp import TabularMDP, Policy
        >>> m = TabularMDP(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)), 0.9)
        >>> v, n = adversarialFixedPoint(m, Policy.uniform(2, 2), [{0}, {1}])
        >>> n.choices()
        [0, 1]
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive", tol)
    if isinstance(allowed, TabularNoise):
        allowed = allowed.allowed
    current = solveFixedPoint(mdp, pi, TabularNoise.identity(mdp.nStates), tol=tol * 1e-2)
    if trace is not None:
        trace.append(current.v.copy())
    threshold = _stoppingThreshold(mdp.gamma, tol)
    for iteration in range(maxIterations):
        noise = greedyAdversarialNoise(mdp, pi, qFromValues(mdp, current), allowed)
        following = bellmanBackup(mdp, pi, noise, current)
        change = following.distance(current)
        current = following
        if trace is not None:
            trace.append(current.v.copy())
        if change <= threshold:
            noise = greedyAdversarialNoise(mdp, pi, qFromValues(mdp, current), allowed)
            return current, noise
    logger.warning("adversarialFixedPoint: no convergence after %d sweeps", maxIterations)
    raise ConvergenceError("adversarial iteration did not converge", maxIterations)


def exhaustiveAdversarialMinimum(mdp, pi, allowed):
    """
    Elementwise minimum of the merged-policy values over every deterministic
    noise map. Exponential in the number of states; meant for small checks.
    """
    best = None
    for noise in enumerateDeterministicNoises(allowed):
        values = evaluatePolicy(mdp, pi, noise).v
        best = values if best is None else np.minimum(best, values)
    return ValueTable(best)
