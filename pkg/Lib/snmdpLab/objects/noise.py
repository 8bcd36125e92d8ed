# -*- coding: utf-8 -*-

"""
    State-noise mechanisms.

    TabularNoise is the kernel N(v|s) of a state-noisy MDP: the agent standing
    in s observes v, drawn from the allowed set B(s). ContinuousNoise perturbs
    real state vectors, either with Gaussian draws or with a PGD adversary in
    an l-infinity ball.
"""

import itertools

import numpy as np
from scipy.special import log_softmax, softmax

from snmdpLab.objects.error import ConfigurationError
from snmdpLab.objects.mdp import PROBABILITY_TOLERANCE

__all__ = [
    "TabularNoise",
    "ContinuousNoise",
    "greedyAdversarialNoise",
    "enumerateDeterministicNoises",
    "applyGaussian",
    "pgdPerturbation",
    "pgdObjective",
    "finiteDifferenceJacobian",
]


def _allowedMask(allowed, nStates=None):
    """ Turn a list of allowed sets, or a boolean matrix, into a boolean matrix. """
    if isinstance(allowed, np.ndarray) and allowed.dtype == bool:
        mask = allowed.copy()
    else:
        allowed = [sorted(set(int(v) for v in members)) for members in allowed]
        n = len(allowed) if nStates is None else nStates
        mask = np.zeros((n, n), dtype=bool)
        for s, members in enumerate(allowed):
            for v in members:
                if v < 0 or v >= n:
                    raise ConfigurationError("allowed state out of range", (s, v))
                mask[s, v] = True
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ConfigurationError("allowed sets must form a square mask", mask.shape)
    for s in range(mask.shape[0]):
        if not mask[s].any():
            raise ConfigurationError("empty allowed set", s)
        if not mask[s, s]:
            raise ConfigurationError("allowed set must contain its own state", s)
    return mask


class TabularNoise(object):
    """
    Noise kernel N(v|s) over allowed sets B(s), with s always in B(s).
    ::

        >>> n = TabularNoise.identity(3)
        >>> n
        <TabularNoise states:3 deterministic >
        >>> n.allowedSet(1)
        [1]
        >>> n = TabularNoise([[0.5, 0.5], [0.0, 1.0]], [{0, 1}, {1}])
        >>> n
        <TabularNoise states:2 random >
        >>> TabularNoise([[0.5, 0.5], [0.5, 0.5]], [{0, 1}, {1}])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'kernel puts mass outside the allowed set'1
    """

    def __init__(self, kernel, allowed):
        kernel = np.array(kernel, dtype=float)
        mask = _allowedMask(allowed, kernel.shape[0] if kernel.ndim == 2 else None)
        if kernel.shape != mask.shape:
            raise ConfigurationError("kernel shape does not match the allowed sets", kernel.shape)
        if np.any(kernel < 0) or not np.all(np.isfinite(kernel)):
            raise ConfigurationError("kernel has negative or non-finite entries")
        for s in range(kernel.shape[0]):
            if np.any(kernel[s, ~mask[s]] != 0):
                raise ConfigurationError("kernel puts mass outside the allowed set", s)
        worst = float(np.max(np.abs(kernel.sum(axis=1) - 1.0)))
        if worst > PROBABILITY_TOLERANCE:
            raise ConfigurationError("kernel rows do not sum to 1", worst)
        kernel.setflags(write=False)
        mask.setflags(write=False)
        self.kernel = kernel
        self.allowed = mask

    def __repr__(self):
        kind = "deterministic" if self.isDeterministic() else "random"
        return "<%s states:%d %s >" % (self.__class__.__name__, self.nStates, kind)

    def __eq__(self, other):
        return (isinstance(other, TabularNoise)
                and np.array_equal(self.kernel, other.kernel)
                and np.array_equal(self.allowed, other.allowed))

    def __hash__(self):
        return hash((self.kernel.tobytes(), self.allowed.tobytes()))

    @property
    def nStates(self):
        return self.kernel.shape[0]

    def allowedSet(self, s):
        return [int(v) for v in np.flatnonzero(self.allowed[s])]

    def isDeterministic(self):
        return bool(np.all(np.isin(self.kernel, (0.0, 1.0))))

    def choices(self):
        """ Return v*(s) for a deterministic kernel. """
        if not self.isDeterministic():
            raise ConfigurationError("kernel is not deterministic")
        return [int(v) for v in self.kernel.argmax(axis=1)]

    def asDict(self):
        """
        ::

            >>> TabularNoise([[0.5, 0.5], [0.0, 1.0]], [{0, 1}, {1}]).asDict()
            {'kernel': [[0.5, 0.5], [0.0, 1.0]], 'allowed': [[0, 1], [1]]}
        """
        return dict(kernel=self.kernel.tolist(), allowed=[self.allowedSet(s) for s in range(self.nStates)])

    @classmethod
    def fromDict(cls, data):
        return cls(data["kernel"], data["allowed"])

    @classmethod
    def identity(cls, nStates):
        return cls(np.eye(nStates), [{s} for s in range(nStates)])

    @classmethod
    def deterministic(cls, choices, allowed):
        """ Make the kernel that maps s to choices[s] with probability 1. """
        n = len(choices)
        kernel = np.zeros((n, n))
        kernel[np.arange(n), np.asarray(choices, dtype=int)] = 1.0
        return cls(kernel, allowed)

    @classmethod
    def random(cls, allowed, rng):
        """ Draw a flat-Dirichlet kernel on every allowed set. """
        mask = _allowedMask(allowed)
        kernel = np.zeros(mask.shape)
        for s in range(mask.shape[0]):
            members = np.flatnonzero(mask[s])
            weights = rng.dirichlet(np.ones(len(members)))
            kernel[s, members] = weights / weights.sum()
        return cls(kernel, mask)

    @classmethod
    def randomAllowedSets(cls, nStates, maxSize, rng):
        """ Draw allowed sets of size at most maxSize, each containing its own state. """
        sets = []
        for s in range(nStates):
            others = [v for v in range(nStates) if v != s]
            size = int(rng.integers(1, max(1, maxSize) + 1))
            extra = rng.choice(others, size=min(size - 1, len(others)), replace=False) if others else []
            sets.append({s} | set(int(v) for v in extra))
        return sets


def greedyAdversarialNoise(mdp, pi, values, allowed):
    """
    Pick the deterministic v*(s) in B(s) minimizing sum_a pi(a|v) values(s, a).
    Ties go to the lowest state index.
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.mdp import TabularMDP, Policy
        >>> m = TabularMDP(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)), 0.9)
        >>> pi = Policy.deterministic([0, 1], 2)
        >>> greedyAdversarialNoise(m, pi, np.zeros((2, 2)), [{0, 1}, {0, 1}]).choices()
        [0, 0]
        >>> q = np.array([[1.0, 0.0], [1.0, 0.0]])
        >>> greedyAdversarialNoise(m, pi, q, [{0, 1}, {0, 1}]).choices()
        [1, 1]
    """
    if isinstance(allowed, TabularNoise):
        mask = allowed.allowed
    else:
        mask = _allowedMask(allowed, mdp.nStates)
    values = np.asarray(values, dtype=float)
    if values.shape != (mdp.nStates, mdp.nActions):
        raise ConfigurationError("values must have shape (S, A)", values.shape)
    # scores[s, v] = sum_a pi(a|v) values(s, a)
    scores = values @ pi.probs.T
    scores = np.where(mask, scores, np.inf)
    return TabularNoise.deterministic(np.argmin(scores, axis=1), mask)


def enumerateDeterministicNoises(allowed):
    """
    Yield every deterministic kernel over the allowed sets, in lexicographic order.
    ::

        >>> [n.choices() for n in enumerateDeterministicNoises([{0, 1}, {1}])]
        [[0, 1], [1, 1]]
    """
    mask = _allowedMask(allowed)
    members = [list(np.flatnonzero(row)) for row in mask]
    for choices in itertools.product(*members):
        yield TabularNoise.deterministic(choices, mask)


class ContinuousNoise(object):
    """
    Gaussian or PGD perturber for real state vectors.
    ::

        >>> ContinuousNoise.gaussian(0.05)
        <ContinuousNoise gaussian std:0.05 >
        >>> ContinuousNoise.pgd(0.1)
        <ContinuousNoise pgd epsilon:0.1 iterations:3 >
        >>> ContinuousNoise.pgd(-1.0)
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'epsilon must be >= 0'-1.0
    """

    GAUSSIAN = "gaussian"
    PGD = "pgd"

    def __init__(self, variant, std=0.0, epsilon=0.0, iterations=3, stepSize=None):
        if variant not in (self.GAUSSIAN, self.PGD):
            raise ConfigurationError("unknown noise variant", variant)
        if std < 0:
            raise ConfigurationError("std must be >= 0", std)
        if epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0", epsilon)
        if iterations < 1:
            raise ConfigurationError("iterations must be positive", iterations)
        if stepSize is not None and stepSize <= 0:
            raise ConfigurationError("step size must be > 0", stepSize)
        self.variant = variant
        self.std = float(std)
        self.epsilon = float(epsilon)
        self.iterations = int(iterations)
        self.stepSize = stepSize

    def __repr__(self):
        if self.variant == self.GAUSSIAN:
            return "<%s gaussian std:%g >" % (self.__class__.__name__, self.std)
        return "<%s pgd epsilon:%g iterations:%d >" % (self.__class__.__name__, self.epsilon, self.iterations)

    @classmethod
    def gaussian(cls, std):
        return cls(cls.GAUSSIAN, std=std)

    @classmethod
    def pgd(cls, epsilon, iterations=3, stepSize=None):
        return cls(cls.PGD, epsilon=epsilon, iterations=iterations, stepSize=stepSize)

    @property
    def strength(self):
        return self.std if self.variant == self.GAUSSIAN else self.epsilon

    def isNull(self):
        return self.strength == 0

    def perturb(self, state, rng, logitsFn=None, jacobianFn=None, featureScale=None):
        """ Return the perturbed state. PGD needs logitsFn. """
        state = np.asarray(state, dtype=float)
        if self.variant == self.GAUSSIAN:
            return applyGaussian(state, self.std, rng)
        if logitsFn is None:
            raise ConfigurationError("pgd noise needs the policy logits")
        eta = pgdPerturbation(state, logitsFn, self.epsilon, self.iterations, self.stepSize,
                jacobianFn=jacobianFn, featureScale=featureScale)
        return state + eta


def applyGaussian(state, std, rng):
    """
    Return state + eta with eta ~ normal(0, std^2) per coordinate.
    ::

        >>> import numpy as np
        >>> s = np.array([0.1, -0.2])
        >>> applyGaussian(s, 0.0, np.random.default_rng(0)).tolist()
        [0.1, -0.2]
        >>> a = applyGaussian(s, 0.05, np.random.default_rng(7))
        >>> b = applyGaussian(s, 0.05, np.random.default_rng(7))
        >>> bool(np.array_equal(a, b))
        True
    """
    if std < 0:
        raise ConfigurationError("std must be >= 0", std)
    state = np.array(state, dtype=float)
    if std == 0:
        return state
    return state + rng.normal(0.0, std, size=state.shape)


def finiteDifferenceJacobian(fn, x, step=1e-5, featureScale=None):
    """
    Central-difference Jacobian of a vector function, one column per coordinate.
    The step along coordinate i is step * featureScale[i].
    ::

        >>> import numpy as np
        >>> W = np.array([[1.0, 2.0], [3.0, 4.0]])
        >>> J = finiteDifferenceJacobian(lambda x: W @ x, np.zeros(2))
        >>> bool(np.allclose(J, W, atol=1e-9))
        True
    """
    x = np.asarray(x, dtype=float)
    scale = np.ones_like(x) if featureScale is None else np.asarray(featureScale, dtype=float)
    columns = []
    for i in range(x.size):
        h = step * scale[i]
        offset = np.zeros_like(x)
        offset[i] = h
        columns.append((np.asarray(fn(x + offset), dtype=float) - np.asarray(fn(x - offset), dtype=float)) / (2 * h))
    return np.stack(columns, axis=-1)


def _leastChosenAction(logits):
    # lowest policy probability; argmin keeps the first index on ties
    return int(np.argmin(softmax(logits)))


def pgdObjective(state, eta, logitsFn, target):
    """ Cross-entropy of the policy at state + eta toward the one-hot target action. """
    return float(-log_softmax(np.asarray(logitsFn(state + eta), dtype=float))[target])


def pgdPerturbation(state, logitsFn, epsilon, iterations=3, stepSize=None,
        jacobianFn=None, featureScale=None, fdStep=1e-5, backtrack=False):
    """
    Sign-gradient descent on the cross-entropy toward the least-chosen action,
    clipped to the l-infinity ball of radius epsilon after every step.

    *   logitsFn:       state -> per-action logits
    *   jacobianFn:     optional state -> (actions x dims) logit Jacobian.
                        Without it the gradient comes from central differences.
    *   stepSize:       defaults to epsilon / iterations
    *   backtrack:      halve the step until the objective does not increase

    ::

        >>> import numpy as np
        >>> W = np.array([[1.0, -1.0], [0.5, 2.0], [-1.0, 0.0]])
        >>> s = np.array([0.3, -0.1])
        >>> pgdPerturbation(s, lambda x: W @ x, 0.0).tolist()
        [0.0, 0.0]
        >>> eta = pgdPerturbation(s, lambda x: W @ x, 0.1, iterations=5)
        >>> bool(np.max(np.abs(eta)) <= 0.1)
        True
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be >= 0", epsilon)
    state = np.asarray(state, dtype=float)
    eta = np.zeros_like(state)
    if epsilon == 0:
        return eta
    if stepSize is None:
        stepSize = epsilon / iterations
    target = _leastChosenAction(np.asarray(logitsFn(state), dtype=float))
    for i in range(iterations):
        point = state + eta
        if jacobianFn is not None:
            jacobian = np.asarray(jacobianFn(point), dtype=float)
        else:
            jacobian = finiteDifferenceJacobian(logitsFn, point, step=fdStep, featureScale=featureScale)
        probs = softmax(np.asarray(logitsFn(point), dtype=float))
        probs[target] -= 1.0
        gradient = jacobian.T @ probs
        step = stepSize
        candidate = np.clip(eta - step * np.sign(gradient), -epsilon, epsilon)
        if backtrack:
            current = pgdObjective(state, eta, logitsFn, target)
            halvings = 0
            while pgdObjective(state, candidate, logitsFn, target) > current and halvings < 30:
                step *= 0.5
                halvings += 1
                candidate = np.clip(eta - step * np.sign(gradient), -epsilon, epsilon)
            if pgdObjective(state, candidate, logitsFn, target) > current:
                candidate = eta
        eta = candidate
    return eta
