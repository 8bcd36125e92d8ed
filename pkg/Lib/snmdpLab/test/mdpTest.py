"""

Tests for the tabular MDP, policies and the noise mechanisms.

The merged policy is checked against an explicit double sum, the greedy
adversary against hand-built value tables, and the PGD step against the
closed form for a linear softmax policy.

"""

import doctest

import numpy as np
from scipy.special import softmax

from snmdpLab.objects.mdp import TabularMDP, Policy, mergedPolicy
from snmdpLab.objects.noise import (TabularNoise, ContinuousNoise, greedyAdversarialNoise,
        enumerateDeterministicNoises, applyGaussian, pgdObjective, pgdPerturbation)


def randomMDP(nStates, nActions, rng, gamma=0.9):
    transition = rng.dirichlet(np.ones(nStates), size=(nStates, nActions))
    transition = transition / transition.sum(axis=2, keepdims=True)
    reward = rng.uniform(-1.0, 1.0, size=(nStates, nActions, nStates))
    return TabularMDP(transition, reward, gamma)


def testValidation():
    """
    >>> TabularMDP(np.ones((2, 1, 2)) * 0.5, np.zeros((2, 1, 2)), 1.0)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'gamma must lie strictly inside (0, 1)'1.0
    >>> TabularMDP(np.ones((2, 1, 2)) * 0.5, np.zeros((2, 2, 2)), 0.9)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'reward must match the transition shape'(2, 2, 2)
    >>> Policy([[0.5, 0.6]])
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'policy rows do not sum to 1'0.10000000000000009
    >>> TabularNoise([[1.0, 0.0], [1.0, 0.0]], [{0}, {0}])
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'allowed set must contain its own state'1
    """


def testValueSupport():
    """
    >>> m = TabularMDP(np.full((2, 1, 2), 0.5), np.array([[[1.0, 2.0]], [[0.5, 1.0]]]), 0.5)
    >>> m.valueSupport()
    (0.0, 4.0)
    >>> m.stateReward(Policy.uniform(2, 1)).tolist()
    [1.5, 0.75]
    """


def testMergedPolicyMatchesEnumeration():
    """
    Every merged probability equals the double sum over observed states.

    >>> rng = np.random.default_rng(11)
    >>> m = randomMDP(3, 2, rng)
    >>> pi = Policy.random(3, 2, rng)
    >>> noise = TabularNoise.random([{0, 1}, {1, 2}, {0, 1, 2}], rng)
    >>> expected = np.zeros((3, 2))
    >>> for s in range(3):
    ...     for v in range(3):
    ...         for a in range(2):
    ...             expected[s, a] += noise.kernel[s, v] * pi.probs[v, a]
    >>> bool(np.allclose(mergedPolicy(m, pi, noise).probs, expected, atol=1e-12))
    True
    >>> mergedPolicy(m, pi, TabularNoise.identity(3)) == pi
    True
    """


def testGreedyNoise():
    """
    Singleton allowed sets leave nothing to choose.

    >>> rng = np.random.default_rng(3)
    >>> m = randomMDP(4, 3, rng)
    >>> pi = Policy.random(4, 3, rng)
    >>> noise = greedyAdversarialNoise(m, pi, rng.normal(size=(4, 3)), [{s} for s in range(4)])
    >>> noise == TabularNoise.identity(4)
    True

    The adversary routes state 0 onto the observation whose action has the
    lower value.

    >>> m = TabularMDP(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)), 0.9)
    >>> pi = Policy.deterministic([0, 1], 2)
    >>> q = np.array([[5.0, 1.0], [0.0, 3.0]])
    >>> greedyAdversarialNoise(m, pi, q, [{0, 1}, {1}]).choices()
    [1, 1]

    With the values held fixed, choosing again gives the same kernel.

    >>> rng = np.random.default_rng(17)
    >>> m = randomMDP(5, 3, rng)
    >>> pi = Policy.random(5, 3, rng)
    >>> allowed = TabularNoise.randomAllowedSets(5, 3, rng)
    >>> q = rng.normal(size=(5, 3))
    >>> first = greedyAdversarialNoise(m, pi, q, allowed)
    >>> second = greedyAdversarialNoise(m, pi, q, first)
    >>> first == second, bool(np.array_equal(first.kernel, greedyAdversarialNoise(m, pi, q, allowed).kernel))
    (True, True)
    """


def testEnumeration():
    """
    >>> noises = list(enumerateDeterministicNoises([{0, 1}, {0, 1}, {2}]))
    >>> len(noises)
    4
    >>> [n.choices() for n in noises]
    [[0, 0, 2], [0, 1, 2], [1, 0, 2], [1, 1, 2]]
    """


def testGaussianMean():
    """
    The sample mean of many perturbations sits near the clean state.

    >>> rng = np.random.default_rng(5)
    >>> s = np.array([0.5, -1.0])
    >>> draws = np.array([applyGaussian(s, 0.05, rng) for i in range(20000)])
    >>> bool(np.all(np.abs(draws.mean(axis=0) - s) <= 5 * 0.05 / np.sqrt(20000)))
    True
    >>> ContinuousNoise.gaussian(0.0).isNull()
    True
    """


def testGaussianSeeded():
    """
    The same seed gives the same perturbations, bit for bit.

    >>> s = np.array([0.5, -1.0, 2.0])
    >>> def draws(seed):
    ...     rng = np.random.default_rng(seed)
    ...     return np.array([applyGaussian(s, 0.1, rng) for i in range(50)])
    >>> bool(np.array_equal(draws(12), draws(12))), bool(np.array_equal(draws(12), draws(13)))
    (True, False)
    >>> n = ContinuousNoise.gaussian(0.1)
    >>> a = n.perturb(s, np.random.default_rng(4))
    >>> bool(np.array_equal(a, applyGaussian(s, 0.1, np.random.default_rng(4))))
    True
    """


def _tanhLogits(rng, nActions=4, dims=3, width=6):
    inner = rng.normal(size=(width, dims)) * 2.0
    outer = rng.normal(size=(nActions, width))
    return lambda x: outer @ np.tanh(inner @ x)


def testPgdBacktrackingDescends():
    """
    With backtracking the cross-entropy toward the target action never
    rises, neither against the clean state nor from one iteration count to
    the next.

    >>> rng = np.random.default_rng(9)
    >>> rises = 0
    >>> for trial in range(20):
    ...     logitsFn = _tanhLogits(rng)
    ...     s = rng.normal(size=3)
    ...     target = int(np.argmin(softmax(logitsFn(s))))
    ...     previous = pgdObjective(s, np.zeros(3), logitsFn, target)
    ...     for iterations in range(1, 6):
    ...         eta = pgdPerturbation(s, logitsFn, 0.5, iterations=iterations, stepSize=0.4, backtrack=True)
    ...         value = pgdObjective(s, eta, logitsFn, target)
    ...         rises += value > previous
    ...         previous = value
    ...         rises += bool(np.max(np.abs(eta)) > 0.5)
    >>> rises
    0
    """


def testPgdClosedForm():
    """
    One step with a step size larger than epsilon lands on the corner of the
    ball opposite the sign of the cross-entropy gradient.

    >>> W = np.array([[1.0, -1.0], [0.5, 2.0], [-1.0, 0.0]])
    >>> s = np.array([0.3, -0.1])
    >>> probs = softmax(W @ s)
    >>> target = int(np.argmin(probs))
    >>> target
    2
    >>> g = W.T @ (probs - np.eye(3)[target])
    >>> eta = pgdPerturbation(s, lambda x: W @ x, 0.1, iterations=1, stepSize=1.0, jacobianFn=lambda x: W)
    >>> bool(np.array_equal(eta, -0.1 * np.sign(g)))
    True
    >>> fd = pgdPerturbation(s, lambda x: W @ x, 0.1, iterations=1, stepSize=1.0)
    >>> bool(np.array_equal(fd, eta))
    True

    The perturbation never leaves the ball and lowers the probability of the
    action the clean state prefers.

    >>> n = ContinuousNoise.pgd(0.1, iterations=5)
    >>> perturbed = n.perturb(s, None, logitsFn=lambda x: W @ x, jacobianFn=lambda x: W)
    >>> bool(np.max(np.abs(perturbed - s)) <= 0.1 + 1e-15)
    True
    >>> bool(softmax(W @ perturbed)[target] > probs[target])
    True
    """


if __name__ == "__main__":
    doctest.testmod()
