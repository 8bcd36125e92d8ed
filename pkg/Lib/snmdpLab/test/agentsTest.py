"""

Tests for the value-based agents: exploration, the least-squares and
histogram updates, the replay buffer and how observation noise enters
an episode.

"""

import doctest

import numpy as np
from scipy.special import softmax
from scipy.stats import chisquare

from snmdpLab.control.agents import (AgentConfig, Agent, ReplayBuffer, Transition, NoiseInjection,
        runEpisode, trainAgent)
from snmdpLab.control.envs import makeEnv
from snmdpLab.objects.heads import finiteDifferenceGradient
from snmdpLab.objects.noise import ContinuousNoise


def randomBatch(rng, n, stateSize, nActions):
    states = rng.normal(size=(n, stateSize))
    actions = rng.integers(0, nActions, size=n)
    rewards = rng.normal(size=n)
    nextStates = rng.normal(size=(n, stateSize))
    dones = (rng.random(n) < 0.3).astype(float)
    return states, actions, rewards, nextStates, dones


def histogramAgent(rng, k=5, nActions=3, stateSize=2, headMode="linear"):
    config = AgentConfig(lossKind="histogram", k=k, headMode=headMode, width=6, normBound=1.0, initScale=0.5)
    return Agent(config, stateSize, nActions, None, (-10.0, 10.0), rng)


def testExploration():
    """
    Full exploration picks every action equally often.

    >>> agent = Agent(AgentConfig(headMode="linear"), 2, 3, None, None, np.random.default_rng(0))
    >>> counts = np.bincount([agent.act(np.zeros(2), 1.0) for i in range(10000)], minlength=3)
    >>> bool(chisquare(counts).pvalue > 1e-6), int(counts.sum())
    (True, 10000)

    >>> c = AgentConfig(totalSteps=1000, explorationFraction=0.1)
    >>> agent = Agent(c, 2, 2, None, None, np.random.default_rng(0))
    >>> [round(agent.epsilonAt(step), 12) for step in (0, 50, 100, 500)]
    [1.0, 0.51, 0.02, 0.02]
    """


def testHistogramGreedyAction():
    """
    The greedy action maximizes the bin-center expectation.

    >>> rng = np.random.default_rng(1)
    >>> agent = histogramAgent(rng)
    >>> centers = -10.0 + 4.0 * (np.arange(5) + 0.5)
    >>> agree = []
    >>> for trial in range(50):
    ...     state = rng.normal(size=2) * 3
    ...     scores = (agent.online.theta @ np.append(state, 1.0)).reshape(3, 5)
    ...     oracle = int(np.argmax(softmax(scores, axis=1) @ centers))
    ...     agree.append(agent.act(state, 0.0) == oracle)
    >>> all(agree)
    True
    """


def testDqnUpdateAtFixedPoint():
    """
    When every target equals the prediction nothing moves.

    >>> rng = np.random.default_rng(2)
    >>> agent = Agent(AgentConfig(width=6, initScale=0.5), 3, 2, None, None, rng)
    >>> states, actions, rewards, nextStates, dones = randomBatch(rng, 8, 3, 2)
    >>> rewards = agent.online.qValues(states)[np.arange(8), actions]
    >>> theta = agent.online.theta.copy()
    >>> W = agent.online.featureMap.layers[0][0].copy()
    >>> diagnostics = agent.dqnUpdate((states, actions, rewards, nextStates, np.ones(8)))
    >>> diagnostics["loss"]
    0.0
    >>> bool(np.array_equal(agent.online.theta, theta)), bool(np.array_equal(agent.online.featureMap.layers[0][0], W))
    (True, True)
    """


def testDqnHandStep():
    """
    One terminal transition on a linear head, features [1, 2, 1]:
    the residual is 1 - 0.5, so row 0 moves by 0.1 * 0.5 * [1, 2, 1].

    >>> agent = Agent(AgentConfig(headMode="linear", learningRate=0.1), 2, 2, None, None, np.random.default_rng(0))
    >>> agent.online.theta = np.array([[0.5, 0.0, 0.0], [0.0, 0.0, 0.0]])
    >>> batch = (np.array([[1.0, 2.0]]), np.array([0]), np.array([1.0]), np.zeros((1, 2)), np.array([1.0]))
    >>> diagnostics = agent.dqnUpdate(batch)
    >>> agent.online.theta.round(12).tolist()
    [[0.55, 0.1, 0.05], [0.0, 0.0, 0.0]]
    >>> diagnostics["loss"], diagnostics["bound"], agent.updates
    (0.125, None, 1)
    """


def testDqnGradientsMatchFiniteDifferences():
    """
    >>> rng = np.random.default_rng(3)
    >>> agent = Agent(AgentConfig(width=6, initScale=0.5), 3, 2, None, None, rng)
    >>> batch = randomBatch(rng, 8, 3, 2)
    >>> loss, thetaGrad, layerGrads, stateGrads = agent.dqnGradients(batch)
    >>> theta = agent.online.theta.copy()
    >>> def lossAtTheta(value):
    ...     agent.online.theta = value
    ...     return agent.dqnGradients(batch)[0]
    >>> numeric = finiteDifferenceGradient(lossAtTheta, theta)
    >>> agent.online.theta = theta
    >>> bool(np.max(np.abs(numeric - thetaGrad)) <= 1e-6)
    True

    Layer gradients are summed over the batch.

    >>> W, b = agent.online.featureMap.layers[0]
    >>> def lossAtFirstLayer(value):
    ...     agent.online.featureMap.layers[0] = (value, b)
    ...     return agent.dqnGradients(batch)[0]
    >>> numeric = finiteDifferenceGradient(lossAtFirstLayer, W.copy())
    >>> agent.online.featureMap.layers[0] = (W, b)
    >>> bool(np.max(np.abs(numeric - layerGrads[0][0] / 8)) <= 1e-6)
    True
    """


def testHistdqnGradients():
    """
    A target equal to the predicted histogram gives no gradient.

    >>> rng = np.random.default_rng(4)
    >>> agent = histogramAgent(rng, headMode="nonlinear")
    >>> states, actions, rewards, nextStates, dones = randomBatch(rng, 6, 2, 3)
    >>> predicted = agent.online.distribution(states)[np.arange(6), actions]
    >>> agent.targetHistograms = lambda rewards, nextStates, dones: predicted
    >>> loss, thetaGrad, layerGrads, stateGrads = agent.histdqnGradients((states, actions, rewards, nextStates, dones))
    >>> bool(np.max(np.abs(thetaGrad)) <= 1e-12), bool(np.max(np.abs(stateGrads)) <= 1e-12)
    (True, True)

    A terminal transition puts all the target mass on the bin of its reward.

    >>> agent = histogramAgent(rng)
    >>> agent.targetHistograms(np.array([3.0]), np.zeros((1, 2)), np.array([1.0])).round(12).tolist()
    [[0.0, 0.0, 0.0, 1.0, 0.0]]
    """


def testHistdqnStateGradientsStayBounded():
    """
    >>> config = AgentConfig.defaults("cartpole", "histogram", totalSteps=300, learningStarts=50,
    ...                               batchSize=8, width=8, replayCapacity=500)
    >>> result = trainAgent(config, makeEnv("cartpole"), NoiseInjection("none"), np.random.SeedSequence(5))
    >>> result.bound is not None, result.boundViolations, result.diverged
    (True, 0, False)
    >>> result.gradNormMax <= result.bound
    True
    >>> result.steps >= 300, len(result.returns) == len(result.gradNormMeans)
    (True, True)
    """


def testReplayBuffer():
    """
    >>> b = ReplayBuffer(3, 1)
    >>> b.sample(2, np.random.default_rng(0))
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'cannot sample from an empty replay buffer'
    >>> for i in range(5):
    ...     b.add(Transition([float(i)], i % 2, float(i), [float(i + 1)], i == 4))
    >>> len(b), b.position, sorted(b.states[:, 0].tolist())
    (3, 2, [2.0, 3.0, 4.0])
    >>> states, actions, rewards, nextStates, dones = b.sample(20, np.random.default_rng(1))
    >>> bool(np.array_equal(nextStates[:, 0], states[:, 0] + 1)), bool(np.array_equal(rewards, states[:, 0]))
    (True, True)
    """


def testReplaySamplingIsUniform():
    """
    Indices only reach the filled slots and hit each of them equally
    often, both before the ring fills and after it wraps.

    >>> def passes(count, seeds=range(5), draws=100000):
    ...     b = ReplayBuffer(10, 1)
    ...     for i in range(count):
    ...         b.add(Transition([float(i)], 0, 0.0, [0.0], False))
    ...     passed = 0
    ...     for seed in seeds:
    ...         index = b.sampleIndices(draws, np.random.default_rng(seed))
    ...         if index.min() < 0 or index.max() >= len(b):
    ...             return -1
    ...         passed += bool(chisquare(np.bincount(index, minlength=len(b))).pvalue > 0.01)
    ...     return passed
    >>> passes(7) >= 4, passes(23) >= 4
    (True, True)
    """


def _episode(site, noise, seed=7):
    agent = Agent(AgentConfig(width=6, initScale=0.5), 4, 2, makeEnv("cartpole").observationScale, None,
                  np.random.default_rng(0))
    return runEpisode(agent, makeEnv("cartpole"), NoiseInjection(site, noise), np.random.default_rng(seed),
                      np.random.default_rng(seed + 1))


def testRunEpisodeInjection():
    """
    Inactive injections replay the noise-free episode.

    >>> clean, cleanSteps = _episode("none", None)
    >>> for site, noise in [("none", ContinuousNoise.gaussian(0.5)), ("both", ContinuousNoise.gaussian(0.0)),
    ...                     ("current", ContinuousNoise.pgd(0.0))]:
    ...     total, steps = _episode(site, noise)
    ...     print(total == clean, [t.action for t in steps] == [t.action for t in cleanSteps])
    True True
    True True
    True True

    With noise on both states the stored next observation is the one
    acted on at the following step; with noise on the next state only the
    agent acts on the clean state.

    >>> total, steps = _episode("both", ContinuousNoise.gaussian(0.05))
    >>> len(steps) > 1
    True
    >>> all(bool(np.array_equal(a.nextState, b.state)) for a, b in zip(steps, steps[1:]))
    True
    >>> total, steps = _episode("next", ContinuousNoise.gaussian(0.05))
    >>> bool(np.array_equal(steps[0].nextState, steps[1].state))
    False
    >>> steps[-1].done
    True
    """


if __name__ == "__main__":
    doctest.testmod()
