# -*- coding: utf-8 -*-

"""
    Value-based agents for the control tasks.

    Both agents share the replay buffer, the target network, epsilon-greedy
    exploration and plain SGD. They differ in the head and the loss:

    *   least squares:  one row of final weights per action, loss
                        1/2 mean (U - Q(s, a))^2 against the bootstrapped target
    *   histogram:      k rows per action, softmax over k bins of a fixed
                        support, cross-entropy against the projected target
                        distribution; final rows are kept within norm l

    Observations may be perturbed on the current state, the next state or
    both before they are acted on and stored. The true state always drives
    the environment.
"""

import collections
import logging

import numpy as np
from scipy.special import log_softmax, softmax

from snmdpLab.objects.error import ConfigurationError, NumericError
from snmdpLab.objects.heads import NonlinearFeatureMap, categoricalProjection, projectRowNorms
from snmdpLab.objects.noise import ContinuousNoise

__all__ = [
    "AgentConfig",
    "ReplayBuffer",
    "Transition",
    "NoiseInjection",
    "QNetwork",
    "Agent",
    "TrainingResult",
    "runEpisode",
    "trainAgent",
    "INJECTION_SITES",
    "LOSS_KINDS",
]

INJECTION_SITES = ("none", "current", "next", "both")
LOSS_KINDS = ("least_squares", "histogram")
HEAD_MODES = ("linear", "nonlinear")

Transition = collections.namedtuple("Transition", "state action reward nextState done")

logger = logging.getLogger("snmdpLab")


class AgentConfig(object):
    """
    Hyperparameters of one agent.
    ::

        >>> c = AgentConfig.defaults("cartpole", "histogram")
        >>> c
        <AgentConfig histogram nonlinear k:20 l:1 lr:0.001 steps:200000 >
        >>> AgentConfig(lossKind="histogram", k=1)
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'histogram heads need k >= 2'1
    """

    def __init__(self, lossKind="least_squares", k=20, headMode="nonlinear", width=32, normBound=None,
                 gamma=0.99, learningRate=1e-3, replayCapacity=10000, batchSize=32, syncPeriod=100,
                 learningStarts=1000, epsilonStart=1.0, epsilonEnd=0.02, explorationFraction=0.1,
                 totalSteps=200000, temperature=1.0, initScale=0.01):
        self.lossKind = lossKind
        self.k = int(k)
        self.headMode = headMode
        self.width = int(width)
        self.normBound = None if normBound is None else float(normBound)
        self.gamma = float(gamma)
        self.learningRate = float(learningRate)
        self.replayCapacity = int(replayCapacity)
        self.batchSize = int(batchSize)
        self.syncPeriod = int(syncPeriod)
        self.learningStarts = int(learningStarts)
        self.epsilonStart = float(epsilonStart)
        self.epsilonEnd = float(epsilonEnd)
        self.explorationFraction = float(explorationFraction)
        self.totalSteps = int(totalSteps)
        self.temperature = float(temperature)
        self.initScale = float(initScale)
        self.validate()

    def __repr__(self):
        return "<%s %s %s k:%d l:%s lr:%g steps:%d >" % (
            self.__class__.__name__, self.lossKind, self.headMode, self.k,
            "none" if self.normBound is None else "%g" % self.normBound, self.learningRate, self.totalSteps)

    def validate(self):
        if self.lossKind not in LOSS_KINDS:
            raise ConfigurationError("unknown loss kind", self.lossKind)
        if self.headMode not in HEAD_MODES:
            raise ConfigurationError("unknown head mode", self.headMode)
        if self.lossKind == "histogram" and self.k < 2:
            raise ConfigurationError("histogram heads need k >= 2", self.k)
        if not (0.0 < self.gamma < 1.0):
            raise ConfigurationError("gamma must lie strictly inside (0, 1)", self.gamma)
        for name in ("width", "learningRate", "replayCapacity", "batchSize", "syncPeriod",
                     "totalSteps", "temperature"):
            if not getattr(self, name) > 0:
                raise ConfigurationError("%s must be positive" % name, getattr(self, name))
        if self.normBound is not None and not self.normBound > 0:
            raise ConfigurationError("normBound must be positive", self.normBound)
        if self.learningStarts < 0:
            raise ConfigurationError("learningStarts must be >= 0", self.learningStarts)
        if not (0.0 <= self.epsilonEnd <= self.epsilonStart <= 1.0):
            raise ConfigurationError("exploration must decrease inside [0, 1]")
        if not (0.0 < self.explorationFraction <= 1.0):
            raise ConfigurationError("explorationFraction must lie in (0, 1]", self.explorationFraction)

    @classmethod
    def defaults(cls, envName, lossKind, **overrides):
        """ Per-task defaults: k 20 and lr 1e-3 on cartpole, k 2 and lr 5e-4 on mountaincar. """
        values = dict(lossKind=lossKind)
        if envName == "mountaincar":
            values.update(k=2, learningRate=5e-4, totalSteps=100000)
        elif envName != "cartpole":
            raise ConfigurationError("unknown environment", envName)
        if lossKind == "histogram":
            values["normBound"] = 1.0
        values.update(overrides)
        return cls(**values)

    def asDict(self):
        return dict(self.__dict__)


class ReplayBuffer(object):
    """
    FIFO ring of transitions, sampled uniformly with replacement.
    ::

        >>> import numpy as np
        >>> b = ReplayBuffer(2, 1)
        >>> for i in range(3):
        ...     b.add(Transition([float(i)], 0, 1.0, [float(i + 1)], False))
        >>> len(b), sorted(b.states[:, 0].tolist())
        (2, [1.0, 2.0])
    """

    def __init__(self, capacity, stateSize):
        self.capacity = capacity
        self.states = np.zeros((capacity, stateSize))
        self.actions = np.zeros(capacity, dtype=int)
        self.rewards = np.zeros(capacity)
        self.nextStates = np.zeros((capacity, stateSize))
        self.dones = np.zeros(capacity)
        self.size = 0
        self.position = 0

    def __len__(self):
        return self.size

    def add(self, transition):
        i = self.position
        self.states[i] = transition.state
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.nextStates[i] = transition.nextState
        self.dones[i] = float(transition.done)
        self.position = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sampleIndices(self, batchSize, rng):
        if self.size == 0:
            raise ConfigurationError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batchSize)

    def sample(self, batchSize, rng):
        index = self.sampleIndices(batchSize, rng)
        return (self.states[index], self.actions[index], self.rewards[index],
                self.nextStates[index], self.dones[index])


class NoiseInjection(object):
    """
    Where observation noise enters: site is one of none, current, next, both.
    ::

        >>> NoiseInjection("both", ContinuousNoise.gaussian(0.1))
        <NoiseInjection both gaussian:0.1 >
        >>> NoiseInjection("elsewhere")
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'unknown injection site''elsewhere'
    """

    def __init__(self, site="none", noise=None):
        if site not in INJECTION_SITES:
            raise ConfigurationError("unknown injection site", site)
        self.site = site
        self.noise = noise

    def __repr__(self):
        if self.noise is None:
            return "<%s %s >" % (self.__class__.__name__, self.site)
        return "<%s %s %s:%g >" % (self.__class__.__name__, self.site, self.noise.variant, self.noise.strength)

    @property
    def active(self):
        return self.site != "none" and self.noise is not None and not self.noise.isNull()

    def perturb(self, state, agent, rng):
        """ A perturbed copy of state; PGD attacks the agent's current online head. """
        if not self.active:
            return np.array(state, dtype=float)
        return self.noise.perturb(state, rng, logitsFn=agent.logits, jacobianFn=agent.logitsJacobian,
                                  featureScale=agent.observationScale)


class QNetwork(object):
    """
    Feature map plus final rows theta. Least-squares networks have one row
    per action; histogram networks have k rows per action, row a * k + i
    scoring bin i of action a.
    """

    def __init__(self, featureMap, theta, nActions, k=None, support=None, bound=None):
        self.featureMap = featureMap
        self.theta = np.array(theta, dtype=float)
        self.nActions = nActions
        self.k = k
        self.support = support
        self.bound = bound
        rows = nActions * (k if self.histogram else 1)
        if self.theta.shape != (rows, featureMap.outputSize):
            raise ConfigurationError("final weights do not match the head", self.theta.shape)
        if self.histogram:
            low, high = support
            delta = (high - low) / k
            self.centers = low + delta * (np.arange(k) + 0.5)
        if bound is not None:
            self.theta = projectRowNorms(self.theta, bound)

    def __repr__(self):
        kind = "histogram" if self.histogram else "least_squares"
        return "<%s %s actions:%d features:%d >" % (
            self.__class__.__name__, kind, self.nActions, self.featureMap.outputSize)

    @property
    def histogram(self):
        return self.k is not None

    @classmethod
    def build(cls, config, stateSize, nActions, observationScale, support, rng):
        if config.headMode == "linear":
            featureMap = NonlinearFeatureMap([], inputScale=observationScale, appendBias=True,
                                             inputSize=stateSize)
        else:
            featureMap = NonlinearFeatureMap.random(stateSize, config.width, rng, depth=2,
                                                    inputScale=observationScale, appendBias=True)
        k = config.k if config.lossKind == "histogram" else None
        rows = nActions * (k or 1)
        theta = rng.normal(0.0, config.initScale, size=(rows, featureMap.outputSize))
        return cls(featureMap, theta, nActions, k, support if k else None, config.normBound)

    def copy(self):
        return QNetwork(self.featureMap.copy(), self.theta.copy(), self.nActions, self.k, self.support, self.bound)

    def distribution(self, states):
        """ Bin probabilities of shape (n, actions, k). """
        scores = self.featureMap.forward(np.atleast_2d(states)) @ self.theta.T
        return softmax(scores.reshape(-1, self.nActions, self.k), axis=2)

    def qValues(self, states):
        """ Q values of shape (n, actions); histogram heads use the bin-center expectation. """
        states = np.atleast_2d(states)
        if self.histogram:
            return self.distribution(states) @ self.centers
        return self.featureMap.forward(states) @ self.theta.T

    def qJacobian(self, state):
        """ dQ(state, a) / dstate for every action, shape (actions, d). """
        state = np.asarray(state, dtype=float)
        jacobian = self.featureMap.jacobian(state)
        if not self.histogram:
            return self.theta @ jacobian
        f = self.distribution(state)[0]
        q = f @ self.centers
        weights = f * (self.centers[None, :] - q[:, None])
        blocks = self.theta.reshape(self.nActions, self.k, -1)
        return np.einsum("ak,akm->am", weights, blocks) @ jacobian

    @property
    def lipschitzBound(self):
        return self.featureMap.lipschitzBound

    def gradientBound(self):
        """ k l L for bounded histogram heads, None otherwise. """
        if not self.histogram or self.bound is None:
            return None
        return self.k * self.bound * self.lipschitzBound

    def applyGradients(self, thetaGrad, layerGrads, learningRate):
        self.theta = self.theta - learningRate * thetaGrad
        if self.bound is not None:
            self.theta = projectRowNorms(self.theta, self.bound)
        for (W, b), (dW, db) in zip(self.featureMap.layers, layerGrads):
            W -= learningRate * dW
            b -= learningRate * db


class Agent(object):
    """
    A least-squares or histogram agent with its own random stream for
    initialization, exploration and replay sampling.
    """

    def __init__(self, config, stateSize, nActions, observationScale, support, rng):
        self.config = config
        self.nActions = nActions
        self.observationScale = None if observationScale is None else np.asarray(observationScale, dtype=float)
        self.support = support
        self.rng = rng
        self.online = QNetwork.build(config, stateSize, nActions, self.observationScale, support, rng)
        self.target = self.online.copy()
        self.replay = ReplayBuffer(config.replayCapacity, stateSize)
        self.steps = 0
        self.updates = 0

    def __repr__(self):
        return "<%s %s steps:%d updates:%d >" % (
            self.__class__.__name__, self.config.lossKind, self.steps, self.updates)

    @classmethod
    def forEnv(cls, config, env, rng):
        """ An agent sized for env, with the histogram support spanning its returns. """
        low, high = env.rewardRange
        scale = 1.0 / (1.0 - config.gamma)
        support = (min(low, 0.0) * scale, max(high, 0.0) * scale)
        return cls(config, env.stateSize, env.nActions, env.observationScale, support, rng)

    def epsilonAt(self, step):
        """ Linear decay from epsilonStart to epsilonEnd over the exploration fraction. """
        c = self.config
        horizon = max(1.0, c.explorationFraction * c.totalSteps)
        fraction = min(1.0, step / horizon)
        return c.epsilonStart + fraction * (c.epsilonEnd - c.epsilonStart)

    def logits(self, state):
        return self.online.qValues(state)[0] / self.config.temperature

    def logitsJacobian(self, state):
        return self.online.qJacobian(state) / self.config.temperature

    def act(self, observedState, epsilon, rng=None):
        """
        Epsilon-greedy action; greedy ties go to the lowest action index.
        ::

            >>> import numpy as np
            >>> agent = Agent(AgentConfig(headMode="linear"), 2, 2, None, None, np.random.default_rng(0))
            >>> agent.online.theta = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.5]])
            >>> {agent.act(np.array([0.3, -0.2]), 0.0) for i in range(10)}
            {0}
        """
        rng = self.rng if rng is None else rng
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(self.nActions))
        return int(np.argmax(self.online.qValues(observedState)[0]))

    def syncTarget(self):
        self.target = self.online.copy()

    def remember(self, transition):
        self.replay.add(transition)
        self.steps += 1

    def ready(self):
        return len(self.replay) >= max(self.config.learningStarts, 1)

    def learn(self):
        """ One update from a replay sample once learning has started; returns diagnostics or None. """
        if not self.ready():
            return None
        batch = self.replay.sample(self.config.batchSize, self.rng)
        return self.update(batch)

    def update(self, batch):
        if self.config.lossKind == "histogram":
            return self.histdqnUpdate(batch)
        return self.dqnUpdate(batch)

    def _finishUpdate(self, loss, thetaGrad, layerGrads, stateGrads, n):
        if not np.isfinite(loss):
            raise NumericError("training loss is not finite", loss)
        bound = self.online.gradientBound()
        norms = np.linalg.norm(stateGrads, axis=1)
        self.online.applyGradients(thetaGrad, [(dW / n, db / n) for dW, db in layerGrads],
                                   self.config.learningRate)
        self.updates += 1
        if self.updates % self.config.syncPeriod == 0:
            self.syncTarget()
        return dict(loss=float(loss), gradNormMean=float(norms.mean()), gradNormMax=float(norms.max()),
                    bound=bound)

    def dqnGradients(self, batch):
        """
        Loss and gradients of 1/2 mean (U - Q(s, a))^2 with
        U = r + gamma max_a' Q_target(s', a'), no bootstrap on done.
        Returns (loss, thetaGrad, layerGrads summed over the batch, per-sample state gradients).
        """
        states, actions, rewards, nextStates, dones = batch
        n = len(actions)
        rows = np.arange(n)
        phi, activations = self.online.featureMap.forward(states, keep=True)
        q = phi @ self.online.theta.T
        targets = rewards + self.config.gamma * (1.0 - dones) * self.target.qValues(nextStates).max(axis=1)
        residual = targets - q[rows, actions]
        loss = 0.5 * np.mean(residual ** 2)
        upstream = np.zeros_like(q)
        upstream[rows, actions] = -residual
        layerGrads, stateGrads = self.online.featureMap.backward(activations, upstream @ self.online.theta)
        return loss, upstream.T @ phi / n, layerGrads, stateGrads

    def dqnUpdate(self, batch):
        """ One SGD step of the least-squares agent. """
        loss, thetaGrad, layerGrads, stateGrads = self.dqnGradients(batch)
        return self._finishUpdate(loss, thetaGrad, layerGrads, stateGrads, len(batch[1]))

    def targetHistograms(self, rewards, nextStates, dones):
        """
        Projected targets r + gamma Z_target(s', a*) with a* greedy by
        expectation; a done transition collapses to a point mass at r.
        """
        net = self.target
        nextDistribution = net.distribution(nextStates)
        greedy = np.argmax(nextDistribution @ net.centers, axis=1)
        probs = nextDistribution[np.arange(len(rewards)), greedy]
        atoms = rewards[:, None] + self.config.gamma * (1.0 - dones)[:, None] * net.centers[None, :]
        return categoricalProjection(atoms, probs, self.support, net.k)

    def histdqnGradients(self, batch):
        """ Loss and gradients of the mean cross-entropy against the projected targets. """
        states, actions, rewards, nextStates, dones = batch
        n = len(actions)
        rows = np.arange(n)
        net = self.online
        p = self.targetHistograms(rewards, nextStates, dones)
        phi, activations = net.featureMap.forward(states, keep=True)
        scores = (phi @ net.theta.T).reshape(n, net.nActions, net.k)
        logProbs = log_softmax(scores[rows, actions], axis=1)
        loss = float(np.mean(-np.sum(p * logProbs, axis=1)))
        upstream = np.zeros_like(scores)
        upstream[rows, actions] = np.exp(logProbs) - p
        upstream = upstream.reshape(n, -1)
        layerGrads, stateGrads = net.featureMap.backward(activations, upstream @ net.theta)
        return loss, upstream.T @ phi / n, layerGrads, stateGrads

    def histdqnUpdate(self, batch):
        """ One SGD step of the histogram agent. """
        loss, thetaGrad, layerGrads, stateGrads = self.histdqnGradients(batch)
        return self._finishUpdate(loss, thetaGrad, layerGrads, stateGrads, len(batch[1]))


def runEpisode(agent, env, injection, rng, noiseRng=None, learn=False, epsilon=None, updates=None):
    """
    Play one episode. rng resets the environment, noiseRng (default rng)
    draws observation noise. The acted-on and stored observations follow
    injection.site:

    *   current:    act on a fresh perturbation of the state, store the clean next state
    *   next:       act on the clean state, store a perturbed next state
    *   both:       perturb every state once; the perturbed next state is
                    also the observation acted on at the following step

    With learn set, transitions go to the replay buffer and an update runs
    after every step once learning has started; their diagnostics are
    appended to updates. Returns (undiscounted return, transitions).
    """
    noiseRng = rng if noiseRng is None else noiseRng
    state = env.reset(rng)
    site = injection.site
    observed = injection.perturb(state, agent, noiseRng) if site == "both" else state
    total = 0.0
    transitions = []
    while True:
        if site == "current":
            acted = injection.perturb(state, agent, noiseRng)
        elif site == "both":
            acted = observed
        else:
            acted = state
        if epsilon is None:
            explore = agent.epsilonAt(agent.steps) if learn else 0.0
        else:
            explore = epsilon
        action = agent.act(acted, explore)
        nextState, reward, done = env.step(action)
        total += reward
        if site in ("next", "both"):
            storedNext = injection.perturb(nextState, agent, noiseRng)
        else:
            storedNext = nextState
        transition = Transition(acted, action, reward, storedNext, done)
        transitions.append(transition)
        if learn:
            agent.remember(transition)
            diagnostics = agent.learn()
            if diagnostics is not None and updates is not None:
                updates.append(diagnostics)
        observed = storedNext
        state = nextState
        if done:
            return total, transitions


class TrainingResult(object):
    """ Per-episode returns and state-gradient norms of one training run. """

    def __init__(self):
        self.returns = []
        self.gradNormMeans = []
        self.gradNormMax = 0.0
        self.bound = None
        self.boundViolations = 0
        self.diverged = False
        self.steps = 0
        self.updates = 0

    def __repr__(self):
        return "<%s episodes:%d steps:%d diverged:%s >" % (
            self.__class__.__name__, len(self.returns), self.steps, self.diverged)

    def finalPerformance(self, fraction=0.1):
        """ Mean return over the last fraction of episodes. """
        if not self.returns:
            return float("nan")
        count = max(1, int(round(len(self.returns) * fraction)))
        return float(np.mean(self.returns[-count:]))


def trainAgent(config, env, injection, seedSequence, verbose=False, logger=None):
    """
    Train a fresh agent for config.totalSteps environment steps. The seed
    sequence is split into environment, agent and noise streams. A
    non-finite loss ends the run and marks it diverged.
    """
    envSeed, agentSeed, noiseSeed = seedSequence.spawn(3)
    envRng = np.random.default_rng(envSeed)
    noiseRng = np.random.default_rng(noiseSeed)
    agent = Agent.forEnv(config, env, np.random.default_rng(agentSeed))
    result = TrainingResult()
    while agent.steps < config.totalSteps:
        updates = []
        try:
            episodeReturn, transitions = runEpisode(agent, env, injection, envRng, noiseRng,
                                                    learn=True, updates=updates)
        except NumericError as error:
            result.diverged = True
            if verbose and logger:
                logger.info("run diverged after %d steps: %s", agent.steps, error)
            break
        result.returns.append(episodeReturn)
        norms = [u["gradNormMean"] for u in updates]
        result.gradNormMeans.append(float(np.mean(norms)) if norms else 0.0)
        for u in updates:
            result.gradNormMax = max(result.gradNormMax, u["gradNormMax"])
            if u["bound"] is not None:
                result.bound = u["bound"] if result.bound is None else max(result.bound, u["bound"])
                if u["gradNormMax"] > u["bound"] * (1.0 + 1e-9):
                    result.boundViolations += 1
    result.steps = agent.steps
    result.updates = agent.updates
    return result
