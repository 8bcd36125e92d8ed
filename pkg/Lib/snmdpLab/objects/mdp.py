# -*- coding: utf-8 -*-

import numpy as np

from snmdpLab.objects.error import ConfigurationError

__all__ = ["TabularMDP", "Policy", "mergedPolicy", "PROBABILITY_TOLERANCE"]

PROBABILITY_TOLERANCE = 1e-12


def _checkStochasticRows(name, rows, axis=-1):
    """ Raise a ConfigurationError if rows are not probability vectors along axis. """
    rows = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise ConfigurationError("%s has non-finite entries" % name)
    if np.any(rows < 0) or np.any(rows > 1):
        raise ConfigurationError("%s has entries outside [0, 1]" % name)
    sums = rows.sum(axis=axis)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > PROBABILITY_TOLERANCE:
        raise ConfigurationError("%s rows do not sum to 1" % name, worst)
    return rows


class TabularMDP(object):
    """
    A finite MDP with transition[s, a, s'], reward[s, a, s'] and a discount.

    The arrays are copied and frozen on construction.
    ::

        >>> import numpy as np
        >>> transition = np.zeros((2, 1, 2))
        >>> transition[0, 0, 1] = transition[1, 0, 0] = 1.0
        >>> m = TabularMDP(transition, np.ones((2, 1, 2)), 0.5)
        >>> m
        <TabularMDP states:2 actions:1 gamma:0.500 >
        >>> m.rewardRange()
        (1.0, 1.0)
        >>> TabularMDP(transition * 0.5, np.ones((2, 1, 2)), 0.5)
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'transition rows do not sum to 1'0.5
    """

    def __init__(self, transition, reward, gamma):
        transition = np.array(transition, dtype=float)
        reward = np.array(reward, dtype=float)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ConfigurationError("transition must have shape (S, A, S)", transition.shape)
        if reward.shape != transition.shape:
            raise ConfigurationError("reward must match the transition shape", reward.shape)
        if not np.all(np.isfinite(reward)):
            raise ConfigurationError("reward has non-finite entries")
        if not (0.0 < gamma < 1.0):
            raise ConfigurationError("gamma must lie strictly inside (0, 1)", gamma)
        _checkStochasticRows("transition", transition)
        transition.setflags(write=False)
        reward.setflags(write=False)
        self.transition = transition
        self.reward = reward
        self.gamma = float(gamma)

    def __repr__(self):
        return "<%s states:%d actions:%d gamma:%.3f >" % (
            self.__class__.__name__, self.nStates, self.nActions, self.gamma)

    @property
    def nStates(self):
        return self.transition.shape[0]

    @property
    def nActions(self):
        return self.transition.shape[1]

    def rewardRange(self):
        """ Return (R_min, R_max) over all reachable and unreachable triples. """
        return float(self.reward.min()), float(self.reward.max())

    def valueSupport(self):
        """ Return the return support [min(R_min, 0), max(R_max, 0)] / (1 - gamma). """
        low, high = self.rewardRange()
        scale = 1.0 / (1.0 - self.gamma)
        return min(low, 0.0) * scale, max(high, 0.0) * scale

    def expectedReward(self):
        """ Return r[s, a] = sum_s' p(s'|s,a) R(s,a,s'). """
        return np.einsum("ijk,ijk->ij", self.transition, self.reward)

    def stateTransition(self, policy):
        """ Return the |S| x |S| matrix p(s'|s) under policy. """
        policy = self._checkPolicy(policy)
        return np.einsum("ij,ijk->ik", policy.probs, self.transition)

    def stateReward(self, policy):
        """ Return the expected one-step reward per state under policy. """
        policy = self._checkPolicy(policy)
        return np.einsum("ij,ij->i", policy.probs, self.expectedReward())

    def asDict(self):
        """
        Plain nested lists, for experiment documents and config hashes.
        ::

            >>> import numpy as np
            >>> m = TabularMDP(np.full((2, 1, 2), 0.5), np.zeros((2, 1, 2)), 0.9)
            >>> d = m.asDict()
            >>> sorted(d), d["transition"][0]
            (['gamma', 'reward', 'transition'], [[0.5, 0.5]])
            >>> np.array_equal(TabularMDP.fromDict(d).transition, m.transition)
            True
        """
        return dict(transition=self.transition.tolist(), reward=self.reward.tolist(), gamma=self.gamma)

    @classmethod
    def fromDict(cls, data):
        return cls(data["transition"], data["reward"], data["gamma"])

    def _checkPolicy(self, policy):
        if policy.probs.shape != (self.nStates, self.nActions):
            raise ConfigurationError("policy shape does not match the MDP", policy.probs.shape)
        return policy


class Policy(object):
    """
    A stochastic policy probs[s, a].
    ::

        >>> p = Policy.uniform(3, 2)
        >>> p
        <Policy states:3 actions:2 >
        >>> float(p.probs[1, 0])
        0.5
        >>> Policy.deterministic([1, 0], 2).probs.tolist()
        [[0.0, 1.0], [1.0, 0.0]]
    """

    def __init__(self, probs):
        probs = np.array(probs, dtype=float)
        if probs.ndim != 2:
            raise ConfigurationError("policy must have shape (S, A)", probs.shape)
        _checkStochasticRows("policy", probs)
        probs.setflags(write=False)
        self.probs = probs

    def __repr__(self):
        return "<%s states:%d actions:%d >" % (self.__class__.__name__, self.nStates, self.nActions)

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    def __hash__(self):
        return hash(self.probs.tobytes())

    @property
    def nStates(self):
        return self.probs.shape[0]

    @property
    def nActions(self):
        return self.probs.shape[1]

    def asDict(self):
        return dict(probs=self.probs.tolist())

    @classmethod
    def fromDict(cls, data):
        return cls(data["probs"])

    @classmethod
    def uniform(cls, nStates, nActions):
        return cls(np.full((nStates, nActions), 1.0 / nActions))

    @classmethod
    def deterministic(cls, actions, nActions):
        """ Make a policy that takes actions[s] in state s. """
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), nActions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def random(cls, nStates, nActions, rng):
        """ Draw every row from a flat Dirichlet. """
        probs = rng.dirichlet(np.ones(nActions), size=nStates)
        # renormalize so the rows pass the 1e-12 check after the draw
        return cls(probs / probs.sum(axis=1, keepdims=True))


def mergedPolicy(mdp, pi, noise):
    """
    Fold the observation noise into the policy:
    result(a|s) = sum_v N(v|s) pi(a|v).
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.noise import TabularNoise
        >>> m = TabularMDP(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)), 0.9)
        >>> pi = Policy.deterministic([0, 1], 2)
        >>> mergedPolicy(m, pi, TabularNoise.identity(2)) == pi
        True
        >>> swap = TabularNoise.deterministic([1, 0], [{0, 1}, {0, 1}])
        >>> mergedPolicy(m, pi, swap).probs.tolist()
        [[0.0, 1.0], [1.0, 0.0]]
    """
    if pi.nStates != mdp.nStates or pi.nActions != mdp.nActions:
        raise ConfigurationError("policy shape does not match the MDP", pi.probs.shape)
    if noise.kernel.shape != (mdp.nStates, mdp.nStates):
        raise ConfigurationError("noise kernel shape does not match the MDP", noise.kernel.shape)
    probs = noise.kernel @ pi.probs
    probs = probs / probs.sum(axis=1, keepdims=True)
    return Policy(probs)
