# -*- coding: utf-8 -*-

"""
    Test beds: tabular MDP generators and the two classic-control tasks.

    The control dynamics are pure functions of (state, action). Observation
    noise is never applied here; the agent layer perturbs what it sees.
"""

import math

import numpy as np

from snmdpLab.objects.error import ConfigurationError
from snmdpLab.objects.mdp import TabularMDP

__all__ = [
    "cartpoleStep",
    "mountaincarStep",
    "CartPole",
    "MountainCar",
    "ENVIRONMENTS",
    "makeEnv",
    "TabularEnvSpec",
    "makeTabular",
    "EPISODE_CAP",
]

EPISODE_CAP = 200

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE = 10.0
TAU = 0.02
ANGLE_LIMIT = 12 * 2 * math.pi / 360
POSITION_LIMIT = 2.4


def cartpoleStep(state, action):
    """
    One Euler step of the pole on a cart. Action 1 pushes right, 0 left.
    Returns (nextState, reward, terminal).
    ::

        >>> s, r, done = cartpoleStep([0.0, 0.0, 0.0, 0.0], 1)
        >>> [round(float(v), 10) for v in s], r, done
        ([0.0, 0.1951219512, 0.0, -0.2926829268], 1.0, False)
        >>> cartpoleStep([2.4, 1.0, 0.0, 0.0], 1)[2]
        True
    """
    x, xDot, theta, thetaDot = [float(v) for v in state]
    force = FORCE if action == 1 else -FORCE
    cosTheta = math.cos(theta)
    sinTheta = math.sin(theta)
    temp = (force + POLE_MASS_LENGTH * thetaDot ** 2 * sinTheta) / TOTAL_MASS
    thetaAcc = (GRAVITY * sinTheta - cosTheta * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cosTheta ** 2 / TOTAL_MASS))
    xAcc = temp - POLE_MASS_LENGTH * thetaAcc * cosTheta / TOTAL_MASS
    x = x + TAU * xDot
    xDot = xDot + TAU * xAcc
    theta = theta + TAU * thetaDot
    thetaDot = thetaDot + TAU * thetaAcc
    terminal = x < -POSITION_LIMIT or x > POSITION_LIMIT or theta < -ANGLE_LIMIT or theta > ANGLE_LIMIT
    return np.array([x, xDot, theta, thetaDot]), 1.0, bool(terminal)


MIN_POSITION = -1.2
MAX_POSITION = 0.6
MAX_SPEED = 0.07
GOAL_POSITION = 0.5
ENGINE_FORCE = 0.001
HILL_GRAVITY = 0.0025


def mountaincarStep(state, action):
    """
    One step of the under-powered car. Actions 0, 1, 2 push left, coast and
    push right. Returns (nextState, reward, terminal).
    ::

        >>> s, r, done = mountaincarStep([-1.2, -0.01], 0)
        >>> s.tolist(), r, done
        ([-1.2, 0.0], -1.0, False)
    """
    position, velocity = [float(v) for v in state]
    velocity += (action - 1) * ENGINE_FORCE - HILL_GRAVITY * math.cos(3 * position)
    velocity = min(max(velocity, -MAX_SPEED), MAX_SPEED)
    position += velocity
    position = min(max(position, MIN_POSITION), MAX_POSITION)
    if position == MIN_POSITION and velocity < 0:
        velocity = 0.0
    return np.array([position, velocity]), -1.0, bool(position >= GOAL_POSITION)


class _ControlEnv(object):
    """ Episode bookkeeping around a pure step function. """

    name = None
    nActions = None
    stateSize = None
    rewardRange = None
    observationScale = None

    def __init__(self, cap=EPISODE_CAP):
        self.cap = cap
        self.state = None
        self.steps = 0
        self.truncated = False

    def __repr__(self):
        return "<%s steps:%d >" % (self.__class__.__name__, self.steps)

    def reset(self, rng):
        self.state = self._initialState(rng)
        self.steps = 0
        self.truncated = False
        return self.state.copy()

    def step(self, action):
        """ Advance the true state. done covers both termination and the step cap. """
        if self.state is None:
            raise ConfigurationError("reset the environment before stepping")
        self.state, reward, terminal = self._dynamics(self.state, action)
        self.steps += 1
        self.truncated = not terminal and self.steps >= self.cap
        return self.state.copy(), reward, terminal or self.truncated


class CartPole(_ControlEnv):

    name = "cartpole"
    nActions = 2
    stateSize = 4
    rewardRange = (1.0, 1.0)
    observationScale = np.array([POSITION_LIMIT, 3.0, ANGLE_LIMIT, 3.5])

    def _initialState(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def _dynamics(self, state, action):
        return cartpoleStep(state, action)


class MountainCar(_ControlEnv):

    name = "mountaincar"
    nActions = 3
    stateSize = 2
    rewardRange = (-1.0, -1.0)
    observationScale = np.array([1.2, MAX_SPEED])

    def _initialState(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def _dynamics(self, state, action):
        return mountaincarStep(state, action)


ENVIRONMENTS = {CartPole.name: CartPole, MountainCar.name: MountainCar}


def makeEnv(name, cap=EPISODE_CAP):
    try:
        return ENVIRONMENTS[name](cap)
    except KeyError:
        raise ConfigurationError("unknown environment", name)


class TabularEnvSpec(object):
    """
    Recipe for a tabular test bed: kind "chain" (n states, left / right moves
    that succeed with probability 0.9, reward 1 on arriving at the right end)
    or kind "random" (flat Dirichlet transition rows and uniform rewards).
    ::

        >>> TabularEnvSpec("chain", 5, gamma=0.9)
        <TabularEnvSpec chain states:5 actions:2 gamma:0.9 >
        >>> TabularEnvSpec("grid", 5)
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'unknown tabular kind''grid'
    """

    def __init__(self, kind, nStates, nActions=2, gamma=0.9, rewardRange=(0.0, 1.0), seed=None, success=0.9):
        if kind not in ("chain", "random"):
            raise ConfigurationError("unknown tabular kind", kind)
        if nStates < 1 or nActions < 1:
            raise ConfigurationError("state and action counts must be positive", (nStates, nActions))
        if kind == "chain" and nActions != 2:
            raise ConfigurationError("chains have exactly two actions", nActions)
        if kind == "random" and seed is None:
            raise ConfigurationError("random tabular specs need a seed")
        self.kind = kind
        self.nStates = nStates
        self.nActions = nActions
        self.gamma = gamma
        self.rewardRange = tuple(rewardRange)
        self.seed = seed
        self.success = success

    def __repr__(self):
        return "<%s %s states:%d actions:%d gamma:%g >" % (
            self.__class__.__name__, self.kind, self.nStates, self.nActions, self.gamma)


def makeTabular(spec, rng=None):
    """
    Build the TabularMDP a spec describes. A random spec draws from rng
    when given, else from its own seed.
    ::

        >>> m = makeTabular(TabularEnvSpec("chain", 2))
        >>> m.transition.sum(axis=2).tolist()
        [[1.0, 1.0], [1.0, 1.0]]
    """
    n = spec.nStates
    if spec.kind == "chain":
        transition = np.zeros((n, 2, n))
        reward = np.zeros((n, 2, n))
        for s in range(n):
            for action, target in ((0, max(s - 1, 0)), (1, min(s + 1, n - 1))):
                transition[s, action, target] += spec.success
                transition[s, action, s] += 1.0 - spec.success
        reward[:, :, n - 1] = 1.0
        return TabularMDP(transition, reward, spec.gamma)
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    transition = rng.dirichlet(np.ones(n), size=(n, spec.nActions))
    transition /= transition.sum(axis=2, keepdims=True)
    low, high = spec.rewardRange
    reward = rng.uniform(low, high, size=(n, spec.nActions, n))
    return TabularMDP(transition, reward, spec.gamma)
