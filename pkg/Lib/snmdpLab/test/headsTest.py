"""

Tests for the value heads: least-squares gradients and their unbounded
witnesses, the histogram head with its bounded state gradient, row norm
projection and the categorical target projection.

"""

import doctest
import math

import numpy as np

from snmdpLab.objects.heads import (LinearValueHead, NonlinearFeatureMap, HistogramHead, TargetHistogram,
        veGradientWrtState, veGradientWrtParams, veGradientWrtStateNonlinear, veUnboundednessWitness,
        veNonlinearWitness, tdTargetWitness, histogramForward, histogramLoss, histogramLossFromScores,
        histogramGradWrtState, histogramGradWrtParams, projectRowNorms, categoricalProjection, entropy,
        finiteDifferenceGradient)
from snmdpLab.lab.runners import relativeError


def randomHistogramHead(rng, k=5, d=4, l=1.0, nonlinear=False):
    featureMap = NonlinearFeatureMap.random(d, 8, rng) if nonlinear else None
    width = featureMap.outputSize if nonlinear else d
    return HistogramHead(rng.normal(size=(k, width)), (-10.0, 10.0), featureMap, bound=l)


def testProjectRowNorms():
    """
    >>> inside = np.array([[0.3, 0.4], [0.0, -1.0]])
    >>> bool(np.array_equal(projectRowNorms(inside, 1.0), inside))
    True
    >>> projectRowNorms(np.array([[0.0, 4.0]]), 2.0).tolist()
    [[0.0, 2.0]]
    >>> rng = np.random.default_rng(1)
    >>> M = rng.normal(size=(20, 6)) * 3
    >>> P = projectRowNorms(M, 0.5)
    >>> bool(np.all(np.linalg.norm(P, axis=1) <= 0.5 + 1e-12))
    True
    >>> cosines = np.sum(P * M, axis=1) / (np.linalg.norm(P, axis=1) * np.linalg.norm(M, axis=1))
    >>> bool(np.allclose(cosines, 1.0, rtol=0, atol=1e-12))
    True

    Projecting a second time changes nothing.

    >>> bool(np.array_equal(projectRowNorms(P, 0.5), P))
    True
    >>> projectRowNorms(M, 0.0)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'norm bound must be positive'0.0
    """


def testLeastSquaresGradient():
    """
    >>> head = LinearValueHead([0.5, -1.0, 2.0])
    >>> x = np.array([1.0, 2.0, -0.5])
    >>> bool(np.all(veGradientWrtState(head, x, head.value(x)) == 0))
    True

    >>> rng = np.random.default_rng(2)
    >>> head = LinearValueHead(rng.normal(size=4))
    >>> x, U = rng.normal(size=4), 1.5
    >>> loss = lambda v: 0.5 * (U - head.value(v)) ** 2
    >>> relativeError(veGradientWrtState(head, x, U), finiteDifferenceGradient(loss, x)) <= 1e-7
    True
    >>> paramLoss = lambda w: 0.5 * (U - float(w @ x)) ** 2
    >>> relativeError(veGradientWrtParams(head, x, U), finiteDifferenceGradient(paramLoss, head.w)) <= 1e-7
    True
    """


def testNonlinearLeastSquaresGradient():
    """
    Through the identity map the gradient is the linear one.

    >>> rng = np.random.default_rng(3)
    >>> theta, x = rng.normal(size=3), rng.normal(size=3)
    >>> linear = veGradientWrtState(LinearValueHead(theta), x, 2.0)
    >>> bool(np.allclose(veGradientWrtStateNonlinear(NonlinearFeatureMap.identity(3), theta, x, 2.0), linear,
    ...                  rtol=0, atol=1e-14))
    True

    Through a random two-layer map it matches central differences.

    >>> featureMap = NonlinearFeatureMap.random(3, 8, rng)
    >>> theta = rng.normal(size=featureMap.outputSize)
    >>> loss = lambda v: 0.5 * (2.0 - float(featureMap.forward(v) @ theta)) ** 2
    >>> relativeError(veGradientWrtStateNonlinear(featureMap, theta, x, 2.0),
    ...               finiteDifferenceGradient(loss, x)) <= 1e-6
    True

    The norm never exceeds |residual| |theta| L.

    >>> violations = 0
    >>> for draw in range(1000):
    ...     x = rng.normal(size=3) * 10 ** rng.uniform(0, 3)
    ...     U = float(rng.normal() * 10)
    ...     g = veGradientWrtStateNonlinear(featureMap, theta, x, U)
    ...     residual = U - float(featureMap.forward(x) @ theta)
    ...     violations += np.linalg.norm(g) > abs(residual) * np.linalg.norm(theta) * featureMap.lipschitzBound
    >>> int(violations)
    0
    """


def testUnboundedWitnesses():
    """
    >>> norms = []
    >>> for M in (10.0, 1e3, 1e6):
    ...     head, x, U = veUnboundednessWitness(0.5, M)
    ...     norms.append(float(np.linalg.norm(veGradientWrtState(head, x, U))) > M)
    >>> norms
    [True, True, True]

    >>> head, xt, xnext, reward = tdTargetWitness(1.0, 100.0)
    >>> tdError = reward + 0.9 * head.value(xnext) - head.value(xt)
    >>> bool(abs(tdError) * np.linalg.norm(head.w) > 100.0)
    True
    >>> xnext.tolist()
    [0.0, 0.0]

    >>> rng = np.random.default_rng(4)
    >>> featureMap = NonlinearFeatureMap.random(3, 8, rng)
    >>> theta = projectRowNorms(rng.normal(size=(1, featureMap.outputSize)), 1.0)[0]
    >>> x = rng.normal(size=3)
    >>> U = veNonlinearWitness(featureMap, theta, x, 50.0)
    >>> abs(float(np.linalg.norm(veGradientWrtStateNonlinear(featureMap, theta, x, U))) - 100.0) <= 1e-8
    True
    """


def testHistogramForward():
    """
    >>> head = HistogramHead(np.tile([0.1, -0.2, 0.3], (4, 1)), (0.0, 4.0))
    >>> histogramForward(head, np.array([1.0, 5.0, -2.0])).tolist()
    [0.25, 0.25, 0.25, 0.25]

    >>> head = HistogramHead([[0.0, 0.0], [math.log(3.0), 0.0]], (0.0, 2.0), bound=None)
    >>> bool(np.allclose(histogramForward(head, np.array([1.0, 0.0])), [0.25, 0.75], rtol=0, atol=1e-15))
    True

    >>> rng = np.random.default_rng(5)
    >>> head = randomHistogramHead(rng, k=51, nonlinear=True)
    >>> f = histogramForward(head, rng.normal(size=4))
    >>> abs(float(f.sum()) - 1.0) <= 1e-12, bool(np.all(f > 0))
    (True, True)
    >>> bool(np.all(np.linalg.norm(head.theta, axis=1) <= 1.0 + 1e-12))
    True
    >>> centers = head.centers
    >>> bool(abs(head.expectation(np.zeros(4)) - math.fsum(histogramForward(head, np.zeros(4)) * centers)) <= 1e-12)
    True

    Adding the same constant to every bin score leaves the histogram alone.
    The last input coordinate is held at 1, so shifting its column by c
    shifts every score by c.

    >>> theta = rng.normal(size=(9, 4))
    >>> shifted = theta.copy()
    >>> shifted[:, -1] += 3.7
    >>> x = np.append(rng.normal(size=3), 1.0)
    >>> plain = HistogramHead(theta, (-5.0, 5.0), bound=None)
    >>> moved = HistogramHead(shifted, (-5.0, 5.0), bound=None)
    >>> bool(np.allclose(moved.scores(x) - plain.scores(x), 3.7, rtol=0, atol=1e-12))
    True
    >>> bool(np.allclose(histogramForward(moved, x), histogramForward(plain, x), rtol=0, atol=1e-12))
    True
    """


def testHistogramLoss():
    """
    >>> p = np.array([0.2, 0.3, 0.5])
    >>> abs(histogramLoss(p, p) - entropy(p)) <= 1e-15
    True
    >>> abs(histogramLoss([0.0, 1.0, 0.0], p) + math.log(0.3)) <= 1e-15
    True

    >>> rng = np.random.default_rng(6)
    >>> p, f = rng.dirichlet(np.ones(7)), rng.dirichlet(np.ones(7))
    >>> oracle = -math.fsum(float(a) * math.log(float(b)) for a, b in zip(p, f))
    >>> abs(histogramLoss(p, f) - oracle) <= 1e-12
    True
    >>> scores = rng.normal(size=7)
    >>> f = np.exp(scores) / np.exp(scores).sum()
    >>> abs(histogramLossFromScores(TargetHistogram(p), scores) - histogramLoss(p, f)) <= 1e-12
    True
    """


def testHistogramStateGradient():
    """
    A head that already predicts its target has no state gradient.

    >>> rng = np.random.default_rng(7)
    >>> head = randomHistogramHead(rng)
    >>> x = rng.normal(size=4)
    >>> bool(np.all(histogramGradWrtState(head, x, histogramForward(head, x)) == 0))
    True

    Analytic gradients match central differences, linear and nonlinear.

    >>> p = rng.dirichlet(np.ones(5))
    >>> loss = lambda v: histogramLossFromScores(p, head.scores(v))
    >>> relativeError(histogramGradWrtState(head, x, p), finiteDifferenceGradient(loss, x)) <= 1e-7
    True
    >>> deep = randomHistogramHead(rng, nonlinear=True)
    >>> deepLoss = lambda v: histogramLossFromScores(p, deep.scores(v))
    >>> relativeError(histogramGradWrtState(deep, x, p), finiteDifferenceGradient(deepLoss, x)) <= 1e-6
    True

    A batch gives the per-row gradients.

    >>> X = rng.normal(size=(3, 4))
    >>> P = rng.dirichlet(np.ones(5), size=3)
    >>> rows = np.array([histogramGradWrtState(deep, X[i], P[i]) for i in range(3)])
    >>> bool(np.allclose(histogramGradWrtState(deep, X, P), rows, rtol=0, atol=1e-14))
    True
    """


def testHistogramGradientBound():
    """
    The state gradient stays within k l L however large the input.

    >>> rng = np.random.default_rng(8)
    >>> worst = []
    >>> for nonlinear in (False, True):
    ...     for k, l in ((2, 0.5), (20, 1.0), (51, 5.0)):
    ...         head = randomHistogramHead(rng, k=k, l=l, nonlinear=nonlinear)
    ...         ratio = 0.0
    ...         for draw in range(200):
    ...             direction = rng.normal(size=4)
    ...             x = direction / np.linalg.norm(direction) * 10 ** rng.uniform(0, 6)
    ...             p = np.eye(k)[rng.integers(k)]
    ...             ratio = max(ratio, float(np.linalg.norm(histogramGradWrtState(head, x, p))) / head.gradientBound())
    ...         worst.append(ratio)
    >>> max(worst) <= 1.0
    True

    The least-squares gradient at the same scales is unbounded.

    >>> head = LinearValueHead([1.0, 0.0, 0.0, 0.0], bound=1.0)
    >>> float(np.linalg.norm(veGradientWrtState(head, np.array([1e6, 0.0, 0.0, 0.0]), 0.0)))
    1000000.0
    """


def testHistogramParameterGradient():
    """
    >>> rng = np.random.default_rng(9)
    >>> x, p = rng.normal(size=4), rng.dirichlet(np.ones(5))
    >>> head = randomHistogramHead(rng)
    >>> dTheta, layers = histogramGradWrtParams(head, x, p)
    >>> layers
    []
    >>> thetaLoss = lambda theta: histogramLossFromScores(p, theta @ x)
    >>> relativeError(dTheta, finiteDifferenceGradient(thetaLoss, head.theta)) <= 1e-7
    True

    >>> deep = randomHistogramHead(rng, nonlinear=True)
    >>> dTheta, layers = histogramGradWrtParams(deep, x, p)
    >>> W, b = deep.featureMap.layers[0]
    >>> def layerLoss(weights):
    ...     original = deep.featureMap.layers[0]
    ...     deep.featureMap.layers[0] = (weights, b)
    ...     value = histogramLossFromScores(p, deep.scores(x))
    ...     deep.featureMap.layers[0] = original
    ...     return value
    >>> relativeError(layers[0][0], finiteDifferenceGradient(layerLoss, W)) <= 1e-6
    True
    """


def testCategoricalProjection():
    """
    >>> categoricalProjection([[2.5, 3.5]], [[0.5, 0.5]], (0.0, 5.0), 5).tolist()
    [[0.0, 0.0, 0.5, 0.5, 0.0]]

    Boundary atoms go to the lower bin, outside atoms to the end bins.

    >>> categoricalProjection([[1.0, -7.0, 9.0]], [[0.5, 0.25, 0.25]], (0.0, 5.0), 5).tolist()
    [[0.75, 0.0, 0.0, 0.0, 0.25]]

    >>> rng = np.random.default_rng(10)
    >>> atoms = rng.uniform(-12, 12, size=(4, 9))
    >>> probs = rng.dirichlet(np.ones(9), size=4)
    >>> result = categoricalProjection(atoms, probs, (-10.0, 10.0), 20)
    >>> oracle = np.zeros((4, 20))
    >>> for n in range(4):
    ...     for j in range(9):
    ...         upper = [-10.0 + (i + 1) * 1.0 for i in range(20)]
    ...         index = next((i for i in range(20) if atoms[n, j] <= upper[i]), 19)
    ...         oracle[n, index] += probs[n, j]
    >>> bool(np.allclose(result, oracle, rtol=0, atol=1e-15))
    True
    >>> bool(np.allclose(result.sum(axis=1), 1.0, rtol=0, atol=1e-12))
    True
    """


if __name__ == "__main__":
    doctest.testmod()
