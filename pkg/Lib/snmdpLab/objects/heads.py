# -*- coding: utf-8 -*-

"""
    Value heads and their losses, with analytic gradients.

    Least-squares heads regress a scalar value, so the state gradient of
    1/2 (U - v(x))^2 scales with the residual and grows without bound in x.
    Histogram heads put a softmax over k bins of a fixed support and train
    with cross-entropy; the state gradient is bounded by k l L where l bounds
    the row norms of the final weights and L is the Lipschitz constant of the
    feature map.
"""

import numpy as np
from scipy.special import log_softmax, softmax

from snmdpLab.objects.error import AnalysisError, ConfigurationError, NumericError

__all__ = [
    "LinearValueHead",
    "NonlinearFeatureMap",
    "HistogramHead",
    "TargetHistogram",
    "veGradientWrtState",
    "veGradientWrtParams",
    "veGradientWrtStateNonlinear",
    "veUnboundednessWitness",
    "veNonlinearWitness",
    "tdTargetWitness",
    "histogramForward",
    "histogramLoss",
    "histogramLossFromScores",
    "histogramGradWrtState",
    "histogramGradWrtParams",
    "projectRowNorms",
    "categoricalProjection",
    "projectTargetDistribution",
    "finiteDifferenceGradient",
    "entropy",
]

# a row is rescaled only when its norm exceeds the bound by more than this factor
ROW_NORM_SLACK = 1e-12
LIPSCHITZ_MARGIN = 1.01


def projectRowNorms(matrix, l):
    """
    Rescale every row whose Euclidean norm exceeds l onto the l-sphere.
    ::

        >>> import numpy as np
        >>> projectRowNorms(np.array([[2.0, 0.0], [0.3, 0.4]]), 1.0).tolist()
        [[1.0, 0.0], [0.3, 0.4]]
    """
    if not l > 0:
        raise ConfigurationError("norm bound must be positive", l)
    matrix = np.asarray(matrix, dtype=float)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    over = norms > l * (1.0 + ROW_NORM_SLACK)
    return np.where(over, matrix * l / np.where(over, norms, 1.0), matrix)


class LinearValueHead(object):
    """
    v(x) = w'x, optionally with |w| <= bound.
    ::

        >>> LinearValueHead([3.0, 4.0], bound=1.0).w.tolist()
        [0.6, 0.8]
    """

    def __init__(self, w, bound=None):
        w = np.array(w, dtype=float)
        if bound is not None:
            w = projectRowNorms(w[None, :], bound)[0]
        self.w = w
        self.bound = bound

    def __repr__(self):
        return "<%s features:%d bound:%s >" % (self.__class__.__name__, self.w.shape[0], self.bound)

    def value(self, x):
        return float(self.w @ np.asarray(x, dtype=float))


def veGradientWrtState(head, x, U):
    """
    Gradient of 1/2 (U - w'x)^2 with respect to x.
    ::

        >>> veGradientWrtState(LinearValueHead([1.0, 0.0, 0.0]), [0.0, 0.0, 0.0], 3.0).tolist()
        [-3.0, -0.0, -0.0]
    """
    return -(U - head.value(x)) * head.w


def veGradientWrtParams(head, x, U):
    """ Gradient of 1/2 (U - w'x)^2 with respect to w. """
    x = np.asarray(x, dtype=float)
    return -(U - head.value(x)) * x


class NonlinearFeatureMap(object):
    """
    A stack of tanh layers phi(x) = tanh(W_n ... tanh(W_1 (x / scale) + b_1) ... + b_n).

    lipschitzBound is the product of the layer spectral norms, times
    max(1 / scale), times a 1% margin; tanh has slope at most 1. With
    appendBias a constant 1 is appended to the output. Inputs are batches
    of shape (n, d) or single vectors.
    ::

        >>> import numpy as np
        >>> m = NonlinearFeatureMap.identity(3)
        >>> m.forward(np.array([1.0, -2.0, 0.5])).tolist()
        [1.0, -2.0, 0.5]
        >>> m.lipschitzBound
        1.0
    """

    def __init__(self, layers, inputScale=None, appendBias=False, inputSize=None):
        self.layers = [(np.array(W, dtype=float), np.array(b, dtype=float)) for W, b in layers]
        for (W, b), following in zip(self.layers, self.layers[1:]):
            if following[0].shape[1] != W.shape[0]:
                raise ConfigurationError("layer shapes do not chain", (W.shape, following[0].shape))
        self.inputScale = None if inputScale is None else np.array(inputScale, dtype=float)
        if self.inputScale is not None and np.any(self.inputScale <= 0):
            raise ConfigurationError("input scale must be positive", self.inputScale)
        self.appendBias = appendBias
        if self.layers:
            inputSize = self.layers[0][0].shape[1]
        elif inputSize is None:
            raise ConfigurationError("a map without layers needs an input size")
        self.inputSize = inputSize

    def __repr__(self):
        return "<%s layers:%d out:%d L:%g >" % (
            self.__class__.__name__, len(self.layers), self.outputSize, self.lipschitzBound)

    @classmethod
    def identity(cls, d):
        return cls([], inputSize=d)

    @classmethod
    def random(cls, inputSize, width, rng, depth=2, inputScale=None, appendBias=True):
        """ Glorot-uniform weights, zero biases. """
        layers = []
        fanIn = inputSize
        for layer in range(depth):
            limit = np.sqrt(6.0 / (fanIn + width))
            layers.append((rng.uniform(-limit, limit, size=(width, fanIn)), np.zeros(width)))
            fanIn = width
        return cls(layers, inputScale, appendBias)

    @property
    def outputSize(self):
        size = self.layers[-1][0].shape[0] if self.layers else self.inputSize
        return size + (1 if self.appendBias else 0)

    @property
    def lipschitzBound(self):
        bound = 1.0
        for W, b in self.layers:
            bound *= np.linalg.svd(W, compute_uv=False)[0]
        if self.inputScale is not None:
            bound *= float(np.max(1.0 / self.inputScale))
        if self.layers:
            bound *= LIPSCHITZ_MARGIN
        return float(bound)

    def copy(self):
        return NonlinearFeatureMap([(W.copy(), b.copy()) for W, b in self.layers],
                                   None if self.inputScale is None else self.inputScale.copy(),
                                   self.appendBias, self.inputSize)

    def forward(self, x, keep=False):
        """ Map x; with keep set, also return the activations for backward. """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if self.inputScale is not None:
            h = h / self.inputScale
        activations = [h]
        for W, b in self.layers:
            h = np.tanh(h @ W.T + b)
            activations.append(h)
        if self.appendBias:
            h = np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)
        out = h[0] if single else h
        if keep:
            return out, activations
        return out

    def backward(self, activations, upstream):
        """
        Backpropagate upstream = dLoss/dphi of shape (n, m). Returns the
        per-layer (dW, db) sums over the batch and dLoss/dx of shape (n, d).
        """
        g = np.atleast_2d(np.asarray(upstream, dtype=float))
        if self.appendBias:
            g = g[:, :-1]
        grads = []
        for (W, b), h, previous in reversed(list(zip(self.layers, activations[1:], activations[:-1]))):
            g = g * (1.0 - h ** 2)
            grads.append((g.T @ previous, g.sum(axis=0)))
            g = g @ W
        if self.inputScale is not None:
            g = g / self.inputScale
        grads.reverse()
        return grads, g

    def jacobian(self, x):
        """ d phi / dx at a single x, shape (m, d). """
        out, activations = self.forward(np.asarray(x, dtype=float)[None, :], keep=True)
        size = out.shape[1]
        rows = []
        for i in range(size):
            upstream = np.zeros((1, size))
            upstream[0, i] = 1.0
            rows.append(self.backward(activations, upstream)[1][0])
        return np.array(rows)

    def vectorJacobian(self, x, vector):
        """ J(x)' vector for a single x, without forming J. """
        out, activations = self.forward(np.asarray(x, dtype=float)[None, :], keep=True)
        return self.backward(activations, np.asarray(vector, dtype=float)[None, :])[1][0]


def veGradientWrtStateNonlinear(featureMap, theta, x, U):
    """
    Gradient of 1/2 (U - phi(x)'theta)^2 with respect to x; its norm is at most
    |U - phi(x)'theta| |theta| L.
    """
    theta = np.asarray(theta, dtype=float)
    residual = U - float(featureMap.forward(x) @ theta)
    return -residual * featureMap.vectorJacobian(x, theta)


def veNonlinearWitness(featureMap, theta, x, M):
    """
    Target U for which the least-squares state gradient through featureMap
    has norm 2M at x. Raises AnalysisError when J(x)'theta vanishes.
    """
    theta = np.asarray(theta, dtype=float)
    slope = np.linalg.norm(featureMap.vectorJacobian(x, theta))
    if slope <= 1e-12:
        raise AnalysisError("feature map is flat along theta at x")
    return float(featureMap.forward(x) @ theta) + 2.0 * M / slope


def veUnboundednessWitness(l, M, d=2):
    """
    A bounded least-squares head, an input and a zero target whose state
    gradient norm exceeds M: w = l e_1 and x = t e_1 with t = M / l^2 + 1.
    ::

        >>> head, x, U = veUnboundednessWitness(1.0, 10.0)
        >>> x.tolist(), U
        ([11.0, 0.0], 0.0)
        >>> float(np.linalg.norm(veGradientWrtState(head, x, U)))
        11.0
    """
    if not (l > 0 and M > 0):
        raise ConfigurationError("witness needs l > 0 and M > 0", (l, M))
    w = np.zeros(d)
    w[0] = l
    head = LinearValueHead(w, bound=l)
    x = (M / l ** 2 + 1.0) * w / np.linalg.norm(w)
    return head, x, 0.0


def tdTargetWitness(l, M, reward=1.0, gamma=0.9, d=2):
    """
    TD-target variant: x_next = 0 and x_t scaled along w, so the TD error
    r + gamma w'x_next - w'x_t grows without bound. Returns
    (head, xt, xnext, reward) with |dLoss/dx_t| = |TD error| l > M.
    """
    if not (l > 0 and M > 0):
        raise ConfigurationError("witness needs l > 0 and M > 0", (l, M))
    w = np.zeros(d)
    w[0] = l
    head = LinearValueHead(w, bound=l)
    t = (M / l + abs(reward)) / l + 1.0
    xt = t * w / l
    xnext = np.zeros(d)
    return head, xt, xnext, reward


class TargetHistogram(object):
    """
    Bin masses of a projected target distribution.
    ::

        >>> TargetHistogram([0.5, 0.25, 0.25])
        <TargetHistogram bins:3 >
        >>> TargetHistogram([0.5, 0.6])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'target histogram does not sum to 1'
    """

    def __init__(self, p):
        p = np.array(p, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-10:
            raise ConfigurationError("target histogram does not sum to 1")
        self.p = p

    def __repr__(self):
        return "<%s bins:%d >" % (self.__class__.__name__, self.p.shape[0])


def _binWidth(support, k):
    if k < 2:
        raise ConfigurationError("histogram needs at least 2 bins", k)
    low, high = support
    if not high > low:
        raise ConfigurationError("support must be an interval", support)
    return (high - low) / k


def categoricalProjection(atoms, probs, support, k):
    """
    Batched bin assignment: atoms and probs have shape (n, j); every atom's
    mass goes to the bin (low + i delta, low + (i + 1) delta] that contains it,
    atoms outside the support go to the first or last bin. Returns (n, k).
    """
    delta = _binWidth(support, k)
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    probs = np.atleast_2d(np.asarray(probs, dtype=float))
    index = np.clip(np.ceil((atoms - support[0]) / delta) - 1, 0, k - 1).astype(int)
    rows = np.repeat(np.arange(atoms.shape[0])[:, None], atoms.shape[1], axis=1)
    result = np.zeros((atoms.shape[0], k))
    np.add.at(result, (rows, index), probs)
    return result


def projectTargetDistribution(distribution, support, k):
    """
    Histogram of an AtomDistribution over k uniform bins of support.
    ::

        >>> from snmdpLab.objects.distribution import AtomDistribution
        >>> projectTargetDistribution(AtomDistribution.dirac(3.5), (0.0, 5.0), 5).p.tolist()
        [0.0, 0.0, 0.0, 1.0, 0.0]
        >>> projectTargetDistribution(AtomDistribution.dirac(2.0), (0.0, 5.0), 5).p.tolist()
        [0.0, 1.0, 0.0, 0.0, 0.0]
    """
    masses = categoricalProjection(distribution.atoms[None, :], distribution.probs[None, :], support, k)[0]
    return TargetHistogram(masses / masses.sum())


class HistogramHead(object):
    """
    Softmax over k bins of scores theta phi(x). Without a feature map the
    head is linear in x. Rows of theta are kept within the norm bound l.
    ::

        >>> import numpy as np
        >>> head = HistogramHead(np.zeros((4, 3)), (0.0, 4.0))
        >>> histogramForward(head, np.array([1.0, 2.0, 3.0])).tolist()
        [0.25, 0.25, 0.25, 0.25]
        >>> head.centers.tolist()
        [0.5, 1.5, 2.5, 3.5]
    """

    def __init__(self, theta, support, featureMap=None, bound=1.0):
        theta = np.array(theta, dtype=float)
        self.k = theta.shape[0]
        _binWidth(support, self.k)
        if featureMap is not None and theta.shape[1] != featureMap.outputSize:
            raise ConfigurationError("theta does not match the feature map", theta.shape)
        if bound is not None:
            theta = projectRowNorms(theta, bound)
        self.theta = theta
        self.support = (float(support[0]), float(support[1]))
        self.featureMap = featureMap
        self.bound = bound

    def __repr__(self):
        mode = "linear" if self.featureMap is None else "nonlinear"
        return "<%s %s bins:%d bound:%s >" % (self.__class__.__name__, mode, self.k, self.bound)

    @property
    def centers(self):
        low, high = self.support
        delta = (high - low) / self.k
        return low + delta * (np.arange(self.k) + 0.5)

    @property
    def lipschitzBound(self):
        return 1.0 if self.featureMap is None else self.featureMap.lipschitzBound

    def gradientBound(self):
        """ k l L, or None for an unbounded head. """
        if self.bound is None:
            return None
        return self.k * self.bound * self.lipschitzBound

    def features(self, x):
        if self.featureMap is None:
            return np.asarray(x, dtype=float)
        return self.featureMap.forward(x)

    def scores(self, x):
        return self.features(x) @ self.theta.T

    def expectation(self, x):
        return histogramForward(self, x) @ self.centers


def histogramForward(head, x):
    """ Bin probabilities softmax(theta phi(x)). """
    return softmax(head.scores(x), axis=-1)


def entropy(p):
    p = np.asarray(p, dtype=float)
    positive = p > 0
    return float(-np.sum(p[positive] * np.log(p[positive])))


def histogramLoss(p, f):
    """
    Cross-entropy -sum_i p_i log f_i.
    ::

        >>> import numpy as np
        >>> abs(histogramLoss([0.0, 1.0], [0.25, 0.75]) + float(np.log(0.75))) <= 1e-12
        True
        >>> histogramLoss([0.5, 0.5], [1.0, 0.0])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.NumericError: 'histogram probabilities must be positive'
    """
    p = p.p if isinstance(p, TargetHistogram) else np.asarray(p, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise NumericError("histogram probabilities must be positive")
    return float(-np.sum(p * np.log(f)))


def histogramLossFromScores(p, scores):
    """ Cross-entropy from raw scores, with log f = score - logsumexp. """
    p = p.p if isinstance(p, TargetHistogram) else np.asarray(p, dtype=float)
    return float(-np.sum(p * log_softmax(np.asarray(scores, dtype=float), axis=-1)))


def histogramGradWrtState(head, x, p):
    """
    State gradient of the cross-entropy: -sum_i (p_i - f_i) grad_x (phi(x)'theta_i).
    Its norm is at most k l L. x may be a batch of shape (n, d) with
    targets p of shape (n, k).
    """
    p = p.p if isinstance(p, TargetHistogram) else np.asarray(p, dtype=float)
    f = histogramForward(head, x)
    direction = -(p - f) @ head.theta
    if head.featureMap is None:
        return direction
    if np.ndim(x) == 1:
        return head.featureMap.vectorJacobian(x, direction)
    phi, activations = head.featureMap.forward(x, keep=True)
    return head.featureMap.backward(activations, direction)[1]


def histogramGradWrtParams(head, x, p):
    """
    Parameter gradients of the cross-entropy at a single x: dtheta of shape
    (k, m) and, for a nonlinear head, the feature-map layer gradients.
    """
    p = p.p if isinstance(p, TargetHistogram) else np.asarray(p, dtype=float)
    x = np.asarray(x, dtype=float)
    if head.featureMap is None:
        phi = x
        f = softmax(head.theta @ phi)
        return np.outer(f - p, phi), []
    phi, activations = head.featureMap.forward(x[None, :], keep=True)
    f = softmax(head.theta @ phi[0])
    upstream = ((f - p) @ head.theta)[None, :]
    layerGrads, _ = head.featureMap.backward(activations, upstream)
    return np.outer(f - p, phi[0]), layerGrads


def finiteDifferenceGradient(fn, x, step=1e-5):
    """
    Central differences of a scalar function over an array of any shape.
    ::

        >>> import numpy as np
        >>> g = finiteDifferenceGradient(lambda v: float(v @ v), np.array([1.0, -2.0]))
        >>> bool(np.allclose(g, [2.0, -4.0]))
        True
    """
    x = np.array(x, dtype=float)
    gradient = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + step
        upper = fn(x)
        x[index] = original - step
        lower = fn(x)
        x[index] = original
        gradient[index] = (upper - lower) / (2.0 * step)
    return gradient
