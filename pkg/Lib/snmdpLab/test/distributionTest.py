"""

Tests for atom distributions, the Wasserstein metrics and the
distributional backup of the state-noisy MDP.

"""

import doctest

import numpy as np
from scipy.stats import wasserstein_distance

from snmdpLab.objects.mdp import TabularMDP, Policy
from snmdpLab.objects.noise import TabularNoise
from snmdpLab.objects.evaluation import qBackup, evaluatePolicy
from snmdpLab.objects.distribution import (AtomDistribution, ValueDistributionTable, wassersteinP,
        distBellmanBackup, contractionCheck, solveDistributionalFixedPoint,
        wassersteinPropertySuite)
from snmdpLab.test.evaluationTest import randomInstance

INF = float("inf")


def testWassersteinExamples():
    """
    >>> a = AtomDistribution([0.0, 1.0], [0.5, 0.5])
    >>> b = AtomDistribution([0.0, 1.0], [0.25, 0.75])
    >>> [wassersteinP(a, a, p) for p in (1, 2, INF)]
    [0.0, 0.0, 0.0]
    >>> wassersteinP(a, b, 1)
    0.25
    >>> [wassersteinP(AtomDistribution.dirac(0.5), AtomDistribution.dirac(-2.0), p) for p in (1, 2, INF)]
    [2.5, 2.5, 2.5]
    """


def testWassersteinOneMatchesScipy():
    """
    >>> rng = np.random.default_rng(9)
    >>> worst = 0.0
    >>> for trial in range(200):
    ...     u = AtomDistribution.random(rng)
    ...     v = AtomDistribution.random(rng)
    ...     oracle = wasserstein_distance(u.atoms, v.atoms, u.probs, v.probs)
    ...     worst = max(worst, abs(wassersteinP(u, v, 1) - oracle))
    >>> bool(worst <= 1e-9)
    True
    """


def testWassersteinOrdering():
    """
    The p-distances grow with p.

    >>> rng = np.random.default_rng(19)
    >>> ordered = True
    >>> for trial in range(100):
    ...     u = AtomDistribution.random(rng)
    ...     v = AtomDistribution.random(rng)
    ...     d1, d2, dInf = [wassersteinP(u, v, p) for p in (1, 2, INF)]
    ...     ordered = ordered and d1 <= d2 + 1e-12 and d2 <= dInf + 1e-12
    >>> ordered
    True
    """


def testWassersteinMetricAxioms():
    """
    Symmetric to the bit, zero on equal arguments, and the triangle
    inequality holds on random triples.

    >>> rng = np.random.default_rng(23)
    >>> failures = 0
    >>> for trial in range(200):
    ...     a, b, c = [AtomDistribution.random(rng) for i in range(3)]
    ...     for p in (1.0, 2.0, INF):
    ...         ab, bc, ac = wassersteinP(a, b, p), wassersteinP(b, c, p), wassersteinP(a, c, p)
    ...         failures += ab != wassersteinP(b, a, p)
    ...         failures += ac > ab + bc + 1e-10
    ...         failures += wassersteinP(a, a, p) != 0.0
    >>> failures
    0
    """


def testBackupWithVanishingDiscount():
    """
    The backup collapses to the distribution of the immediate reward.

    >>> reward = np.array([[[0.0, 2.0]], [[1.0, 3.0]]])
    >>> m = TabularMDP(np.full((2, 1, 2), 0.5), reward, 1e-12)
    >>> z = ValueDistributionTable.random(2, 1, np.random.default_rng(1))
    >>> t = distBellmanBackup(m, Policy.uniform(2, 1), TabularNoise.identity(2), z)
    >>> [bool(np.allclose(t[s, 0].atoms, reward[s, 0], atol=1e-9)) for s in range(2)]
    [True, True]
    >>> [t[s, 0].probs.round(12).tolist() for s in range(2)]
    [[0.5, 0.5], [0.5, 0.5]]
    """


def testBackupExpectation():
    """
    The mean of the distributional backup is the scalar action-value backup.

    >>> rng = np.random.default_rng(23)
    >>> worst = 0.0
    >>> for trial in range(10):
    ...     m, pi, allowed = randomInstance(rng)
    ...     noise = TabularNoise.random(allowed, rng)
    ...     z = ValueDistributionTable.random(4, 3, rng)
    ...     t = distBellmanBackup(m, pi, noise, z)
    ...     expected = qBackup(m, pi, noise, z.expectations())
    ...     worst = max(worst, float(np.max(np.abs(t.expectations() - expected))))
    >>> worst <= 1e-9
    True
    """


def testContraction():
    """
    >>> rng = np.random.default_rng(31)
    >>> results = []
    >>> for trial in range(20):
    ...     m, pi, allowed = randomInstance(rng, nStates=3, nActions=2)
    ...     noise = TabularNoise.random(allowed, rng)
    ...     z1 = ValueDistributionTable.random(3, 2, rng, maxAtoms=3)
    ...     z2 = ValueDistributionTable.random(3, 2, rng, maxAtoms=3)
    ...     for p in (1.0, INF):
    ...         results.append(contractionCheck(m, pi, noise, z1, z2, p))
    >>> all(r["passed"] for r in results)
    True
    >>> max(r["ratio"] for r in results) <= 0.9 + 1e-9
    True
    """


def testAdversarialContraction():
    """
    With the greedy noise chosen once and shared by both tables the backup
    still contracts.

    >>> rng = np.random.default_rng(37)
    >>> m, pi, allowed = randomInstance(rng, nStates=3, nActions=2)
    >>> noise = TabularNoise.random(allowed, rng)
    >>> z1 = ValueDistributionTable.random(3, 2, rng, maxAtoms=3)
    >>> z2 = ValueDistributionTable.random(3, 2, rng, maxAtoms=3)
    >>> result = contractionCheck(m, pi, noise, z1, z2, 1.0, adversarial=True)
    >>> result["passed"], "independentRatio" in result
    (True, True)
    """


def testIdenticalTables():
    """
    >>> rng = np.random.default_rng(41)
    >>> m, pi, allowed = randomInstance(rng, nStates=2, nActions=2)
    >>> z = ValueDistributionTable.random(2, 2, rng)
    >>> result = contractionCheck(m, pi, TabularNoise.identity(2), z, z)
    >>> result["before"], result["after"], result["ratio"], result["passed"]
    (0.0, 0.0, 0.0, True)
    """


def testFixedPointExpectation():
    """
    The expectations of the distributional fixed point are the action values
    of the merged policy.

    >>> transition = np.zeros((2, 2, 2))
    >>> transition[:, 0, 0] = 1.0
    >>> transition[:, 1, 1] = 1.0
    >>> reward = np.zeros((2, 2, 2))
    >>> reward[:, :, 1] = 1.0
    >>> m = TabularMDP(transition, reward, 0.5)
    >>> pi = Policy([[0.5, 0.5], [0.25, 0.75]])
    >>> noise = TabularNoise([[0.5, 0.5], [0.0, 1.0]], [{0, 1}, {1}])
    >>> z = solveDistributionalFixedPoint(m, pi, noise, tol=1e-8, cap=64)
    >>> bool(np.max(np.abs(z.expectations() - evaluatePolicy(m, pi, noise).q)) <= 1e-6)
    True
    """


def testPropertySuite():
    """
    >>> report = wassersteinPropertySuite(np.random.default_rng(43), instances=20)
    >>> report.passed()
    True
    >>> sorted(set(row["check"] for row in report.rows))
    ['partition', 'product', 'scaling', 'shift']

    The degenerate instance compares two point masses at zero.

    >>> first = [row for row in report.rows if row["instance"] == 0 and row["check"] == "scaling"]
    >>> [(row["lhs"], row["rhs"]) for row in first]
    [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]
    """


if __name__ == "__main__":
    doctest.testmod()
