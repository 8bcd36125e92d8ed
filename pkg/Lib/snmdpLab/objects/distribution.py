# -*- coding: utf-8 -*-

"""
    Finite-atom return distributions, p-Wasserstein metrics and the
    distributional Bellman backup of the state-noisy MDP.

    Wasserstein distances are computed exactly from the piecewise constant
    quantile functions: the union of both cumulative probability breakpoints
    splits [0, 1] into intervals on which both quantile functions are flat.
"""

import logging

import numpy as np

from snmdpLab.objects.error import ConfigurationError, ConvergenceError, PropertyFailure
from snmdpLab.objects.mdp import mergedPolicy
from snmdpLab.objects.noise import TabularNoise, greedyAdversarialNoise

__all__ = [
    "AtomDistribution",
    "ValueDistributionTable",
    "wassersteinP",
    "maxWasserstein",
    "distBellmanBackup",
    "contractionCheck",
    "solveDistributionalFixedPoint",
    "wassersteinPropertySuite",
    "PropertyReport",
    "MASS_TOLERANCE",
    "MERGE_TOLERANCE",
    "ATOM_CAP",
    "LEVEL_TOLERANCE",
]

MASS_TOLERANCE = 1e-10
MERGE_TOLERANCE = 1e-9
ATOM_CAP = 512
# quantile intervals narrower than this are ignored by the sup metric
LEVEL_TOLERANCE = 1e-12

logger = logging.getLogger("snmdpLab")


class AtomDistribution(object):
    """
    A distribution with finitely many atoms.
    ::

        >>> d = AtomDistribution([0.0, 1.0], [0.25, 0.75])
        >>> d
        <AtomDistribution atoms:2 mean:0.75 >
        >>> AtomDistribution([1.0, 0.0], [0.5, 0.5])
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'atoms must be strictly increasing'
        >>> AtomDistribution.fromWeighted([2.0, 1.0, 2.0], [1.0, 2.0, 1.0]).probs.tolist()
        [0.5, 0.5]
    """

    def __init__(self, atoms, probs):
        atoms = np.array(atoms, dtype=float).reshape(-1)
        probs = np.array(probs, dtype=float).reshape(-1)
        if atoms.shape != probs.shape or atoms.size == 0:
            raise ConfigurationError("atoms and probs must be non-empty and of equal length")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(probs))):
            raise ConfigurationError("distribution has non-finite entries")
        if np.any(np.diff(atoms) <= 0):
            raise ConfigurationError("atoms must be strictly increasing")
        if np.any(probs < 0):
            raise ConfigurationError("probabilities must be non-negative")
        total = probs.sum()
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ConfigurationError("probabilities do not sum to 1", float(total))
        atoms.setflags(write=False)
        probs.setflags(write=False)
        self.atoms = atoms
        self.probs = probs

    def __repr__(self):
        return "<%s atoms:%d mean:%g >" % (self.__class__.__name__, len(self), self.mean())

    def __len__(self):
        return self.atoms.shape[0]

    @classmethod
    def dirac(cls, x):
        return cls([x], [1.0])

    @classmethod
    def fromWeighted(cls, atoms, weights):
        """ Sort, drop massless atoms, add up duplicates and renormalize. """
        atoms = np.asarray(atoms, dtype=float).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        keep = weights > 0
        if not np.any(keep):
            raise ConfigurationError("distribution has no mass")
        unique, inverse = np.unique(atoms[keep], return_inverse=True)
        mass = np.bincount(inverse, weights=weights[keep])
        return cls(unique, mass / mass.sum())

    @classmethod
    def random(cls, rng, maxAtoms=5, low=-5.0, high=5.0):
        count = int(rng.integers(1, maxAtoms + 1))
        atoms = rng.uniform(low, high, size=count)
        return cls.fromWeighted(atoms, rng.dirichlet(np.ones(count)))

    def mean(self):
        return float(self.atoms @ self.probs)

    def cumulative(self):
        """ Cumulative probability at every atom, last entry pinned to 1. """
        levels = np.cumsum(self.probs)
        levels[-1] = 1.0
        return levels

    def quantile(self, levels):
        """ Return inf{x : F(x) >= level} for every level in (0, 1]. """
        index = np.searchsorted(self.cumulative(), levels, side="left")
        return self.atoms[np.minimum(index, len(self) - 1)]

    def affine(self, shift, scale):
        """ Distribution of shift + scale * Z. """
        return AtomDistribution.fromWeighted(shift + scale * self.atoms, self.probs)

    def independentSum(self, other):
        """ Distribution of Z + W for independent Z and W. """
        atoms = np.add.outer(self.atoms, other.atoms)
        return AtomDistribution.fromWeighted(atoms, np.multiply.outer(self.probs, other.probs))

    def independentProduct(self, other):
        """ Distribution of Z * W for independent Z and W. """
        atoms = np.multiply.outer(self.atoms, other.atoms)
        return AtomDistribution.fromWeighted(atoms, np.multiply.outer(self.probs, other.probs))

    def compress(self, mergeTol=MERGE_TOLERANCE, cap=ATOM_CAP, support=None):
        """
        Merge neighbouring atoms closer than mergeTol at their mass-weighted
        position. If more than cap atoms remain, split the mass of every atom
        between the two nearest points of a uniform cap-point grid over
        support, which keeps both the total mass and the mean.
        ::

            >>> d = AtomDistribution([0.0, 1e-12, 1.0], [0.25, 0.25, 0.5])
            >>> len(d.compress())
            2
            >>> d = AtomDistribution([0.0, 0.25, 0.5, 1.0], [0.25, 0.25, 0.25, 0.25])
            >>> c = d.compress(cap=2, support=(0.0, 1.0))
            >>> c.atoms.tolist(), c.probs.tolist()
            ([0.0, 1.0], [0.5625, 0.4375])
        """
        atoms, probs = self.atoms, self.probs
        if len(atoms) > 1 and np.any(np.diff(atoms) < mergeTol):
            cluster = np.concatenate([[0], np.cumsum(np.diff(atoms) >= mergeTol)])
            mass = np.bincount(cluster, weights=probs)
            weighted = np.bincount(cluster, weights=probs * atoms)
            safe = np.where(mass > 0, mass, 1.0)
            positions = np.where(mass > 0, weighted / safe, np.bincount(cluster, weights=atoms) / np.bincount(cluster))
            atoms, probs = positions, mass
        if cap is not None and len(atoms) > cap:
            if cap < 2:
                raise ConfigurationError("atom cap must be at least 2", cap)
            if support is None:
                support = (float(atoms[0]), float(atoms[-1]))
            return _projectOnGrid(atoms, probs, support, cap)
        if atoms is self.atoms:
            return self
        return AtomDistribution.fromWeighted(atoms, probs)


def _projectOnGrid(atoms, probs, support, size):
    low, high = support
    grid = np.linspace(low, high, size)
    if high <= low:
        return AtomDistribution.dirac(low)
    delta = (high - low) / (size - 1)
    position = (np.clip(atoms, low, high) - low) / delta
    lower = np.floor(position).astype(int)
    upper = np.minimum(lower + 1, size - 1)
    upperShare = position - lower
    mass = np.zeros(size)
    np.add.at(mass, lower, probs * (1.0 - upperShare))
    np.add.at(mass, upper, probs * upperShare)
    return AtomDistribution.fromWeighted(grid, mass)


def wassersteinP(d1, d2, p=1.0):
    """
    Exact p-Wasserstein distance between two atom distributions.
    p may be float("inf").
    ::

        >>> a = AtomDistribution([0.0, 1.0], [0.5, 0.5])
        >>> b = AtomDistribution([0.0, 1.0], [0.25, 0.75])
        >>> wassersteinP(a, b, 1)
        0.25
        >>> wassersteinP(a, b, float("inf"))
        1.0
        >>> wassersteinP(AtomDistribution.dirac(-1.0), AtomDistribution.dirac(2.0), 2)
        3.0
        >>> wassersteinP(a, b, 0.5)
        Traceback (most recent call last):
        ...
        snmdpLab.objects.error.ConfigurationError: 'p must be at least 1'0.5
    """
    if not p >= 1:
        raise ConfigurationError("p must be at least 1", p)
    levels = np.union1d(d1.cumulative(), d2.cumulative())
    levels = levels[(levels > 0) & (levels <= 1.0)]
    edges = np.concatenate([[0.0], levels])
    widths = np.diff(edges)
    gaps = np.abs(d1.quantile(levels) - d2.quantile(levels))
    if np.isinf(p):
        wide = widths > LEVEL_TOLERANCE
        return float(gaps[wide].max()) if np.any(wide) else 0.0
    return float(np.sum(widths * gaps ** p) ** (1.0 / p))


class ValueDistributionTable(object):
    """
    One AtomDistribution per (state, action).
    ::

        >>> z = ValueDistributionTable.zeros(2, 3)
        >>> z
        <ValueDistributionTable states:2 actions:3 >
        >>> z.expectations().tolist()
        [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
    """

    def __init__(self, entries):
        entries = [list(row) for row in entries]
        if not entries or not entries[0] or any(len(row) != len(entries[0]) for row in entries):
            raise ConfigurationError("distribution table must be a non-empty rectangle")
        for row in entries:
            for entry in row:
                if not isinstance(entry, AtomDistribution):
                    raise ConfigurationError("table entries must be AtomDistribution objects", entry)
        self.z = entries

    def __repr__(self):
        return "<%s states:%d actions:%d >" % (self.__class__.__name__, self.nStates, self.nActions)

    def __getitem__(self, key):
        s, a = key
        return self.z[s][a]

    @property
    def nStates(self):
        return len(self.z)

    @property
    def nActions(self):
        return len(self.z[0])

    @classmethod
    def zeros(cls, nStates, nActions):
        zero = AtomDistribution.dirac(0.0)
        return cls([[zero] * nActions for s in range(nStates)])

    @classmethod
    def random(cls, nStates, nActions, rng, maxAtoms=4, low=-5.0, high=5.0):
        return cls([[AtomDistribution.random(rng, maxAtoms, low, high) for a in range(nActions)]
                    for s in range(nStates)])

    def expectations(self):
        return np.array([[entry.mean() for entry in row] for row in self.z])

    def maxAtoms(self):
        return max(len(entry) for row in self.z for entry in row)


def maxWasserstein(z1, z2, p=1.0):
    """ The maximal form sup over (s, a) of the p-Wasserstein distance. """
    if (z1.nStates, z1.nActions) != (z2.nStates, z2.nActions):
        raise ConfigurationError("distribution tables differ in shape")
    return max(wassersteinP(z1[s, a], z2[s, a], p)
               for s in range(z1.nStates) for a in range(z1.nActions))


def _checkTable(mdp, zt):
    if (zt.nStates, zt.nActions) != (mdp.nStates, mdp.nActions):
        raise ConfigurationError("distribution table does not match the MDP", (zt.nStates, zt.nActions))


def distBellmanBackup(mdp, pi, noise, zt, adversarial=False, cap=ATOM_CAP, mergeTol=MERGE_TOLERANCE,
                      project=False):
    """
    Distributional backup through the noise. Every (s, a) entry becomes the
    mixture over (s', a') of R(s, a, s') + gamma Z(s', a') with weights
    p(s'|s, a) sum_v N(v|s') pi(a'|v). When adversarial is set, the kernel is
    replaced by the greedy adversarial choice over noise.allowed computed from
    the expectations of zt.
    With project set, every entry is moved onto the cap-point grid over the
    value support, whatever its number of atoms.
    ::

        >>> import numpy as np
        >>> from snmdpLab.objects.mdp import TabularMDP, Policy
        >>> from snmdpLab.objects.noise import TabularNoise
        >>> reward = np.array([[[0.0, 2.0]], [[0.0, 2.0]]])
        >>> m = TabularMDP(np.full((2, 1, 2), 0.5), reward, 0.5)
        >>> z = ValueDistributionTable.zeros(2, 1)
        >>> t = distBellmanBackup(m, Policy.uniform(2, 1), TabularNoise.identity(2), z)
        >>> t[0, 0].atoms.tolist(), t[0, 0].probs.tolist()
        ([0.0, 2.0], [0.5, 0.5])
    """
    _checkTable(mdp, zt)
    if project and cap < 2:
        raise ConfigurationError("atom cap must be at least 2", cap)
    if adversarial:
        noise = greedyAdversarialNoise(mdp, pi, zt.expectations(), noise.allowed)
    merged = mergedPolicy(mdp, pi, noise).probs
    support = mdp.valueSupport()
    entries = []
    for s in range(mdp.nStates):
        row = []
        for a in range(mdp.nActions):
            atoms, weights = [], []
            for following in np.flatnonzero(mdp.transition[s, a]):
                reward = mdp.reward[s, a, following]
                for nextAction in np.flatnonzero(merged[following]):
                    weight = mdp.transition[s, a, following] * merged[following, nextAction]
                    branch = zt[following, nextAction]
                    atoms.append(reward + mdp.gamma * branch.atoms)
                    weights.append(weight * branch.probs)
            mixture = AtomDistribution.fromWeighted(np.concatenate(atoms), np.concatenate(weights))
            if project:
                row.append(_projectOnGrid(mixture.atoms, mixture.probs, support, cap))
            else:
                row.append(mixture.compress(mergeTol, cap, support))
        entries.append(row)
    return ValueDistributionTable(entries)


def contractionCheck(mdp, pi, noise, z1, z2, p=1.0, adversarial=False, cap=ATOM_CAP):
    """
    Compare the maximal Wasserstein distance before and after one backup.

    With adversarial set, the greedy noise is chosen from the expectations of
    z1 and applied to both tables; the ratio under independent re-selection
    is reported as well but carries no bound. Returns a dict with before,
    after, ratio, bound and pass.
    """
    if adversarial:
        shared = greedyAdversarialNoise(mdp, pi, z1.expectations(), noise.allowed)
        t1 = distBellmanBackup(mdp, pi, shared, z1, cap=cap)
        t2 = distBellmanBackup(mdp, pi, shared, z2, cap=cap)
    else:
        t1 = distBellmanBackup(mdp, pi, noise, z1, cap=cap)
        t2 = distBellmanBackup(mdp, pi, noise, z2, cap=cap)
    before = maxWasserstein(z1, z2, p)
    after = maxWasserstein(t1, t2, p)
    ratio = after / before if before > 0 else 0.0
    result = dict(before=before, after=after, ratio=ratio, bound=mdp.gamma,
                  passed=after <= mdp.gamma * before + 1e-10)
    if adversarial:
        i1 = distBellmanBackup(mdp, pi, noise, z1, adversarial=True, cap=cap)
        i2 = distBellmanBackup(mdp, pi, noise, z2, adversarial=True, cap=cap)
        independent = maxWasserstein(i1, i2, p)
        result["independentRatio"] = independent / before if before > 0 else 0.0
    return result


def solveDistributionalFixedPoint(mdp, pi, noise, tol=1e-8, adversarial=False, initial=None,
                                  cap=ATOM_CAP, maxIterations=100000):
    """
    Iterate distBellmanBackup until the maximal sup-Wasserstein change is
    within tol. Starts from point masses at zero unless initial is given.
    Every iterate lives on the cap-point grid over the value support, where
    the backup contracts in the Cramer distance and keeps expectations.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive", tol)
    if noise is None:
        noise = TabularNoise.identity(mdp.nStates)
    current = ValueDistributionTable.zeros(mdp.nStates, mdp.nActions) if initial is None else initial
    _checkTable(mdp, current)
    for iteration in range(maxIterations):
        following = distBellmanBackup(mdp, pi, noise, current, adversarial=adversarial, cap=cap, project=True)
        change = maxWasserstein(following, current, float("inf"))
        current = following
        logger.debug("distributional sweep %d change %g atoms %d", iteration, change, current.maxAtoms())
        if change <= tol:
            return current
    logger.warning("solveDistributionalFixedPoint: no convergence after %d sweeps", maxIterations)
    raise ConvergenceError("distributional iteration did not converge", maxIterations)


class PropertyReport(object):
    """ Rows of (check, instance, p, lhs, rhs, passed) from a property suite. """

    def __init__(self):
        self.rows = []

    def __repr__(self):
        return "<%s checks:%d failures:%d >" % (self.__class__.__name__, len(self.rows), len(self.failures()))

    def add(self, check, instance, p, lhs, rhs, slack):
        passed = lhs <= rhs + slack
        self.rows.append(dict(check=check, instance=instance, p=p, lhs=lhs, rhs=rhs, passed=passed))
        return passed

    def failures(self):
        return [row for row in self.rows if not row["passed"]]

    def passed(self):
        return not self.failures()


def _bernoulli(q):
    return AtomDistribution.fromWeighted([0.0, 1.0], [1.0 - q, q])


def _norm(a, p):
    if np.isinf(p):
        return float(np.max(np.abs(a.atoms)))
    return float((a.probs @ np.abs(a.atoms) ** p) ** (1.0 / p))


def wassersteinPropertySuite(rng, instances=50, ps=(1.0, 2.0, float("inf")), slack=1e-9, strict=True):
    """
    Check the Wasserstein inequalities the contraction argument relies on,
    on random atom distributions U and V:

    scaling: d(aU, aV) <= |a| d(U, V)
    shift: d(A + U, A + V) <= d(U, V) for A independent of U and V
    partition: d(U, V) <= sum_i d(A_i U, A_i V) for independent indicators
    A_i of a random partition
    product: d(AU, AV) <= ||A||_p d(U, V) for independent non-negative A

    The degenerate cases a = 0 and A = 0 are always included. Returns a
    PropertyReport; with strict set, the first failing row raises
    PropertyFailure carrying the counterexample.
    ::

        >>> import numpy as np
        >>> report = wassersteinPropertySuite(np.random.default_rng(3), instances=5)
        >>> report.passed()
        True
    """
    report = PropertyReport()
    zero = AtomDistribution.dirac(0.0)
    for instance in range(instances + 1):
        u = AtomDistribution.random(rng)
        v = AtomDistribution.random(rng)
        if instance == 0:
            a, shift = 0.0, zero
        else:
            a = float(rng.uniform(-3.0, 3.0))
            shift = AtomDistribution.random(rng)
        weights = rng.dirichlet(np.ones(int(rng.integers(2, 5))))
        factor = AtomDistribution.random(rng, low=0.0, high=3.0)
        for p in ps:
            base = wassersteinP(u, v, p)
            checks = [
                ("scaling", wassersteinP(u.affine(0.0, a), v.affine(0.0, a), p), abs(a) * base),
                ("shift", wassersteinP(shift.independentSum(u), shift.independentSum(v), p), base),
                ("partition", base, sum(wassersteinP(_bernoulli(q).independentProduct(u),
                                                     _bernoulli(q).independentProduct(v), p)
                                        for q in weights)),
                ("product", wassersteinP(factor.independentProduct(u), factor.independentProduct(v), p),
                 _norm(factor, p) * base),
            ]
            for check, lhs, rhs in checks:
                if not report.add(check, instance, p, lhs, rhs, slack) and strict:
                    counterexample = dict(check=check, p=p, u=u, v=v, a=a, shift=shift, factor=factor)
                    raise PropertyFailure("Wasserstein property violated", counterexample)
    return report
