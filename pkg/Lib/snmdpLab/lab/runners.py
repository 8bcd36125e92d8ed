# -*- coding: utf-8 -*-

"""
    One runner per subcommand.

    A runner splits its section into independent runs, hands them to a
    worker pool and merges the results in run order. Every run draws from
    its own generator, seeded by hashing the master seed with the run label,
    so the reports do not depend on the number of workers.
"""

import concurrent.futures
import hashlib
import os

import numpy as np

from snmdpLab.control.agents import AgentConfig, NoiseInjection, trainAgent
from snmdpLab.control.envs import TabularEnvSpec, makeEnv, makeTabular
from snmdpLab.lab.report import ReportWriter, RunSummary, averageCurves, meanAndStderr, readReport
from snmdpLab.objects.distribution import (ValueDistributionTable, contractionCheck,
                                           solveDistributionalFixedPoint, wassersteinPropertySuite)
from snmdpLab.objects.error import AnalysisError, ConfigurationError
from snmdpLab.objects.evaluation import (ValueTable, adversarialFixedPoint, bellmanBackup, evaluatePolicy,
                                         exhaustiveAdversarialMinimum, qFromValues, solveFixedPoint)
from snmdpLab.objects.heads import (HistogramHead, LinearValueHead, NonlinearFeatureMap,
                                    finiteDifferenceGradient, histogramGradWrtParams, histogramGradWrtState,
                                    histogramLossFromScores, veGradientWrtParams, veGradientWrtState,
                                    veGradientWrtStateNonlinear, veNonlinearWitness, veUnboundednessWitness)
from snmdpLab.objects.linearTD import (LinearTDSystem, bVector, buildConvergenceMatrix, conditionMatrices,
                                       contaminatedRefit, corollaryTradeoff, divergentNextStatePerturbation,
                                       influenceFunction, isPositiveDefinite, tdFixedPoint, tdSimulate)
from snmdpLab.objects.mdp import Policy, TabularMDP
from snmdpLab.objects.noise import ContinuousNoise, TabularNoise, greedyAdversarialNoise

__all__ = [
    "runSeedSequence",
    "mapRuns",
    "runTabularContract",
    "runTdAnalysis",
    "runGradBounds",
    "runInfluence",
    "runTrainingSweep",
    "emitPlotData",
    "relativeError",
    "RUNNERS",
]

CONTRACTION_SLACK = 1e-10
FIXED_POINT_TOLERANCE = 1e-8
DISTRIBUTIONAL_TOLERANCE = 1e-6
DESCENT_SLACK = 1e-9
CONVERGED_RESIDUAL = 0.1
DIVERGED_RESIDUAL = 10.0
RATE_THRESHOLD = 0.8
SHRINK_THRESHOLD = 3.0
NOISE_FREE_RETURN = {"cartpole": 150.0}
COUNTEREXAMPLE_LIMIT = 10


def runSeedSequence(masterSeed, runLabel):
    """
    Seed sequence of one run: the first 128 bits of sha256("seed/label").
    ::

        >>> a = np.random.default_rng(runSeedSequence(1, "train/0")).random()
        >>> b = np.random.default_rng(runSeedSequence(1, "train/0")).random()
        >>> c = np.random.default_rng(runSeedSequence(1, "train/1")).random()
        >>> a == b, a == c
        (True, False)
    """
    digest = hashlib.sha256(("%d/%s" % (masterSeed, runLabel)).encode("utf-8")).digest()
    return np.random.SeedSequence(int.from_bytes(digest[:16], "big"))


def _rng(masterSeed, runLabel):
    return np.random.default_rng(runSeedSequence(masterSeed, runLabel))


def mapRuns(function, jobs, workers=1, progress=None):
    """
    Results of function over jobs, in job order. With more than one worker
    the jobs run in a process pool; function must be importable.
    """
    jobs = list(jobs)
    results = []
    if workers <= 1 or len(jobs) <= 1:
        outcomes = (function(job) for job in jobs)
        for index, outcome in enumerate(outcomes):
            results.append(outcome)
            if progress is not None:
                progress(index + 1, len(jobs))
        return results
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        for index, outcome in enumerate(pool.map(function, jobs)):
            results.append(outcome)
            if progress is not None:
                progress(index + 1, len(jobs))
    return results


def _progress(progressFunc, name):
    if progressFunc is None:
        return None
    def report(done, total):
        progressFunc(state="generate", action="run", text="%s %d/%d" % (name, done, total),
                     tick=done / float(total))
    return report


def _orderName(p):
    return "inf" if np.isinf(p) else "%g" % p


def relativeError(g, reference):
    """
    |g - reference| / max(|g|, |reference|, 1e-6).
    ::

        >>> relativeError(np.array([1.0, 0.0]), np.array([1.0, 1e-9]))
        1e-09
    """
    g = np.ravel(np.asarray(g, dtype=float))
    reference = np.ravel(np.asarray(reference, dtype=float))
    scale = max(np.linalg.norm(g), np.linalg.norm(reference), 1e-6)
    return float(np.linalg.norm(g - reference) / scale)


def _summarize(summary, rows, counterexamples=True):
    """ One check per distinct check name, in order of first appearance. """
    names = []
    for row in rows:
        if row["check"] not in names:
            names.append(row["check"])
    for name in names:
        selected = [row for row in rows if row["check"] == name]
        failed = [row for row in selected if not row["passed"]]
        worst = max(row["value"] for row in selected)
        summary.check(name, not failed, "%d/%d rows pass, largest value %.6g" % (
            len(selected) - len(failed), len(selected), worst))
        if counterexamples:
            summary.counterexamples.extend(failed[:COUNTEREXAMPLE_LIMIT])


def _writeRows(path, config, columns, rows, verbose, logger):
    with ReportWriter(path, config.configHash(), config.seed, columns, verbose, logger) as writer:
        writer.writeRows(rows)
    return path


def _finish(summary, config, outputFolder, verbose, logger):
    path = os.path.join(outputFolder, "%s-summary.csv" % summary.name)
    summary.write(path, config.configHash(), config.seed)
    if verbose and logger:
        for line in summary.lines():
            logger.info(line)
    return summary


# tabular contract

def _randomInstance(rng, maxStates, maxActions, gamma, runId):
    nStates = int(rng.integers(1, maxStates + 1))
    nActions = int(rng.integers(1, maxActions + 1))
    mdp = makeTabular(TabularEnvSpec("random", nStates, nActions, gamma, seed=runId), rng)
    return mdp, Policy.random(nStates, nActions, rng)


def _adversarialBackup(mdp, pi, allowed, v):
    noise = greedyAdversarialNoise(mdp, pi, qFromValues(mdp, v), allowed)
    return bellmanBackup(mdp, pi, noise, v)


def _tabularTrial(job):
    masterSeed, runId, params = job
    rng = _rng(masterSeed, "tabular-contract/%d" % runId)
    mdp, pi = _randomInstance(rng, params["maxStates"], params["maxActions"], params["gamma"], runId)
    allowed = TabularNoise.randomAllowedSets(mdp.nStates, params["maxAllowed"], rng)
    noise = TabularNoise.random(allowed, rng)
    return _contractRows(runId, mdp, pi, noise, params, rng)


def _explicitTrial(job):
    masterSeed, runId, params, index = job
    record = params["mdps"][index]
    rng = _rng(masterSeed, "tabular-contract/mdp/%d" % index)
    return _contractRows(runId, TabularMDP.fromDict(record["mdp"]), Policy.fromDict(record["policy"]),
                         TabularNoise.fromDict(record["noise"]), params, rng)


def _contractRows(runId, mdp, pi, noise, params, rng):
    """ Contraction and fixed-point rows of one instance; rng draws the value pairs. """
    gamma = mdp.gamma
    allowed = noise.allowed
    rows = []

    def record(check, measure, value, bound, passed):
        rows.append(dict(run=runId, states=mdp.nStates, actions=mdp.nActions, check=check,
                         measure=measure, value=value, bound=bound, passed=passed))

    low, high = mdp.valueSupport()
    for pair in range(params["pairs"]):
        v1 = ValueTable(rng.uniform(low, high, size=mdp.nStates))
        v2 = ValueTable(rng.uniform(low, high, size=mdp.nStates))
        before = v1.distance(v2)
        operators = (
            ("expectation-random", lambda v: bellmanBackup(mdp, pi, noise, v)),
            ("expectation-adversarial", lambda v: _adversarialBackup(mdp, pi, allowed, v)),
        )
        for check, operator in operators:
            after = operator(v1).distance(operator(v2))
            ratio = after / before if before > 0 else 0.0
            record(check, "ratio", ratio, gamma, after <= gamma * before + CONTRACTION_SLACK)
    direct = evaluatePolicy(mdp, pi, noise)
    if params["fixedPoints"]:
        gap = solveFixedPoint(mdp, pi, noise, tol=1e-10).distance(direct)
        record("expectation-fixed-point", "gap", gap, FIXED_POINT_TOLERANCE, gap <= FIXED_POINT_TOLERANCE)
    if params["distributional"]:
        z1 = ValueDistributionTable.random(mdp.nStates, mdp.nActions, rng, low=low, high=high)
        z2 = ValueDistributionTable.random(mdp.nStates, mdp.nActions, rng, low=low, high=high)
        for p in params["orders"]:
            for adversarial in (False, True):
                result = contractionCheck(mdp, pi, noise, z1, z2, p, adversarial, params["cap"])
                check = "distributional-adversarial" if adversarial else "distributional-random"
                record(check, "ratio-p%s" % _orderName(p), result["ratio"], gamma, result["passed"])
        if params["fixedPoints"]:
            table = solveDistributionalFixedPoint(mdp, pi, noise, tol=1e-8, cap=params["fixedPointCap"])
            gap = float(np.max(np.abs(table.expectations() - direct.q)))
            record("distributional-fixed-point", "gap", gap, DISTRIBUTIONAL_TOLERANCE,
                   gap <= DISTRIBUTIONAL_TOLERANCE)
    return rows


def _adversarialTrial(job):
    masterSeed, runId, params = job
    rng = _rng(masterSeed, "tabular-contract/adversarial/%d" % runId)
    mdp, pi = _randomInstance(rng, params["adversarialStates"], params["maxActions"], params["gamma"], runId)
    allowed = TabularNoise.randomAllowedSets(mdp.nStates, params["adversarialAllowed"], rng)
    trace = []
    values, noise = adversarialFixedPoint(mdp, pi, allowed, tol=1e-10, trace=trace)
    gap = values.distance(exhaustiveAdversarialMinimum(mdp, pi, allowed))
    rise = max([float(np.max(after - before)) for before, after in zip(trace, trace[1:])] + [0.0])
    common = dict(run=runId, states=mdp.nStates, actions=mdp.nActions)
    return [
        dict(common, check="adversarial-minimum", measure="gap", value=gap, bound=FIXED_POINT_TOLERANCE,
             passed=gap <= FIXED_POINT_TOLERANCE),
        dict(common, check="adversarial-descent", measure="rise", value=rise, bound=DESCENT_SLACK,
             passed=rise <= DESCENT_SLACK),
    ]


def _propertyTrial(job):
    masterSeed, runId, params = job
    rng = _rng(masterSeed, "tabular-contract/properties")
    return wassersteinPropertySuite(rng, instances=params["propertyInstances"], strict=False).rows


def _batterySize(params, name, default):
    """ An unset battery size follows trials, up to its default. """
    if params.get(name) is None:
        return min(default, params["trials"])
    return params[name]


TABULAR_COLUMNS = ["run", "states", "actions", "check", "measure", "value", "bound", "passed"]


def runTabularContract(config, outputFolder, workers=1, verbose=False, logger=None, progressFunc=None):
    """
    Contraction ratios of the expectation and distributional operators on
    random and explicit MDPs, fixed points against direct solves,
    adversarial minimality against exhaustive enumeration and the
    Wasserstein property suite. Explicit MDPs are numbered after the random
    ones.
    """
    params = dict(config["tabular-contract"])
    params.setdefault("mdps", [])
    params["adversarialTrials"] = _batterySize(params, "adversarialTrials", 20)
    params["propertyInstances"] = _batterySize(params, "propertyInstances", 50)
    summary = RunSummary("tabular-contract")
    jobs = [(config.seed, runId, params) for runId in range(params["trials"])]
    rows = [row for result in mapRuns(_tabularTrial, jobs, workers, _progress(progressFunc, summary.name))
            for row in result]
    jobs = [(config.seed, params["trials"] + index, params, index) for index in range(len(params["mdps"]))]
    rows += [row for result in mapRuns(_explicitTrial, jobs, workers) for row in result]
    jobs = [(config.seed, runId, params) for runId in range(params["adversarialTrials"])]
    rows += [row for result in mapRuns(_adversarialTrial, jobs, workers) for row in result]
    summary.files.append(_writeRows(os.path.join(outputFolder, "tabular-contract.csv"), config,
                                    TABULAR_COLUMNS, rows, verbose, logger))
    _summarize(summary, rows)
    if params["propertyInstances"]:
        properties = _propertyTrial((config.seed, 0, params))
        propertyRows = [dict(check="wasserstein-%s" % row["check"], instance=row["instance"],
                             p=_orderName(row["p"]), value=row["lhs"] - row["rhs"], lhs=row["lhs"],
                             rhs=row["rhs"], passed=row["passed"]) for row in properties]
        summary.files.append(_writeRows(os.path.join(outputFolder, "tabular-contract-properties.csv"), config,
                                        ["check", "instance", "p", "lhs", "rhs", "passed"],
                                        [dict((k, v) for k, v in row.items() if k != "value")
                                         for row in propertyRows], verbose, logger))
        _summarize(summary, propertyRows)
    return _finish(summary, config, outputFolder, verbose, logger)


# td analysis

def _tdSchedule(matrix):
    """ a / (b + t) with a = clip(2 / lambda_min, 1, 200) and b = max(100, a). """
    positive, minEig = isPositiveDefinite(matrix)
    a = float(np.clip(2.0 / minEig, 1.0, 200.0)) if positive else 1.0
    return a, max(100.0, a)


def _tdCase(system, case, params, rng):
    """ Condition verdict and empirical outcome of TD on system under case. """
    conditions = [isPositiveDefinite(matrix)[1] for name, matrix in conditionMatrices(system, case)]
    holds = all(value > 0 for value in conditions)
    row = dict(case=case, holds=holds, minCondition=min(conditions), a=None, residual=None, outcome="singular")
    try:
        target = tdFixedPoint(system, case)
    except AnalysisError:
        return row
    a, b = _tdSchedule(buildConvergenceMatrix(system, case))
    trajectory = tdSimulate(system, case, params["steps"], rng, chains=params["seeds"], schedule=(a, b))
    residual = trajectory.relativeError(target)
    if trajectory.anyDiverged() or residual >= DIVERGED_RESIDUAL:
        outcome = "diverged"
    elif residual < CONVERGED_RESIDUAL:
        outcome = "converged"
    else:
        outcome = "slow"
    row.update(a=a, residual=residual, outcome=outcome)
    return row


def _tdTrial(job):
    masterSeed, runId, params = job
    rng = _rng(masterSeed, "td-analysis/%d" % runId)
    nStates = int(rng.integers(2, params["maxStates"] + 1))
    nFeatures = int(rng.integers(1, min(params["maxFeatures"], nStates) + 1))
    rho = params["rhos"][runId % len(params["rhos"])]
    system = LinearTDSystem.random(nStates, nFeatures, rng, params["gamma"], rho)
    rows = []
    for case in params["cases"]:
        row = _tdCase(system, case, params, rng)
        row.update(run=runId, kind="random", states=nStates, features=nFeatures, scale=rho)
        rows.append(row)
    return rows


def _tdDivergenceTrial(job):
    masterSeed, runId, params = job
    rng = _rng(masterSeed, "td-analysis/constructed/%d" % runId)
    scale = params["divergenceScales"][runId]
    system = divergentNextStatePerturbation(LinearTDSystem.random(5, 2, rng, params["gamma"]), scale)
    row = _tdCase(system, "next", params, rng)
    row.update(run=runId, kind="constructed", states=5, features=2, scale=scale)
    return [row]


TD_COLUMNS = ["run", "kind", "states", "features", "scale", "case", "holds", "minCondition", "a",
              "residual", "outcome"]


def runTdAnalysis(config, outputFolder, workers=1, verbose=False, logger=None, progressFunc=None):
    """
    Convergence conditions against simulated TD on random perturbed systems,
    plus the constructed next-state perturbations that make -X'DPE negative
    definite. Writes the per-system rows and the contingency table.
    """
    params = config["td-analysis"]
    summary = RunSummary("td-analysis")
    jobs = [(config.seed, runId, params) for runId in range(params["systems"])]
    rows = [row for result in mapRuns(_tdTrial, jobs, workers, _progress(progressFunc, summary.name))
            for row in result]
    jobs = [(config.seed, runId, params) for runId in range(len(params["divergenceScales"]))]
    constructed = [row for result in mapRuns(_tdDivergenceTrial, jobs, workers) for row in result]
    summary.files.append(_writeRows(os.path.join(outputFolder, "td-analysis.csv"), config, TD_COLUMNS,
                                    rows + constructed, verbose, logger))
    counts = []
    for holds in (True, False):
        for outcome in ("converged", "slow", "diverged", "singular"):
            count = sum(1 for row in rows if row["holds"] == holds and row["outcome"] == outcome)
            counts.append(dict(holds=holds, outcome=outcome, count=count))
    summary.files.append(_writeRows(os.path.join(outputFolder, "td-analysis-contingency.csv"), config,
                                    ["holds", "outcome", "count"], counts, verbose, logger))
    held = [row for row in rows if row["holds"] and row["outcome"] != "singular"]
    unconverged = [row for row in held if row["outcome"] != "converged"]
    summary.check("conditions-imply-convergence", not unconverged,
                  "%d/%d systems meeting the conditions converged" % (len(held) - len(unconverged), len(held)))
    divergedHolding = [row for row in held if row["outcome"] == "diverged"]
    summary.check("no-holds-but-diverged", not divergedHolding, "%d cells" % len(divergedHolding))
    summary.counterexamples.extend(unconverged[:COUNTEREXAMPLE_LIMIT])
    if constructed:
        diverged = [row for row in constructed if row["outcome"] == "diverged"]
        summary.check("constructed-divergence", bool(diverged),
                      "%d/%d constructed systems diverged" % (len(diverged), len(constructed)))
    return _finish(summary, config, outputFolder, verbose, logger)


# gradient bounds

def _unitRows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _finiteDifferenceRows(head, lsHead, featureMap, rng, dim, params, common):
    """ Analytic gradients against central differences at unit-scale inputs. """
    rows = []
    k = head.k
    for trial in range(params["checks"]):
        x = rng.normal(size=dim)
        p = rng.dirichlet(np.ones(k))
        checks = [
            ("fd-histogram-state", histogramGradWrtState(head, x, p),
             finiteDifferenceGradient(lambda v: histogramLossFromScores(p, head.scores(v)), x)),
        ]
        dTheta, layerGrads = histogramGradWrtParams(head, x, p)
        phi = head.features(x)
        checks.append(("fd-histogram-theta", dTheta,
                       finiteDifferenceGradient(lambda t: histogramLossFromScores(p, t @ phi), head.theta)))
        U = float(rng.normal())
        if featureMap is None:
            checks.append(("fd-least-squares-state", veGradientWrtState(lsHead, x, U),
                           finiteDifferenceGradient(lambda v: 0.5 * (U - lsHead.w @ v) ** 2, x)))
            checks.append(("fd-least-squares-params", veGradientWrtParams(lsHead, x, U),
                           finiteDifferenceGradient(lambda w: 0.5 * (U - w @ x) ** 2, lsHead.w)))
        else:
            theta = lsHead.w
            checks.append(("fd-least-squares-state", veGradientWrtStateNonlinear(featureMap, theta, x, U),
                           finiteDifferenceGradient(lambda v: 0.5 * (U - featureMap.forward(v) @ theta) ** 2, x)))
            W, b = featureMap.layers[0]

            def firstLayerLoss(weights):
                changed = featureMap.copy()
                changed.layers[0] = (weights, b)
                return histogramLossFromScores(p, head.theta @ changed.forward(x))
            checks.append(("fd-histogram-layer", layerGrads[0][0], finiteDifferenceGradient(firstLayerLoss, W)))
        for check, analytic, numeric in checks:
            error = relativeError(analytic, numeric)
            rows.append(dict(common, inputScale=1.0, check=check, value=error, bound=params["tolerance"],
                             passed=error <= params["tolerance"]))
    return rows


def _gradTrial(job):
    masterSeed, runId, params = job
    mode, k, l = params["configurations"][runId]
    rng = _rng(masterSeed, "grad-bounds/%d" % runId)
    dim = params["dim"]
    if mode == "nonlinear":
        featureMap = NonlinearFeatureMap.random(dim, params["width"], rng, appendBias=True)
        size = featureMap.outputSize
    else:
        featureMap = None
        size = dim
    head = HistogramHead(l * _unitRows(rng, k, size), (-10.0, 10.0), featureMap, bound=l)
    lsHead = LinearValueHead(l * _unitRows(rng, 1, size)[0], bound=l)
    bound = head.gradientBound()
    common = dict(run=runId, mode=mode, k=k, l=l, lipschitz=head.lipschitzBound)
    rows = []
    for scale in params["inputScales"]:
        X = scale * _unitRows(rng, params["trials"], dim)
        targets = np.eye(k)[rng.integers(0, k, size=params["trials"])]
        norms = np.linalg.norm(histogramGradWrtState(head, X, targets), axis=1)
        largest = float(norms.max())
        rows.append(dict(common, inputScale=scale, check="histogram-bound", value=largest, bound=bound,
                         passed=largest <= bound))
    M = 10.0 * bound
    if featureMap is None:
        witness, x, U = veUnboundednessWitness(l, M, d=dim)
        norm = float(np.linalg.norm(veGradientWrtState(witness, x, U)))
    else:
        x = _unitRows(rng, 1, dim)[0]
        U = veNonlinearWitness(featureMap, lsHead.w, x, M)
        norm = float(np.linalg.norm(veGradientWrtStateNonlinear(featureMap, lsHead.w, x, U)))
    rows.append(dict(common, inputScale=float(np.linalg.norm(x)), check="least-squares-witness", value=norm,
                     bound=M, passed=norm > M))
    rows += _finiteDifferenceRows(head, lsHead, featureMap, rng, dim, params, common)
    return rows


GRAD_COLUMNS = ["run", "mode", "k", "l", "lipschitz", "inputScale", "check", "value", "bound", "passed"]


def runGradBounds(config, outputFolder, workers=1, verbose=False, logger=None, progressFunc=None):
    """
    Histogram state-gradient norms against k l L over growing inputs, the
    least-squares witnesses beyond 10 k l L, and finite-difference checks of
    every analytic gradient.
    """
    params = dict(config["grad-bounds"])
    params["configurations"] = [(mode, k, l) for mode in params["modes"] for k in params["ks"] for l in params["ls"]]
    summary = RunSummary("grad-bounds")
    jobs = [(config.seed, runId, params) for runId in range(len(params["configurations"]))]
    rows = [row for result in mapRuns(_gradTrial, jobs, workers, _progress(progressFunc, summary.name))
            for row in result]
    summary.files.append(_writeRows(os.path.join(outputFolder, "grad-bounds.csv"), config, GRAD_COLUMNS,
                                    rows, verbose, logger))
    _summarize(summary, [row for row in rows if row["check"] != "least-squares-witness"])
    witnesses = [row for row in rows if row["check"] == "least-squares-witness"]
    failed = [row for row in witnesses if not row["passed"]]
    summary.check("least-squares-witness", not failed, "%d/%d witnesses exceed 10 k l L" % (
        len(witnesses) - len(failed), len(witnesses)))
    summary.counterexamples.extend(failed[:COUNTEREXAMPLE_LIMIT])
    return _finish(summary, config, outputFolder, verbose, logger)


# influence

def _influenceTrial(job):
    masterSeed, runId, params = job
    rng = _rng(masterSeed, "influence/%d" % runId)
    dim, gamma = params["dim"], params["gamma"]
    system = LinearTDSystem.random(dim + 3, dim, rng, gamma)
    A = buildConvergenceMatrix(system, "none")
    b = bVector(system, "none")
    w = np.linalg.solve(A, b)
    xt = rng.normal(size=dim)
    xnext = rng.normal(size=dim)
    R = float(rng.uniform())
    psi = influenceFunction(A, xt, xnext, R, w, gamma).psi
    rows = []
    errors = []
    for epsilon in params["epsilons"]:
        derivative = (contaminatedRefit(A, b, xt, xnext, R, epsilon, gamma) - w) / epsilon
        error = float(np.linalg.norm(derivative - psi))
        errors.append(error)
        rows.append(dict(run=runId, check="refit-error", parameter=epsilon, value=error, bound=None, passed=True))
    if len(errors) > 1 and min(errors) > 0:
        rate = float(np.polyfit(np.log(params["epsilons"]), np.log(errors), 1)[0])
        rows.append(dict(run=runId, check="influence-rate", parameter=None, value=rate, bound=RATE_THRESHOLD,
                         passed=rate >= RATE_THRESHOLD))
    direction = _unitRows(rng, 1, dim)[0]
    eta = params["eta"] * np.linalg.norm(xt) * direction
    residual = corollaryTradeoff(xt, xnext, R, w, eta, gamma)[2]
    halved = corollaryTradeoff(xt, xnext, R, w, 0.5 * eta, gamma)[2]
    shrink = residual / halved if halved > 0 else float("inf")
    rows.append(dict(run=runId, check="corollary-shrink", parameter=params["eta"], value=shrink,
                     bound=SHRINK_THRESHOLD, passed=shrink >= SHRINK_THRESHOLD))
    return rows


def runInfluence(config, outputFolder, workers=1, verbose=False, logger=None, progressFunc=None):
    """
    Contaminated refits against the closed-form influence, with the observed
    rate in epsilon, and the shrinkage of the first-order tradeoff residual
    when the perturbation is halved.
    """
    params = config["influence"]
    summary = RunSummary("influence")
    jobs = [(config.seed, runId, params) for runId in range(params["instances"])]
    rows = [row for result in mapRuns(_influenceTrial, jobs, workers, _progress(progressFunc, summary.name))
            for row in result]
    summary.files.append(_writeRows(os.path.join(outputFolder, "influence.csv"), config,
                                    ["run", "check", "parameter", "value", "bound", "passed"], rows,
                                    verbose, logger))
    checked = [row for row in rows if row["check"] != "refit-error"]
    for name in ("influence-rate", "corollary-shrink"):
        selected = [row for row in checked if row["check"] == name]
        failed = [row for row in selected if not row["passed"]]
        smallest = min([row["value"] for row in selected] + [float("inf")])
        summary.check(name, not failed, "%d/%d instances, smallest %.6g" % (
            len(selected) - len(failed), len(selected), smallest))
        summary.counterexamples.extend(failed[:COUNTEREXAMPLE_LIMIT])
    return _finish(summary, config, outputFolder, verbose, logger)


# training

AGENT_KEYWORDS = dict(head="headMode", k="k", l="normBound", lr="learningRate", width="width",
                      batch="batchSize", sync="syncPeriod", replay="replayCapacity",
                      starts="learningStarts", gamma="gamma", temperature="temperature")


def agentConfig(envName, agent, steps=None):
    """
    AgentConfig for one agent element of a train section.
    ::

        >>> agentConfig("cartpole", dict(loss="histogram", k=4, l="none"), steps=500)
        <AgentConfig histogram nonlinear k:4 l:none lr:0.001 steps:500 >
    """
    overrides = {}
    for name, value in agent.items():
        if name == "loss" or value is None:
            continue
        if name not in AGENT_KEYWORDS:
            raise ConfigurationError("unknown agent attribute", name)
        overrides[AGENT_KEYWORDS[name]] = None if value == "none" else value
    if steps is not None:
        overrides["totalSteps"] = int(steps)
    return AgentConfig.defaults(envName, agent["loss"], **overrides)


def noiseInjection(injection):
    """
    NoiseInjection for one injection element.
    ::

        >>> noiseInjection(dict(site="next", kind="pgd", strength=0.1, iterations=3, stepSize=None))
        <NoiseInjection next pgd:0.1 >
    """
    if injection["kind"] == "none":
        return NoiseInjection("none")
    if injection["kind"] == "gaussian":
        noise = ContinuousNoise.gaussian(injection["strength"])
    else:
        noise = ContinuousNoise.pgd(injection["strength"], injection["iterations"], injection["stepSize"])
    return NoiseInjection(injection["site"], noise)


def _agentLabels(agents):
    losses = [agent["loss"] for agent in agents]
    return [loss if losses.count(loss) == 1 else "%s-%d" % (loss, index) for index, loss in enumerate(losses)]


def _trainRun(job):
    masterSeed, runId, params = job
    config = agentConfig(params["env"], params["agent"], params["steps"])
    env = makeEnv(params["env"])
    result = trainAgent(config, env, noiseInjection(params["injection"]),
                        runSeedSequence(masterSeed, "train/%d" % runId))
    return dict(returns=list(result.returns), gradNormMeans=list(result.gradNormMeans),
                gradNormMax=result.gradNormMax, bound=result.bound, boundViolations=result.boundViolations,
                diverged=result.diverged, steps=result.steps, updates=result.updates,
                final=result.finalPerformance(params["finalFraction"]))


EPISODE_COLUMNS = ["run", "agent", "kind", "strength", "site", "seed", "episode", "return", "gradNormMean"]
RUN_COLUMNS = ["run", "agent", "kind", "strength", "site", "seed", "episodes", "steps", "updates", "final",
               "diverged", "gradNormMax", "bound", "boundViolations"]
FINAL_COLUMNS = ["agent", "kind", "strength", "site", "runs", "finalMean", "finalStderr", "diverged"]


def runTrainingSweep(config, outputFolder, workers=1, verbose=False, logger=None, progressFunc=None):
    """
    Train every agent under every injection for every seed. Writes the
    per-episode log, the per-run table, the final-performance table and the
    smoothed curves, then checks the noise-free return, the histogram agent
    against the least-squares agent under noise, and divergence with noise
    at both sites.
    """
    params = config["train"]
    summary = RunSummary("train")
    labels = _agentLabels(params["agents"])
    jobs = []
    for agentIndex, agent in enumerate(params["agents"]):
        for injectionIndex, injection in enumerate(params["injections"]):
            for seed in range(params["seeds"]):
                jobParams = dict(env=params["env"], steps=params["steps"], agent=agent, injection=injection,
                                 finalFraction=params["finalFraction"], label=labels[agentIndex], seed=seed,
                                 group=(agentIndex, injectionIndex))
                jobs.append((config.seed, len(jobs), jobParams))
    results = mapRuns(_trainRun, jobs, workers, _progress(progressFunc, summary.name))
    episodes, runs = [], []
    for (masterSeed, runId, jobParams), result in zip(jobs, results):
        injection = jobParams["injection"]
        key = dict(agent=jobParams["label"], kind=injection["kind"], strength=injection["strength"],
                   site=injection["site"], seed=jobParams["seed"])
        for episode, (value, norm) in enumerate(zip(result["returns"], result["gradNormMeans"])):
            episodes.append(dict(key, run=runId, episode=episode + 1, gradNormMean=norm, **{"return": value}))
        runs.append(dict(key, run=runId, episodes=len(result["returns"]), steps=result["steps"],
                         updates=result["updates"], final=result["final"], diverged=result["diverged"],
                         gradNormMax=result["gradNormMax"], bound=result["bound"],
                         boundViolations=result["boundViolations"]))
        if result["diverged"] and verbose and logger:
            logger.info("run %d (%s %s %g %s seed %d) diverged", runId, key["agent"], key["kind"],
                        key["strength"], key["site"], key["seed"])
    episodesPath = _writeRows(os.path.join(outputFolder, "train-episodes.csv"), config, EPISODE_COLUMNS,
                              episodes, verbose, logger)
    summary.files.append(episodesPath)
    summary.files.append(_writeRows(os.path.join(outputFolder, "train-runs.csv"), config, RUN_COLUMNS, runs,
                                    verbose, logger))
    groups = []
    for agentIndex, agent in enumerate(params["agents"]):
        for injectionIndex, injection in enumerate(params["injections"]):
            members = [run for (masterSeed, runId, jobParams), run in zip(jobs, runs)
                       if jobParams["group"] == (agentIndex, injectionIndex)]
            finals = [run["final"] for run in members if not np.isnan(run["final"])]
            mean, stderr = meanAndStderr(finals)
            groups.append(dict(agent=labels[agentIndex], loss=agent["loss"], kind=injection["kind"],
                               strength=injection["strength"], site=injection["site"], runs=len(members),
                               finalMean=mean, finalStderr=stderr,
                               diverged=sum(1 for run in members if run["diverged"])))
    summary.files.append(_writeRows(os.path.join(outputFolder, "train-final.csv"), config, FINAL_COLUMNS,
                                    [dict((k, v) for k, v in group.items() if k != "loss") for group in groups],
                                    verbose, logger))
    summary.files.extend(emitPlotData(episodesPath, outputFolder, config, params["smoothing"]))
    _trainingChecks(summary, params, groups, runs)
    return _finish(summary, config, outputFolder, verbose, logger)


def _trainingChecks(summary, params, groups, runs):
    threshold = params["minimumReturn"]
    if threshold is None:
        threshold = NOISE_FREE_RETURN.get(params["env"])
    if threshold is not None:
        for group in groups:
            if group["kind"] == "none":
                summary.check("noise-free-return %s" % group["agent"], group["finalMean"] >= threshold,
                              "mean final return %.6g, target %g" % (group["finalMean"], threshold))
    byLoss = {}
    for group in groups:
        byLoss.setdefault(group["loss"], []).append(group)
    if "least_squares" in byLoss and "histogram" in byLoss:
        least = dict(((g["kind"], g["strength"], g["site"]), g) for g in byLoss["least_squares"])
        for group in byLoss["histogram"]:
            key = (group["kind"], group["strength"], group["site"])
            if group["kind"] == "none" or key not in least:
                continue
            other = least[key]
            margin = other["finalStderr"]
            summary.check("histogram-vs-least-squares %s %g %s" % key,
                          group["finalMean"] >= other["finalMean"] - margin,
                          "%.6g against %.6g - %.6g" % (group["finalMean"], other["finalMean"], margin))
    both = [run for run in runs if run["site"] == "both"]
    if both:
        diverged = [run for run in both if run["diverged"]]
        summary.check("both-site-divergence", not diverged,
                      "%d/%d runs with noise at both sites diverged" % (len(diverged), len(both)))
        summary.counterexamples.extend(diverged[:COUNTEREXAMPLE_LIMIT])
    bounded = [run for run in runs if run["bound"] is not None]
    if bounded:
        violations = sum(run["boundViolations"] for run in bounded)
        summary.check("histogram-gradient-bound", violations == 0,
                      "%d updates above k l L" % violations)


def emitPlotData(episodesPath, outputFolder, config=None, smoothing=10):
    """
    One file per curve from a per-episode log: x = episode, the smoothed
    mean return across runs and its standard error. When config is given,
    the log must carry its hash. Returns the paths written.
    """
    header, rows = readReport(episodesPath)
    configHash = header.get("config-hash", "")
    seed = int(header.get("master-seed", "0"))
    if config is not None and configHash != config.configHash():
        raise ConfigurationError("episode log was written for another config", episodesPath)
    curves = {}
    order = []
    for row in rows:
        key = (row["agent"], row["kind"], float(row["strength"]), row["site"])
        if key not in curves:
            curves[key] = {}
            order.append(key)
        curves[key].setdefault(row["run"], []).append(float(row["return"]))
    paths = []
    for key in order:
        x, mean, stderr = averageCurves(list(curves[key].values()), smoothing)
        path = os.path.join(outputFolder, "plot-%s-%s-%g-%s.csv" % key)
        with ReportWriter(path, configHash, seed, ["x", "mean", "stderr"]) as writer:
            for row in zip(x, mean, stderr):
                writer.writeRow(row)
        paths.append(path)
    return paths


RUNNERS = {
    "tabular-contract": runTabularContract,
    "td-analysis": runTdAnalysis,
    "grad-bounds": runGradBounds,
    "influence": runInfluence,
    "train": runTrainingSweep,
}
