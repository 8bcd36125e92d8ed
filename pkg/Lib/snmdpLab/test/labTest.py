"""

Tests for experiment documents, the report files and the snmdp-lab command.

"""

import doctest
import os
import tempfile

import numpy as np

from snmdpLab.lab import build
from snmdpLab.lab.cli import main
from snmdpLab.lab.document import ExperimentDocumentWriter, ExperimentDocumentReader, ExperimentConfig
from snmdpLab.lab.report import ReportWriter, RunSummary, readReport
from snmdpLab.lab.runners import EPISODE_COLUMNS, _trainingChecks, emitPlotData, runTabularContract
from snmdpLab.objects.mdp import TabularMDP
from snmdpLab.objects.noise import TabularNoise


def _write(text):
    path = os.path.join(tempfile.mkdtemp(), "experiment.snmdp")
    with open(path, "w") as f:
        f.write(text)
    return path


def _read(text):
    return ExperimentDocumentReader(_write(text)).read()


def testWriterValidation():
    """
    >>> folder = tempfile.mkdtemp()
    >>> ExperimentDocumentWriter(os.path.join(folder, "a.snmdp"), seed=0)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'master seed must be a positive integer'0
    >>> w = ExperimentDocumentWriter(os.path.join(folder, "a.snmdp"), seed=1)
    >>> w.addSection("sweep")
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'unknown subcommand''sweep'
    >>> w.addInfluence(bogus=1)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'unknown attribute for influence''bogus'
    >>> w.addInfluence(instances=1)
    >>> w.addInfluence(instances=2)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'section is already present''influence'
    >>> w.addAgent(loss="histogram")
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'start the train section first'
    """


def testReaderValidation():
    """
    >>> _read('<experiment format="2" seed="1"/>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'unsupported format version'2
    >>> _read('<experiment format="1"/>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'experiment has no master seed'
    >>> _read('<experiment format="1" seed="1"><sweep/></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'unknown element''sweep'
    >>> _read('<experiment format="1" seed="1"><influence gamma="1.0"/></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'bad value for influence.gamma''1.0 (above range)'
    >>> _read('<experiment format="1" seed="1"><tabular-contract orders="0.5"/></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'bad value for tabular-contract.orders''0.5 (Wasserstein order must be at least 1)'
    >>> _read('<experiment format="1" seed="1"><train><agent k="4"/></train></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'agent needs a loss attribute'
    >>> _read('<experiment format="1" seed="1"><influence/><influence/></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'section appears more than once''influence'
    >>> ExperimentDocumentReader("/nonexistent/experiment.snmdp").read()  # doctest: +ELLIPSIS
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'can not read the experiment document'...
    """


def testReaderDefaults():
    """
    >>> config = _read('<experiment format="1" seed="5"><tabular-contract trials="3"/><train/></experiment>')
    >>> config
    <ExperimentConfig seed:5 sections:tabular-contract,train >
    >>> params = config["tabular-contract"]
    >>> params["trials"], params["gamma"], params["orders"], params["cap"], params["fixedPointCap"]
    (3, 0.9, [1.0, inf], 512, 64)
    >>> train = config["train"]
    >>> [agent["loss"] for agent in train["agents"]]
    ['least_squares', 'histogram']
    >>> [(i["kind"], i["strength"], i["site"]) for i in train["injections"]]
    [('none', 0.0, 'none'), ('gaussian', 0.05, 'both'), ('gaussian', 0.1, 'both'), ('pgd', 0.05, 'both'), ('pgd', 0.1, 'both')]

    A noise-free injection is normalized, and the document seed can be overridden.

    >>> path = _write('<experiment format="1" seed="5"><train matrix="none">'
    ...               '<injection site="next" kind="none" strength="0.3"/></train></experiment>')
    >>> config = ExperimentDocumentReader(path, seed=9).read()
    >>> config.seed, config["train"]["injections"]
    (9, [{'iterations': 3, 'kind': 'none', 'site': 'none', 'stepSize': None, 'strength': 0.0}])
    >>> config.configHash() == ExperimentDocumentReader(path, seed=10).read().configHash()
    False
    """


def testExplicitMdps():
    """
    >>> folder = tempfile.mkdtemp()
    >>> path = os.path.join(folder, "explicit.snmdp")
    >>> mdp = TabularMDP([[[0.0, 1.0]], [[1.0, 0.0]]], [[[1.0, 1.0]], [[0.0, 0.0]]], 0.5)
    >>> noise = TabularNoise([[0.5, 0.5], [0.0, 1.0]], [{0, 1}, {1}])
    >>> w = ExperimentDocumentWriter(path, seed=3)
    >>> w.addTabularMdp(mdp)
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'add the tabular-contract section first'
    >>> w.addTabularContract(trials=0, pairs=2, distributional=False)
    >>> w.addTabularMdp(mdp, noise=noise)
    >>> w.save()
    >>> config = ExperimentDocumentReader(path).read()
    >>> record = config["tabular-contract"]["mdps"][0]
    >>> record["noise"], record["policy"], record["mdp"]["gamma"]
    ({'kernel': [[0.5, 0.5], [0.0, 1.0]], 'allowed': [[0, 1], [1]]}, {'probs': [[1.0], [1.0]]}, 0.5)

    The explicit MDP is numbered after the random trials, of which there
    are none; the adversarial and property batteries follow trials down to
    zero.

    >>> out = os.path.join(folder, "out")
    >>> summary = runTabularContract(config, out)
    >>> summary
    <RunSummary tabular-contract checks:3 passed:True >
    >>> [name for name, passed, detail in summary.checks]
    ['expectation-random', 'expectation-adversarial', 'expectation-fixed-point']
    >>> header, rows = readReport(os.path.join(out, "tabular-contract.csv"))
    >>> sorted(set((row["run"], row["states"], row["actions"]) for row in rows)), len(rows)
    ([('0', '2', '1')], 5)
    >>> os.path.exists(os.path.join(out, "tabular-contract-properties.csv"))
    False

    >>> _read('<experiment format="1" seed="1"><tabular-contract>'
    ...       '<mdp states="2" actions="1" transition="0,1,1" reward="0,0,0,0"/></tabular-contract></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'mdp transition needs 4 entries'3
    >>> _read('<experiment format="1" seed="1"><tabular-contract>'
    ...       '<mdp states="2" actions="1" transition="0,1,1,0" reward="0,0,0,0" allowed="0|1"/>'
    ...       '</tabular-contract></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'mdp allowed sets need a kernel'
    >>> _read('<experiment format="1" seed="1"><tabular-contract><policy/></tabular-contract></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'unknown element in tabular-contract''policy'
    >>> empty = _write('<experiment format="1" seed="1"><tabular-contract trials="0"/></experiment>')
    >>> main(["tabular-contract", "--config", empty, "--out", os.path.join(folder, "empty")])
    0
    """


EXPERIMENTS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "..", "..", "experiments")


def testShippedExperiments():
    """
    >>> configs = dict((name, ExperimentDocumentReader(os.path.join(EXPERIMENTS, name)).read())
    ...                for name in sorted(os.listdir(EXPERIMENTS)) if name.endswith(".snmdp"))
    >>> [(name, sorted(config)) for name, config in sorted(configs.items())]
    [('analysis.snmdp', ['grad-bounds', 'influence', 'td-analysis', 'tabular-contract']), ('cartpole.snmdp', ['train']), ('mountaincar.snmdp', ['train']), ('sites.snmdp', ['train'])]
    >>> [len(configs[name]["train"]["injections"]) for name in ("cartpole.snmdp", "mountaincar.snmdp", "sites.snmdp")]
    [5, 5, 4]
    >>> configs["analysis.snmdp"]["tabular-contract"]["orders"]
    [1.0, 2.0, inf]
    """


def testCommandExitCodes():
    """
    >>> path = _write('<experiment format="1" seed="5"><influence instances="0"/></experiment>')
    >>> out = os.path.join(os.path.dirname(path), "out")
    >>> main(["influence", "--config", path, "--seed", "0", "--out", out])
    1
    >>> main(["td-analysis", "--config", path, "--out", out])
    1
    >>> main(["plot-data", "--config", path, "--out", out])
    1
    >>> main(["influence", "--config", path, "--out", out, "--workers", "1"])
    influence influence-rate: pass 0/0 instances, smallest inf
    influence corollary-shrink: pass 0/0 instances, smallest inf
    0
    >>> header, rows = readReport(os.path.join(out, "influence.csv"))
    >>> header["master-seed"], len(header["config-hash"]), rows
    ('5', 64, [])
    """


def testDeterministicReports():
    """
    The reports are the same bytes whatever the number of workers.

    >>> path = _write('<experiment format="1" seed="11"><influence instances="3"/>'
    ...               '<grad-bounds ks="2,4" ls="1" modes="linear" trials="50" inputScales="1,1000" checks="1"/>'
    ...               '</experiment>')
    >>> folder = os.path.dirname(path)
    >>> first = build(path, os.path.join(folder, "one"), workers=1, verbose=False)
    >>> second = build(path, os.path.join(folder, "two"), workers=2, verbose=False)
    >>> sorted(first[0])
    ['grad-bounds', 'influence']
    >>> names = ["influence.csv", "influence-summary.csv", "grad-bounds.csv", "grad-bounds-summary.csv"]
    >>> same = []
    >>> for name in names:
    ...     with open(os.path.join(folder, "one", name), "rb") as a, open(os.path.join(folder, "two", name), "rb") as b:
    ...         same.append(a.read() == b.read())
    >>> same
    [True, True, True, True]
    >>> first[0]["grad-bounds"].passed
    True
    """


def _finalGroup(loss, mean, stderr):
    return dict(agent=loss, loss=loss, kind="gaussian", strength=0.1, site="both",
                finalMean=mean, finalStderr=stderr)


def _histogramVerdict(histogramMean, leastSquaresMean, stderr=10.0):
    summary = RunSummary("train")
    groups = [_finalGroup("least_squares", leastSquaresMean, stderr), _finalGroup("histogram", histogramMean, stderr)]
    _trainingChecks(summary, dict(minimumReturn=None, env="mountaincar"), groups, [])
    return summary.checks


def testHistogramAgainstLeastSquares():
    """
    The histogram agent may trail by one standard error of the
    least-squares mean, no more.

    >>> _histogramVerdict(162.0, 175.0)
    [('histogram-vs-least-squares gaussian 0.1 both', False, '162 against 175 - 10')]
    >>> _histogramVerdict(165.0, 175.0)
    [('histogram-vs-least-squares gaussian 0.1 both', True, '165 against 175 - 10')]
    >>> _histogramVerdict(180.0, 175.0)[0][1]
    True
    >>> _read('<experiment format="1" seed="1"><tabular-contract fixedPointCap="1"/></experiment>')
    Traceback (most recent call last):
    ...
    snmdpLab.objects.error.ConfigurationError: 'bad value for tabular-contract.fixedPointCap''1 (must be at least 2)'
    """


def _episodeLog(folder, runs):
    path = os.path.join(folder, "train-episodes.csv")
    with ReportWriter(path, "0" * 64, 1, EPISODE_COLUMNS) as writer:
        for run, (agent, kind, strength, site, returns) in enumerate(runs):
            for episode, value in enumerate(returns):
                writer.writeRow({"run": run, "agent": agent, "kind": kind, "strength": strength, "site": site,
                                 "seed": run, "episode": episode + 1, "return": value, "gradNormMean": 0.0})
    return path


def testPlotData():
    """
    Three runs of one curve are cut to the shortest and averaged; a
    single run has no error band.

    >>> folder = tempfile.mkdtemp()
    >>> path = _episodeLog(folder, [
    ...     ("histogram", "gaussian", 0.05, "both", [1.0, 2.0, 3.0]),
    ...     ("histogram", "gaussian", 0.05, "both", [3.0, 4.0, 5.0]),
    ...     ("histogram", "gaussian", 0.05, "both", [5.0, 6.0, 7.0, 8.0]),
    ...     ("least_squares", "none", 0.0, "none", [10.0, 20.0]),
    ... ])
    >>> paths = emitPlotData(path, folder, smoothing=1)
    >>> [os.path.basename(p) for p in paths]
    ['plot-histogram-gaussian-0.05-both.csv', 'plot-least_squares-none-0-none.csv']
    >>> header, rows = readReport(paths[0])
    >>> [row["x"] for row in rows], [float(row["mean"]) for row in rows]
    (['1', '2', '3'], [3.0, 4.0, 5.0])
    >>> bool(np.allclose([float(row["stderr"]) for row in rows], 2.0 / np.sqrt(3.0)))
    True
    >>> header, rows = readReport(paths[1])
    >>> [float(row["mean"]) for row in rows], [float(row["stderr"]) for row in rows]
    ([10.0, 20.0], [0.0, 0.0])

    >>> try:
    ...     emitPlotData(path, folder, ExperimentConfig(1, {}))
    ... except Exception as error:
    ...     print(error.msg)
    episode log was written for another config
    """


if __name__ == "__main__":
    doctest.testmod()
