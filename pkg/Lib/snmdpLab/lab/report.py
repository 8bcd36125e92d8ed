# -*- coding: utf-8 -*-

"""
    Report files.

    Every report is a CSV file that starts with comment lines carrying the
    config hash and the master seed, followed by a header row. Reals are
    written with 17 significant digits and lines end in LF, so reruns with
    the same config produce the same bytes.
"""

import csv
import math
import os

import numpy as np

from snmdpLab.objects.error import ConfigurationError

__all__ = [
    "ReportWriter",
    "readReport",
    "formatValue",
    "trailingSmooth",
    "meanAndStderr",
    "averageCurves",
    "RunSummary",
]

SMOOTHING_WINDOW = 10


def formatValue(value):
    """
    Text form of one report cell.
    ::

        >>> formatValue(0.1), formatValue(3), formatValue(True), formatValue(None)
        ('0.10000000000000001', '3', '1', '')
        >>> formatValue(float("inf")), formatValue(np.float64(2.5))
        ('inf', '2.5')
    """
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return "%d" % value
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


class ReportWriter(object):
    """
    Writer for one CSV report.

    *   path:       path of the file
    *   configHash: hex digest of the experiment config
    *   seed:       master seed
    *   columns:    names of the columns
    """

    def __init__(self, path, configHash, seed, columns, verbose=False, logger=None):
        self.path = path
        self.configHash = configHash
        self.seed = seed
        self.columns = list(columns)
        self.verbose = verbose
        self.logger = logger
        self.rowCount = 0
        folder = os.path.dirname(path)
        if folder and not os.path.exists(folder):
            os.makedirs(folder)
        self._file = open(path, "w", newline="", encoding="utf-8")
        self._file.write("# config-hash: %s\n" % configHash)
        self._file.write("# master-seed: %d\n" % seed)
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(self.columns)

    def __repr__(self):
        return "<%s %s rows:%d >" % (self.__class__.__name__, os.path.basename(self.path), self.rowCount)

    def __enter__(self):
        return self

    def __exit__(self, *args):
        self.close()

    def writeRow(self, row):
        """ Write a row given as a dict keyed by column or as a sequence. """
        if isinstance(row, dict):
            unknown = set(row) - set(self.columns)
            if unknown:
                raise ConfigurationError("row has unknown columns", sorted(unknown))
            row = [row.get(name) for name in self.columns]
        elif len(row) != len(self.columns):
            raise ConfigurationError("row does not match the columns", len(row))
        self._writer.writerow([formatValue(value) for value in row])
        self.rowCount += 1

    def writeRows(self, rows):
        for row in rows:
            self.writeRow(row)

    def close(self):
        if self._file.closed:
            return
        self._file.close()
        if self.verbose and self.logger:
            self.logger.info("Wrote %d rows to %s", self.rowCount, self.path)


def readReport(path):
    """
    Read a report back. Returns (header, rows): header maps the comment keys
    to their values, rows are dicts of strings keyed by column.
    """
    header = {}
    with open(path, newline="", encoding="utf-8") as f:
        lines = f.read().split("\n")
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        elif line:
            body.append(line)
    if not body:
        raise ConfigurationError("report has no header row", path)
    reader = csv.DictReader(body)
    return header, list(reader)


def trailingSmooth(values, window=SMOOTHING_WINDOW):
    """
    Mean over the trailing window, shorter at the start of the series.
    ::

        >>> trailingSmooth([1.0, 2.0, 3.0, 4.0], window=2).tolist()
        [1.0, 1.5, 2.5, 3.5]
    """
    if window < 1:
        raise ConfigurationError("smoothing window must be positive", window)
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    total = np.concatenate([[0.0], np.cumsum(values)])
    ends = np.arange(1, values.size + 1)
    starts = np.maximum(0, ends - window)
    return (total[ends] - total[starts]) / (ends - starts)


def meanAndStderr(values):
    """
    Mean and standard error of the mean; one value has error 0.
    ::

        >>> meanAndStderr([1.0, 2.0, 3.0])
        (2.0, 0.5773502691896258)
        >>> meanAndStderr([4.0])
        (4.0, 0.0)
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def averageCurves(curves, window=SMOOTHING_WINDOW):
    """
    Smooth every run's curve, then average across runs over the episodes
    all runs reached. Returns (x, mean, stderr) with x counting from 1.
    ::

        >>> x, mean, stderr = averageCurves([[1.0, 3.0], [3.0, 5.0, 7.0]], window=1)
        >>> x.tolist(), mean.tolist(), stderr.tolist()
        ([1, 2], [2.0, 4.0], [1.0, 1.0])
    """
    if not curves:
        raise ConfigurationError("no curves to average")
    length = min(len(curve) for curve in curves)
    smoothed = np.array([trailingSmooth(curve, window)[:length] for curve in curves])
    mean = smoothed.mean(axis=0)
    if len(curves) > 1:
        stderr = smoothed.std(axis=0, ddof=1) / math.sqrt(len(curves))
    else:
        stderr = np.zeros(length)
    return np.arange(1, length + 1), mean, stderr


class RunSummary(object):
    """
    Outcome of one subcommand: named checks with their verdicts, the files
    written and the counterexamples of failed checks.
    """

    def __init__(self, name):
        self.name = name
        self.checks = []
        self.files = []
        self.counterexamples = []

    def __repr__(self):
        return "<%s %s checks:%d passed:%s >" % (
            self.__class__.__name__, self.name, len(self.checks), self.passed)

    def check(self, name, passed, detail=""):
        self.checks.append((name, bool(passed), detail))
        return bool(passed)

    @property
    def passed(self):
        return all(passed for name, passed, detail in self.checks)

    def lines(self):
        """ Human readable verdict lines. """
        lines = []
        for name, passed, detail in self.checks:
            lines.append("%s %s: %s %s" % (self.name, name, "pass" if passed else "FAIL", detail))
        for example in self.counterexamples:
            lines.append("%s counterexample: %s" % (self.name, example))
        return lines

    def write(self, path, configHash, seed):
        with ReportWriter(path, configHash, seed, ["check", "passed", "detail"]) as writer:
            for row in self.checks:
                writer.writeRow(row)
        self.files.append(path)
