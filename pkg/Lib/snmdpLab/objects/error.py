# -*- coding: utf-8 -*-

"""
    Lab errors
"""

class LabError(Exception):
    def __init__(self, msg, obj=None):
        self.msg = msg
        self.obj = obj
    def __str__(self):
        if self.obj is None:
            return repr(self.msg)
        return repr(self.msg) + repr(self.obj)

class ConfigurationError(LabError):
    """ Bad dimensions, bad probabilities, bad parameters or a bad document. """

class ConvergenceError(LabError):
    """ An iteration cap was exceeded. """

class AnalysisError(LabError):
    """ The input does not admit the requested analysis. """

class NumericError(LabError):
    """ A loss or an update produced a value we can not use. """

class PropertyFailure(LabError):
    """ A verification found a counterexample. obj holds it. """
