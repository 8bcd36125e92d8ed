#!/usr/bin/env python

from setuptools import setup

setup(name = "snmdpLab",
      version = "0.1",
      description = "Numerical lab for reinforcement learning with noisy state observations: noisy Bellman operators, TD convergence under feature noise, histogram value heads.",
      license = "BSD 3 Clause",
      packages = [
              "snmdpLab",
              "snmdpLab.objects",
              "snmdpLab.control",
              "snmdpLab.lab",
              "snmdpLab.test",
      ],
      package_dir = {"":"Lib"},
      python_requires = ">=3.8",
      install_requires = [
              "numpy>=1.22",
              "scipy>=1.8",
      ],
      extras_require = {
              "test": ["pytest"],
      },
      entry_points = {
              "console_scripts": ["snmdp-lab = snmdpLab.lab.cli:main"],
      },
)
