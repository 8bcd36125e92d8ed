# -*- coding: utf-8 -*-

"""

snmdpLab: a numerical lab for reinforcement learning with noisy state
observations.

*   objects/    tabular and linear analysis: noisy Bellman operators,
                Wasserstein contraction, TD convergence, influence, heads
*   control/    classic control tasks and the DQN / histogram agents
*   lab/        experiment documents, runners, reports and the snmdp-lab command

"""

__version__ = "0.1"

from snmdpLab.objects.mdp import TabularMDP, Policy
from snmdpLab.objects.noise import TabularNoise, ContinuousNoise
