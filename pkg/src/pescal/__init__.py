"""Offline policy learning in confounded mediated MDPs.

Tabular CAL and PESCAL learners, FQI and CQL baselines, exact dynamic
programming oracles for the synthetic model, and a seeded experiment harness.
"""
from .m2dp import *  # noqa: F401,F403
from .dataset import *  # noqa: F401,F403
from .nuisance import *  # noqa: F401,F403
from .oracle import *  # noqa: F401,F403
from .learners import *  # noqa: F401,F403
from .evaluation import *  # noqa: F401,F403
from .experiments import *  # noqa: F401,F403
from . import m2dp, dataset, nuisance, oracle, learners, evaluation, experiments

__version__ = "0.1.0"

__all__ = (m2dp.__all__ + dataset.__all__ + nuisance.__all__ + oracle.__all__
           + learners.__all__ + evaluation.__all__ + experiments.__all__)
