"""riskgate: risk-gatekept multi-agent highway simulation.

Layers, bottom up: exact discrete free-energy numerics (``freeenergy``),
deterministic driving behavior (``driving``), stakeholder rewards
(``rewards``), the seeded world simulator (``world``), Monte Carlo risk
gatekeepers (``gatekeeper``), and the batch experiment harness
(``harness``) with its ``riskgate`` CLI.
"""

from . import driving, freeenergy, gatekeeper, harness, rewards, world

__version__ = "0.1.0"

__all__ = ["driving", "freeenergy", "gatekeeper", "harness", "rewards", "world", "__version__"]
