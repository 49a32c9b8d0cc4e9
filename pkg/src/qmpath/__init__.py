"""Most-likely paths, Monte Carlo trajectories and Zeno-regime phase space
for a continuously measured qubit."""

__version__ = "0.1.0"

from .core import QubitParams, SimConfig  # noqa: E402

__all__ = ["QubitParams", "SimConfig", "__version__"]
