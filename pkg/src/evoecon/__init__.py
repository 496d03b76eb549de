"""Agent-based macroeconomic simulator driven by a social accounting matrix."""

from .engine import SimConfig, deploy, run, step

__version__ = "0.1.0"
__all__ = ["SimConfig", "deploy", "run", "step", "__version__"]
