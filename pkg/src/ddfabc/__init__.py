"""One-cell learned absorbing boundary for 2D TEz FDTD, driven by a soft decision forest."""

__version__ = "0.1.0"

from .errors import ConfigError, InstabilityError, TrainingDiverged  # noqa: E402
from .fdtd import FieldGrid, GridSpec, PecSheet, SourceSpec, courant_limit, run  # noqa: E402
from .forest import Forest, forest_predict, load_forest, save_forest  # noqa: E402
from .pml import CpmlBoundary, PmlParams  # noqa: E402
from .scene import SimConfig  # noqa: E402

__all__ = ["ConfigError", "InstabilityError", "TrainingDiverged", "FieldGrid", "GridSpec",
           "PecSheet", "SourceSpec", "courant_limit", "run", "Forest", "forest_predict",
           "load_forest", "save_forest", "CpmlBoundary", "PmlParams", "SimConfig"]
