"""Mobility-aware hybrid EKF/UKF localization over bistatic mmWave anchors."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    CsvFormatError,
    DegenerateGeometryError,
    NumericalError,
)
from .measurement import Anchor, Channel, MeasurementBundle, NoiseProfile  # noqa: F401
from .pipeline import HybridPipeline, MobilityMode, PipelineConfig  # noqa: F401
from .state_space import ProcessNoiseParams, StateEstimate  # noqa: F401
