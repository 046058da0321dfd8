"""Three-user asynchronous MDI quantum conferencing: simulation and analysis."""

__version__ = "0.1.0"

from .params import (  # noqa: F401
    InvalidConfig,
    IntensityLevel,
    ProtocolParams,
    SecurityParams,
    SequencePlan,
    SimulatorParams,
    load_config,
    validate_config,
)
from .sifting import CountsTable  # noqa: F401
from .finitekey import KeyAnalysisResult, key_length  # noqa: F401
