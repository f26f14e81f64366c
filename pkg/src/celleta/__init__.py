"""Route travel-time estimation from cellular spatial-temporal knowledge."""
from .errors import CellEtaError, DataError, ValidationError
from .geo import CellIndex, GpsPoint, GridSpec
from .models import ModelBundle
from .pipeline import PipelineConfig
from .predict import EtaResult, RouteRequest, estimate_route

__version__ = "0.1.0"

__all__ = [
    "CellEtaError", "CellIndex", "DataError", "EtaResult", "GpsPoint", "GridSpec", "ModelBundle",
    "PipelineConfig", "RouteRequest", "ValidationError", "estimate_route", "__version__",
]
