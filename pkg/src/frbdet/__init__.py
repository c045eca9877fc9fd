"""Scene-text detection with Gabor orientation filters and a Feature Representation Block."""
from .config import RunConfig, load_config
from .geometry import DetectionBox, TextPolygon, locality_aware_nms, polygon_iou
from .model import FRBDetector, ModelConfig

__all__ = ["RunConfig", "load_config", "DetectionBox", "TextPolygon", "locality_aware_nms",
           "polygon_iou", "FRBDetector", "ModelConfig"]
__version__ = "0.1.0"
