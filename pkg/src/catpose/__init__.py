# __init__.py

"""Joint object category and 3D pose estimation with category-dependent pose heads."""

from .errors import CatPoseError
from .model import IntegratedModel, ModelConfig

__version__ = "0.1.0"

__all__ = ["CatPoseError", "IntegratedModel", "ModelConfig"]
