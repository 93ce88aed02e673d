"""Depth from focal stacks: a numpy autodiff core, a defocus renderer, and a
transformer encoder with recurrent stack fusion."""

from .config import RunConfig, load_config
from .model import FocusDepthNet, ModelConfig
from .optics import CameraModel, FocalStack, Scene

__all__ = ["CameraModel", "FocalStack", "FocusDepthNet", "ModelConfig", "RunConfig", "Scene", "load_config"]
__version__ = "0.1.0"
