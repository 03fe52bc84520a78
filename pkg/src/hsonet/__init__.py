"""Siamese change detection with scene-guided feature enhancement and an
example-reweighted loss for hard pixels."""
from importlib.metadata import PackageNotFoundError, version

from hsonet.config import BackboneConfig, EOLossConfig, SynthConfig, TrainConfig
from hsonet.model import HSONet

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source checkout
    __version__ = "0.1.0"

__all__ = ["HSONet", "BackboneConfig", "EOLossConfig", "SynthConfig", "TrainConfig", "__version__"]
