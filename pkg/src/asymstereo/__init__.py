"""Unsupervised stereo matching for resolution-asymmetric image pairs."""

from .datasets import StereoSample, make_sample, random_dot_samples
from .degradation import DegradationSpec, GaussianKernelSpec, degrade
from .imagecore import DegenerateInputError, DisparityMap, ImageFormatError
from .losses import LossConfig
from .metrics import end_point_error, three_pixel_error
from .network import NetworkConfig, StereoNet
from .trainer import TrainConfig, self_boost, train_stage

__version__ = "0.1.0"
