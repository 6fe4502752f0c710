"""Target-free camera/LiDAR extrinsic calibration by mutual-information maximization."""
from ._accel import USE_NUMBA
from .geometry import ExtrinsicParams, PinholeCamera, DoubleSphereCamera, params_to_transform
from .features import Mode, ImageKind, Frame, PointCloud, FeatureImage
from .mi import BinningConfig, MIObjectiveContext, objective

__version__ = "0.1.0"
