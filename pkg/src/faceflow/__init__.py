"""faceflow: landmark-guided flow warping for instance-level facial attribute transfer."""

__version__ = "0.1.0"

from .numerics import default_dtype, set_default_dtype, using_dtype

__all__ = ["default_dtype", "set_default_dtype", "using_dtype", "__version__"]
