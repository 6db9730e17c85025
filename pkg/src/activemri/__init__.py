"""Self-supervised active sampling for accelerated MRI.

A reconstruction network and a line-sampling policy network are trained
together; Monte Carlo tree search over k-space line patterns produces the
training targets for the policy.
"""

from .signal import (
    DimensionError,
    dft2_forward,
    dft2_inverse,
    mask_spectrum,
    psnr,
    zero_fill_reconstruct,
)
from .sampling import lpf_pattern, uniform_random_pattern, vds_pattern

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "dft2_forward",
    "dft2_inverse",
    "mask_spectrum",
    "psnr",
    "zero_fill_reconstruct",
    "lpf_pattern",
    "uniform_random_pattern",
    "vds_pattern",
]
