"""Line-sampled Cartesian acquisition model and the PSNR measure.

Images are float arrays of shape ``(channels, side, side)``; a single
channel holds a real image, two channels hold the real and imaginary parts
of a complex image. Bare ``(side, side)`` arrays are accepted as real
images. Spectra are complex ``(side, side)`` arrays with the DC bin at
``[0, 0]`` (no fftshift). A line mask is a boolean vector with one entry
per k-space row.
"""

import numpy as np

__all__ = [
    "DimensionError",
    "ZeroReferenceError",
    "PSNR_SATURATION",
    "as_image",
    "to_complex",
    "from_complex",
    "dft2_forward",
    "dft2_inverse",
    "mask_spectrum",
    "zero_fill_reconstruct",
    "psnr",
]

#: Returned by :func:`psnr` for an exact match.
PSNR_SATURATION = float(np.finfo(np.float64).max)


class DimensionError(ValueError):
    """Raised when array shapes are incompatible with the acquisition model."""


class ZeroReferenceError(ValueError):
    """Raised when a PSNR reference image is identically zero."""


def as_image(img):
    """Return ``img`` as a ``(channels, side, side)`` float array."""
    img = np.asarray(img)
    if np.iscomplexobj(img):
        raise DimensionError("images are real arrays; use from_complex for complex data")
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise DimensionError(f"expected (channels, side, side) image, got shape {img.shape}")
    c, h, w = img.shape
    if h == 0 or w == 0:
        raise DimensionError("empty image")
    if h != w:
        raise DimensionError(f"image must be square, got {h}x{w}")
    if c not in (1, 2):
        raise DimensionError(f"image must have 1 or 2 channels, got {c}")
    return img.astype(np.float64, copy=False) if img.dtype.kind != "f" else img


def to_complex(img):
    img = as_image(img)
    if img.shape[0] == 1:
        return img[0].astype(np.complex128)
    return img[0] + 1j * img[1]


def from_complex(z, channels=2):
    """Split a complex grid into a ``(channels, side, side)`` image.

    ``channels=1`` keeps only the real part, which is exact when the
    underlying signal is known to be real.
    """
    z = np.asarray(z)
    if channels == 1:
        return np.ascontiguousarray(z.real)[None]
    if channels == 2:
        return np.stack([z.real, z.imag])
    raise DimensionError(f"channels must be 1 or 2, got {channels}")


def _check_grid(grid):
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.shape[0] == 0:
        raise DimensionError(f"spectral grid must be square and nonempty, got shape {grid.shape}")
    return grid


def dft2_forward(img):
    """Unitary 2D DFT of an image, returned as a complex ``(side, side)`` grid."""
    return np.fft.fft2(to_complex(img), norm="ortho")


def dft2_inverse(grid, channels=2):
    """Inverse of :func:`dft2_forward`.

    The result is dual-channel by default; pass ``channels=1`` to keep the
    real channel when the source is known to be real.
    """
    grid = _check_grid(grid)
    return from_complex(np.fft.ifft2(grid, norm="ortho"), channels)


def _check_mask(mask, side):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (side,):
        raise DimensionError(f"mask of shape {mask.shape} does not match side {side}")
    return mask


def mask_spectrum(grid, mask):
    """Zero every k-space row whose mask entry is false."""
    grid = _check_grid(grid)
    mask = _check_mask(mask, grid.shape[0])
    return np.where(mask[:, None], grid, 0)


def zero_fill_reconstruct(img, mask):
    """Inverse DFT of the masked spectrum of ``img``.

    The output keeps the channel count of the input, so a real image gives
    the real part of the aliased backprojection.
    """
    img = as_image(img)
    return dft2_inverse(mask_spectrum(dft2_forward(img), mask), channels=img.shape[0])


def psnr(z, x):
    """Peak signal-to-noise ratio of ``z`` against reference ``x`` in dB.

    The peak is ``max |x|`` and the noise level is the RMS residual over all
    elements. An exact match returns :data:`PSNR_SATURATION`.
    """
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape:
        raise DimensionError(f"shape mismatch {z.shape} vs {x.shape}")
    peak = np.max(np.abs(x))
    if peak == 0:
        raise ZeroReferenceError("PSNR reference image is identically zero")
    rms = np.linalg.norm((z - x).ravel()) / np.sqrt(x.size)
    if rms == 0:
        return PSNR_SATURATION
    return float(-20.0 * np.log10(rms / peak))
