"""Floating-point image container and shared numerical primitives.

Images are numpy float32 arrays of shape (H, W, C) with C in {1, 3, 4}.
Pixel values live in [0, 1] for the enhancement pipeline and in [-1, 1]
inside the restoration subnet. Single-channel planes may also be passed
as 2-D (H, W) arrays where noted; outputs mirror the input's layout.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.fft
from PIL import Image


from .errors import InvalidInputError

VALID_CHANNELS = (1, 3, 4)

# Burt-Adelson 5-tap binomial kernel used by all pyramid resampling.
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float32) / 16.0

# Default bilateral grid: 16x16 spatial cells x 8 range cells.
DEFAULT_GRID = (16, 16, 8)


def ensure_image(img: np.ndarray, channels: int | None = None, name: str = "image") -> np.ndarray:
    """Validate an (H, W, C) image array, returning it unchanged."""
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        raise InvalidInputError(f"{name} must be a 3-D (H, W, C) array")
    if img.shape[2] not in VALID_CHANNELS:
        raise InvalidInputError(f"{name} has {img.shape[2]} channels, expected one of {VALID_CHANNELS}")
    if channels is not None and img.shape[2] != channels:
        raise InvalidInputError(f"{name} has {img.shape[2]} channels, expected {channels}")
    return img


def ensure_rgb(img: np.ndarray) -> np.ndarray:
    """Coerce a decoded image to three channels.

    Grayscale replicates across RGB; an alpha channel is dropped. The
    result is contiguous so downstream numerics cannot depend on whether
    the source had an alpha plane (fft paths differ on strided views).
    """
    ensure_image(img)
    if img.shape[2] == 1:
        return np.repeat(img, 3, axis=2)
    if img.shape[2] == 4:
        return np.ascontiguousarray(img[:, :, :3])
    return img


def _as_plane(img: np.ndarray, name: str = "image") -> tuple[np.ndarray, bool]:
    """Accept (H, W) or (H, W, 1) and return the 2-D plane plus a had-axis flag."""
    if img.ndim == 2:
        return img, False
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0], True
    raise InvalidInputError(f"{name} must be single-channel, got shape {img.shape}")


def bright_channel(img: np.ndarray) -> np.ndarray:
    """Per-pixel maximum over the three color channels, as (H, W, 1)."""
    ensure_image(img, channels=3)
    return np.max(img, axis=2, keepdims=True)


def space_to_depth(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Pack each factor x factor block into channels at reduced resolution.

    Block positions map to channels in raster order (top-left, top-right,
    bottom-left, bottom-right for factor 2): out channel p*C + c holds
    position p of input channel c.
    """
    ensure_image(img)
    h, w, c = img.shape
    if h % factor or w % factor:
        raise InvalidInputError(f"dimensions {h}x{w} not divisible by {factor}")
    x = img.reshape(h // factor, factor, w // factor, factor, c)
    x = x.transpose(0, 2, 1, 3, 4)  # (H/f, W/f, fy, fx, C)
    return np.ascontiguousarray(x.reshape(h // factor, w // factor, factor * factor * c))


def depth_to_space(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Exact inverse of :func:`space_to_depth`."""
    if img.ndim != 3 or img.shape[2] % (factor * factor):
        raise InvalidInputError(f"channel count {img.shape} not divisible by {factor * factor}")
    h, w, c4 = img.shape
    c = c4 // (factor * factor)
    x = img.reshape(h, w, factor, factor, c)
    x = x.transpose(0, 2, 1, 3, 4)  # (H/f, fy, W/f, fx, C)
    return np.ascontiguousarray(x.reshape(h * factor, w * factor, c))


def dct2(img: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a single-channel plane."""
    plane, had_axis = _as_plane(img, "dct2 input")
    out = scipy.fft.dctn(plane, type=2, norm="ortho")
    out = out.astype(plane.dtype, copy=False)
    return out[:, :, None] if had_axis else out


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2`."""
    plane, had_axis = _as_plane(coeffs, "idct2 input")
    out = scipy.fft.idctn(plane, type=2, norm="ortho")
    out = out.astype(plane.dtype, copy=False)
    return out[:, :, None] if had_axis else out


def _filt1d(x: np.ndarray, axis: int) -> np.ndarray:
    """5-tap binomial filter along one axis with edge clamping."""
    pad = [(0, 0)] * x.ndim
    pad[axis] = (2, 2)
    xp = np.pad(x, pad, mode="edge")
    n = x.shape[axis]
    sl = [slice(None)] * x.ndim
    out = np.zeros_like(x)
    for i, k in enumerate(_BINOMIAL5):
        sl[axis] = slice(i, i + n)
        out += k * xp[tuple(sl)]
    return out


def _blur(img: np.ndarray) -> np.ndarray:
    return _filt1d(_filt1d(img, 0), 1)


def _pyr_down(img: np.ndarray) -> np.ndarray:
    return _blur(img)[::2, ::2]


def _pyr_up(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Upsample to the requested shape: zero-stuff 2x, crop, blur, renormalize.

    Dividing by the blurred sample mask keeps constants exactly constant at
    image borders where edge clamping would otherwise skew the stuffed grid.
    """
    h, w = img.shape[:2]
    oh, ow = out_hw
    up = np.zeros((2 * h, 2 * w) + img.shape[2:], dtype=img.dtype)
    up[::2, ::2] = img
    mask = np.zeros((2 * h, 2 * w), dtype=img.dtype)
    mask[::2, ::2] = 1.0
    num = _blur(up[:oh, :ow])
    den = _blur(mask[:oh, :ow])
    if num.ndim == 3:
        den = den[:, :, None]
    return num / den


@dataclass
class PyramidF:
    """Multi-scale decomposition; level 0 matches the source dimensions."""

    levels: list[np.ndarray]
    kind: str  # "gaussian" | "laplacian"


def _check_pyramid_depth(shape: tuple[int, ...], levels: int) -> None:
    if levels < 1:
        raise InvalidInputError("pyramid needs at least one level")
    if min(shape[0], shape[1]) < 2 ** (levels - 1):
        raise InvalidInputError(
            f"{levels} levels too deep for a {shape[0]}x{shape[1]} image"
        )


def gaussian_pyramid(img: np.ndarray, levels: int) -> PyramidF:
    _check_pyramid_depth(img.shape, levels)
    out = [img]
    for _ in range(levels - 1):
        out.append(_pyr_down(out[-1]))
    return PyramidF(out, "gaussian")


def laplacian_pyramid(img: np.ndarray, levels: int) -> PyramidF:
    """Band-pass decomposition; the last level is the Gaussian residual."""
    gauss = gaussian_pyramid(img, levels).levels
    out = []
    for i in range(levels - 1):
        out.append(gauss[i] - _pyr_up(gauss[i + 1], gauss[i].shape[:2]))
    out.append(gauss[-1])
    return PyramidF(out, "laplacian")


def reconstruct(pyr: PyramidF) -> np.ndarray:
    """Invert :func:`laplacian_pyramid`."""
    if pyr.kind != "laplacian":
        raise InvalidInputError("only laplacian pyramids reconstruct")
    img = pyr.levels[-1]
    for lvl in reversed(pyr.levels[:-1]):
        img = lvl + _pyr_up(img, lvl.shape[:2])
    return img


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample (half-pixel centers, edges clamped)."""
    squeeze = img.ndim == 2
    plane_in = img[:, :, None] if squeeze else img
    h, w = plane_in.shape[:2]
    oh, ow = out_hw
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(plane_in.dtype)[:, None, None]
    fx = (xs - x0).astype(plane_in.dtype)[None, :, None]
    top = plane_in[y0][:, x0] * (1 - fx) + plane_in[y0][:, x1] * fx
    bot = plane_in[y1][:, x0] * (1 - fx) + plane_in[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return out[:, :, 0] if squeeze else out


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool by an integer factor (dimensions must divide)."""
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise InvalidInputError(f"dimensions {h}x{w} not divisible by {factor}")
    x = img.reshape(h // factor, factor, w // factor, factor, *img.shape[2:])
    return x.mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# Bilateral grid upsampling
# ---------------------------------------------------------------------------

@dataclass
class BilateralSliceContext:
    """Everything needed to apply the transpose of one bilateral upsample."""

    lowres_hw: tuple[int, int]
    splat_cells: np.ndarray  # (8, n_low) linear cell indices
    splat_w: np.ndarray      # (8, n_low)
    den: np.ndarray          # (n_cells,) total splat weight per cell
    fill_src: np.ndarray     # (n_cells,) nearest nonempty source per cell
    slice_cells: np.ndarray  # (8, n_pix)
    slice_w: np.ndarray      # (8, n_pix)


def _trilinear_corners(
    gx: np.ndarray, gy: np.ndarray, gz: np.ndarray, grid: tuple[int, int, int]
) -> tuple[np.ndarray, np.ndarray]:
    """Linear cell indices and weights of the 8 cells around each sample."""
    gw, gh, gr = grid
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, gw - 1)
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, gh - 1)
    z0 = np.clip(np.floor(gz).astype(np.int64), 0, gr - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    z1 = np.minimum(z0 + 1, gr - 1)
    fx = gx - x0
    fy = gy - y0
    fz = gz - z0
    cells = []
    weights = []
    for cy, wy in ((y0, 1 - fy), (y1, fy)):
        for cx, wx in ((x0, 1 - fx), (x1, fx)):
            for cz, wz in ((z0, 1 - fz), (z1, fz)):
                cells.append((cy * gw + cx) * gr + cz)
                weights.append(wy * wx * wz)
    return np.stack(cells), np.stack(weights)


def _nearest_fill_indices(nonempty: np.ndarray, shape3d: tuple[int, int, int]) -> np.ndarray:
    """Map every cell to its nearest nonempty cell (squared Euclidean index
    distance, ties broken by lexicographic (y, x, z) order)."""
    n_cells = nonempty.shape[0]
    fill_src = np.arange(n_cells)
    if nonempty.all():
        return fill_src
    occupied3d = nonempty.reshape(shape3d)
    src_coords = np.argwhere(occupied3d)  # lexicographic order
    dst_coords = np.argwhere(~occupied3d)
    d2 = ((dst_coords[:, None, :] - src_coords[None, :, :]) ** 2).sum(axis=2)
    best = src_coords[np.argmin(d2, axis=1)]
    dst_lin = np.ravel_multi_index(tuple(dst_coords.T), shape3d)
    src_lin = np.ravel_multi_index(tuple(best.T), shape3d)
    fill_src[dst_lin] = src_lin
    return fill_src


def _grid_coords(
    h: int, w: int, guide_plane: np.ndarray, grid: tuple[int, int, int], sigma_r: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    gw, gh, gr = grid
    xs = ((np.arange(w) + 0.5) / w) * gw - 0.5
    ys = ((np.arange(h) + 0.5) / h) * gh - 0.5
    gx = np.clip(np.broadcast_to(xs[None, :], (h, w)), 0, gw - 1).ravel()
    gy = np.clip(np.broadcast_to(ys[:, None], (h, w)), 0, gh - 1).ravel()
    gz = np.clip(guide_plane.astype(np.float64).ravel() / sigma_r, 0, gr - 1)
    return gx, gy, gz


def bilateral_upsample(
    lowres: np.ndarray,
    guide: np.ndarray,
    grid: tuple[int, int, int] = DEFAULT_GRID,
    sigma_r: float | None = None,
    return_context: bool = False,
):
    """Edge-aware upsample of a low-res plane guided by a full-res intensity plane.

    Scatter-averages lowres values into an (x, y, guide-intensity) grid,
    fills empty cells from their nearest nonempty neighbor, then trilinearly
    slices at full resolution using the full-res guide. For a fixed guide the
    operator is linear in the lowres values; :func:`bilateral_upsample_transpose`
    applies its adjoint.
    """
    low_plane, low_axis = _as_plane(lowres, "lowres")
    guide_plane, _ = _as_plane(guide, "guide")
    h, w = low_plane.shape
    gh_full, gw_full = guide_plane.shape
    if h > gh_full or w > gw_full:
        raise InvalidInputError("lowres must be spatially smaller than the guide")
    gw, gh, gr = grid
    if sigma_r is None:
        sigma_r = 1.0 / (gr - 1)

    guide_low = resize_bilinear(guide_plane, (h, w))
    sp_cells, sp_w = _trilinear_corners(
        *_grid_coords(h, w, guide_low, grid, sigma_r), grid
    )
    n_cells = gw * gh * gr
    den = np.zeros(n_cells)
    num = np.zeros(n_cells)
    vals = low_plane.astype(np.float64).ravel()
    for corner in range(8):
        np.add.at(den, sp_cells[corner], sp_w[corner])
        np.add.at(num, sp_cells[corner], sp_w[corner] * vals)

    nonempty = den > 1e-12
    avg = np.zeros(n_cells)
    avg[nonempty] = num[nonempty] / den[nonempty]

    fill_src = _nearest_fill_indices(nonempty, (gh, gw, gr))
    filled = avg[fill_src]

    sl_cells, sl_w = _trilinear_corners(
        *_grid_coords(gh_full, gw_full, guide_plane, grid, sigma_r), grid
    )
    out = np.zeros(gh_full * gw_full)
    for corner in range(8):
        out += sl_w[corner] * filled[sl_cells[corner]]
    out = out.reshape(gh_full, gw_full).astype(low_plane.dtype)
    out_img = out[:, :, None] if low_axis else out

    if not return_context:
        return out_img
    ctx = BilateralSliceContext((h, w), sp_cells, sp_w, den, fill_src, sl_cells, sl_w)
    return out_img, ctx


def bilateral_upsample_transpose(dout: np.ndarray, ctx: BilateralSliceContext) -> np.ndarray:
    """Adjoint of :func:`bilateral_upsample` w.r.t. the lowres input."""
    d_plane, had_axis = _as_plane(dout, "dout")
    dg = np.zeros(ctx.den.shape[0])
    flat = d_plane.astype(np.float64).ravel()
    for corner in range(8):
        np.add.at(dg, ctx.slice_cells[corner], ctx.slice_w[corner] * flat)
    davg = np.zeros_like(dg)
    np.add.at(davg, ctx.fill_src, dg)
    nonempty = ctx.den > 1e-12
    dnum = np.zeros_like(davg)
    dnum[nonempty] = davg[nonempty] / ctx.den[nonempty]
    h, w = ctx.lowres_hw
    dlow = np.zeros(h * w)
    for corner in range(8):
        dlow += ctx.splat_w[corner] * dnum[ctx.splat_cells[corner]]
    dlow = dlow.reshape(h, w).astype(d_plane.dtype)
    return dlow[:, :, None] if had_axis else dlow


# ---------------------------------------------------------------------------
# Image IO
# ---------------------------------------------------------------------------

def from_uint8(arr: np.ndarray) -> np.ndarray:
    out = (arr.astype(np.float32) / 255.0)
    if out.ndim == 2:
        out = out[:, :, None]
    return out


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Decode a PNG or JPEG file into a float32 [0, 1] image."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return from_uint8(arr)


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    return from_uint8(arr)


def _to_pil(img: np.ndarray) -> Image.Image:
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        return Image.fromarray(arr[:, :, 0], mode="L")
    return Image.fromarray(arr)


def write_png(img: np.ndarray, path) -> None:
    ensure_image(img)
    _to_pil(img).save(path, format="PNG")


def encode_png(img: np.ndarray) -> bytes:
    ensure_image(img)
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def encode_jpeg(img: np.ndarray, quality: int) -> bytes:
    """Baseline JPEG, 4:2:0 chroma subsampling, libjpeg quality scaling."""
    ensure_image(img)
    if not 1 <= quality <= 100:
        raise InvalidInputError(f"jpeg quality {quality} outside [1, 100]")
    buf = io.BytesIO()
    pil = _to_pil(img)
    if pil.mode == "L":
        pil.save(buf, format="JPEG", quality=quality)
    else:
        pil.save(buf, format="JPEG", quality=quality, subsampling=2)
    return buf.getvalue()
