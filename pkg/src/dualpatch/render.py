"""Image model, patch placement, EOT transforms, and dual-modal rendering.

The visible pipeline keeps every step linear (or piecewise linear) in the
texture values: bilinear resampling, additive brightness, zero-padded
Gaussian blur, clamping, and bilinear paste sampling. Each step therefore
has an exact adjoint, which texture optimization uses to backpropagate
detector gradients onto the texture without an autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geometry import BitMask, PolygonShape, Rect, rasterize, require_valid

VISIBLE = "visible"
INFRARED = "infrared"

MAX_AREA_FRACTION = 0.30
DEFAULT_TEXTURE_SIZE = (128, 128)  # (height, width)


@dataclass(frozen=True)
class ImagePlane:
    """Single image: (H, W, 3) visible or (H, W) infrared, values in [0, 1]."""

    values: np.ndarray = field(repr=False)
    modality: str = VISIBLE

    def __post_init__(self):
        v = self.values
        if self.modality == VISIBLE:
            if v.ndim != 3 or v.shape[2] != 3:
                raise ValueError("visible plane must have shape (H, W, 3)")
        elif self.modality == INFRARED:
            if v.ndim != 2:
                raise ValueError("infrared plane must have shape (H, W)")
        else:
            raise ValueError(f"unknown modality {self.modality!r}")
        if v.dtype != np.float64:
            v = v.astype(np.float64)
            object.__setattr__(self, "values", v)
        if v.size and (float(v.min()) < 0.0 or float(v.max()) > 1.0):
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.modality == INFRARED else 3

    @property
    def size(self) -> tuple[int, int]:
        """(width, height) raster size."""
        return (self.width, self.height)


@dataclass(frozen=True)
class TextureGrid:
    """Patch color field: (H, W, 3) values in [0, 1]."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = self.values
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError("texture must have shape (H, W, 3)")
        if v.dtype != np.float64:
            object.__setattr__(self, "values", v.astype(np.float64))
            v = self.values
        if float(v.min()) < 0.0 or float(v.max()) > 1.0:
            raise ValueError("texture values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def uniform(value: float = 0.5, size: tuple[int, int] = DEFAULT_TEXTURE_SIZE) -> "TextureGrid":
        h, w = size
        return TextureGrid(np.full((h, w, 3), value, dtype=np.float64))


@dataclass(frozen=True)
class PatchSpec:
    """Shape + texture + area budget: the complete patch."""

    shape: PolygonShape
    texture: TextureGrid
    area_fraction: float

    def __post_init__(self):
        require_valid(self.shape)
        if not 0.0 < self.area_fraction <= MAX_AREA_FRACTION:
            raise ValueError(f"area_fraction must lie in (0, {MAX_AREA_FRACTION}]")


@dataclass(frozen=True)
class EotConfig:
    """Sampling intervals for the physical-robustness transforms."""

    rotation: tuple[float, float] = (-math.radians(20.0), math.radians(20.0))
    scale: tuple[float, float] = (0.9, 1.1)
    brightness: tuple[float, float] = (-0.1, 0.1)
    blur_sigma: tuple[float, float] = (0.0, 1.5)

    def __post_init__(self):
        for name in ("rotation", "scale", "brightness", "blur_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"inverted interval for {name}: ({lo}, {hi})")
        if self.scale[0] <= 0.0:
            raise ValueError("scale interval must be positive")
        if self.blur_sigma[0] < 0.0:
            raise ValueError("blur sigma must be non-negative")

    @staticmethod
    def identity() -> "EotConfig":
        return EotConfig((0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (0.0, 0.0))


@dataclass(frozen=True)
class EotTransform:
    rotation: float = 0.0
    scale: float = 1.0
    brightness_delta: float = 0.0
    blur_sigma: float = 0.0

    @property
    def is_identity(self) -> bool:
        return (
            self.rotation == 0.0
            and self.scale == 1.0
            and self.brightness_delta == 0.0
            and self.blur_sigma == 0.0
        )


@dataclass(frozen=True)
class HotParams:
    """Infrared rendering of the activated patch region."""

    mode: str = "fixed"  # "fixed": set to v_hot; "additive": clamp(pixel + delta)
    v_hot: float = 0.9
    delta: float = 0.5

    def __post_init__(self):
        if self.mode not in ("fixed", "additive"):
            raise ValueError(f"unknown hot mode {self.mode!r}")
        if not 0.0 <= self.v_hot <= 1.0:
            raise ValueError("v_hot must lie in [0, 1]")


def placement_rect(
    person_box: Rect,
    area_fraction: float,
    image_size: tuple[int, int] | None = None,
) -> tuple[float, Rect]:
    """Patch placement for one person: (target pixel area, anchor square).

    The anchor is the square of side sqrt(target_area), horizontally
    centered on the box with its centroid at 25% of box height (upper
    torso). target_area is always area_fraction * w * h; when image_size
    is given the anchor is additionally intersected with the image.
    """
    if person_box.w <= 0.0 or person_box.h <= 0.0:
        raise ValueError("degenerate person box")
    if not 0.0 < area_fraction <= MAX_AREA_FRACTION:
        raise ValueError(f"area_fraction must lie in (0, {MAX_AREA_FRACTION}]")
    target_area = area_fraction * person_box.w * person_box.h
    side = math.sqrt(target_area)
    cx = person_box.x + person_box.w / 2.0
    cy = person_box.y + 0.25 * person_box.h
    anchor = Rect(cx - side / 2.0, cy - side / 2.0, side, side)
    if image_size is not None:
        anchor = anchor.intersect(Rect(0.0, 0.0, float(image_size[0]), float(image_size[1])))
    return target_area, anchor


def sample_eot(rng: np.random.Generator, config: EotConfig) -> EotTransform:
    """Draw one transform uniformly from the configured intervals."""
    rotation = float(rng.uniform(*config.rotation))
    scale = float(rng.uniform(*config.scale))
    brightness = float(rng.uniform(*config.brightness))
    blur = float(rng.uniform(*config.blur_sigma))
    return EotTransform(rotation, scale, brightness, blur)


# ---------------------------------------------------------------------------
# Transform forward/adjoint machinery


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _correlate_zero_pad(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along axis with zero padding (self-adjoint for
    symmetric kernels, which makes the blur its own gradient operator)."""
    radius = (len(kernel) - 1) // 2
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    for tap, weight in enumerate(kernel):
        d = tap - radius
        src_lo, src_hi = max(0, d), min(n, n + d)
        dst_lo, dst_hi = max(0, -d), min(n, n - d)
        if src_lo >= src_hi:
            continue
        src = [slice(None)] * arr.ndim
        dst = [slice(None)] * arr.ndim
        src[axis] = slice(src_lo, src_hi)
        dst[axis] = slice(dst_lo, dst_hi)
        out[tuple(dst)] += weight * arr[tuple(src)]
    return out


def _blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return arr
    kernel = _gaussian_kernel(sigma)
    return _correlate_zero_pad(_correlate_zero_pad(arr, kernel, axis=1), kernel, axis=0)


def _bilinear_taps(sx: np.ndarray, sy: np.ndarray, width: int, height: int, clamp_edge: bool):
    """Tap indices/weights for bilinear sampling at (sx, sy) pixel coords.

    With clamp_edge=False out-of-bounds taps get zero weight (transparent
    fill); with clamp_edge=True coordinates are clamped into the grid.
    """
    if clamp_edge:
        sx = np.clip(sx, 0.0, width - 1.0)
        sy = np.clip(sy, 0.0, height - 1.0)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1

    weights = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ]
    coords = [(y0, x0), (y0, x1), (y1, x0), (y1, x1)]
    taps = []
    for (ty, tx), w in zip(coords, weights):
        valid = (tx >= 0) & (tx < width) & (ty >= 0) & (ty < height)
        idx = np.where(valid, ty * width + tx, 0)
        taps.append((idx, np.where(valid, w, 0.0)))
    return taps


def _gather(flat_values: np.ndarray, taps) -> np.ndarray:
    out = None
    for idx, w in taps:
        contrib = flat_values[idx] * w[..., None]
        out = contrib if out is None else out + contrib
    return out


def _scatter(grad_out: np.ndarray, taps, width: int, height: int) -> np.ndarray:
    channels = grad_out.shape[-1]
    grad_flat = np.zeros((height * width, channels), dtype=np.float64)
    g2 = grad_out.reshape(-1, channels)
    for idx, w in taps:
        np.add.at(grad_flat, idx.reshape(-1), g2 * w.reshape(-1)[:, None])
    return grad_flat.reshape(height, width, channels)


@dataclass
class TransformTape:
    """Forward-pass record needed to backpropagate through apply_transform."""

    shape: tuple[int, int]
    resample_taps: list | None
    blur_sigma: float
    clamp_pass: np.ndarray | None


def _resample_taps(height: int, width: int, rotation: float, scale: float):
    cx, cy = width / 2.0, height / 2.0
    jj, ii = np.meshgrid(np.arange(width), np.arange(height))
    u = jj + 0.5 - cx
    v = ii + 0.5 - cy
    cos_t = math.cos(-rotation)
    sin_t = math.sin(-rotation)
    sx = (cos_t * u - sin_t * v) / scale + cx - 0.5
    sy = (sin_t * u + cos_t * v) / scale + cy - 0.5
    return _bilinear_taps(sx, sy, width, height, clamp_edge=False)


def apply_transform_tape(values: np.ndarray, t: EotTransform) -> tuple[np.ndarray, TransformTape]:
    """apply_transform on raw values, also returning the gradient tape."""
    h, w = values.shape[:2]
    out = values
    taps = None
    if t.rotation != 0.0 or t.scale != 1.0:
        taps = _resample_taps(h, w, t.rotation, t.scale)
        out = _gather(out.reshape(-1, out.shape[2]), taps)
    if t.brightness_delta != 0.0:
        out = out + t.brightness_delta
    if t.blur_sigma > 0.0:
        out = _blur(out, t.blur_sigma)
    clamp_pass = None
    if out is values:
        out = values.copy()
    else:
        clamp_pass = (out >= 0.0) & (out <= 1.0)
        out = np.clip(out, 0.0, 1.0)
    return out, TransformTape((h, w), taps, t.blur_sigma, clamp_pass)


def transform_vjp(tape: TransformTape, grad_out: np.ndarray) -> np.ndarray:
    """Pull a gradient over the transformed texture back to the input texture."""
    h, w = tape.shape
    g = grad_out
    if tape.clamp_pass is not None:
        g = g * tape.clamp_pass
    if tape.blur_sigma > 0.0:
        g = _blur(g, tape.blur_sigma)  # symmetric kernel: blur is self-adjoint
    if tape.resample_taps is not None:
        g = _scatter(g, tape.resample_taps, w, h)
    return np.ascontiguousarray(g, dtype=np.float64)


def apply_transform(texture: TextureGrid, t: EotTransform) -> TextureGrid:
    """Scale -> rotate -> brightness -> blur -> clamp; identity is bit-exact."""
    out, _ = apply_transform_tape(texture.values, t)
    return TextureGrid(out)


# ---------------------------------------------------------------------------
# Pasting


@dataclass
class PastePlan:
    """Transform-independent paste geometry for one person placement."""

    mask: BitMask
    rows: np.ndarray
    cols: np.ndarray
    taps: list  # bilinear taps into the (transformed) texture grid

    @property
    def pixel_count(self) -> int:
        return len(self.rows)


def build_paste_plan(
    shape: PolygonShape,
    person_box: Rect,
    area_fraction: float,
    raster_size: tuple[int, int],
    texture_size: tuple[int, int] = DEFAULT_TEXTURE_SIZE,
) -> PastePlan:
    """Rasterize the placed shape and precompute texture sampling taps.

    Taps map each mask pixel to texture coordinates via the anchor-to-grid
    affine; coordinates beyond the grid (shape spikes outside the anchor)
    clamp to the texture edge so every mask pixel is painted.
    """
    _, anchor = placement_rect(person_box, area_fraction)
    mask = rasterize(shape, anchor, raster_size)
    rows, cols = np.nonzero(mask.bits)
    tex_h, tex_w = texture_size
    sx = (cols + 0.5 - anchor.x) / anchor.w * tex_w - 0.5
    sy = (rows + 0.5 - anchor.y) / anchor.h * tex_h - 0.5
    taps = _bilinear_taps(sx, sy, tex_w, tex_h, clamp_edge=True)
    return PastePlan(mask=mask, rows=rows, cols=cols, taps=taps)


def paste_values(frame_values: np.ndarray, plan: PastePlan, texture_values: np.ndarray) -> np.ndarray:
    """Overwrite the plan's mask pixels with sampled texture values."""
    out = frame_values.copy()
    if plan.pixel_count:
        sampled = _gather(texture_values.reshape(-1, 3), plan.taps)
        # Tap weights can sum to 1 + 1 ulp; keep outputs inside [0, 1].
        out[plan.rows, plan.cols, :] = np.clip(sampled, 0.0, 1.0)
    return out


def paste_vjp(plan: PastePlan, grad_mask_pixels: np.ndarray, texture_size: tuple[int, int]) -> np.ndarray:
    """Scatter a gradient over the plan's mask pixels back onto the texture."""
    tex_h, tex_w = texture_size
    return _scatter(grad_mask_pixels, plan.taps, tex_w, tex_h)


def apply_visible(
    frame: ImagePlane,
    patch: PatchSpec,
    person_box: Rect,
    t: EotTransform = EotTransform(),
) -> ImagePlane:
    """Paste the EOT-transformed texture through the shape mask.

    Every mask pixel is overwritten (opacity 1); no pixel outside the
    rasterized mask is touched.
    """
    if frame.modality != VISIBLE:
        raise ValueError("apply_visible requires a visible-modality frame")
    plan = build_paste_plan(
        patch.shape,
        person_box,
        patch.area_fraction,
        frame.size,
        (patch.texture.height, patch.texture.width),
    )
    transformed, _ = apply_transform_tape(patch.texture.values, t)
    out = paste_values(frame.values, plan, transformed)
    return ImagePlane(out, VISIBLE)


def apply_infrared(
    frame: ImagePlane,
    shape: PolygonShape,
    person_box: Rect,
    hot: HotParams = HotParams(),
    area_fraction: float = MAX_AREA_FRACTION,
) -> ImagePlane:
    """Render the activated patch region into an infrared frame."""
    if frame.modality != INFRARED:
        raise ValueError("apply_infrared requires an infrared-modality frame")
    _, anchor = placement_rect(person_box, area_fraction)
    mask = rasterize(shape, anchor, frame.size)
    out = frame.values.copy()
    if hot.mode == "fixed":
        out[mask.bits] = hot.v_hot
    else:
        out[mask.bits] = np.clip(out[mask.bits] + hot.delta, 0.0, 1.0)
    return ImagePlane(out, INFRARED)


# ---------------------------------------------------------------------------
# PNG I/O


def save_image(plane: ImagePlane, path, bit_depth: int = 8) -> None:
    """Write a plane as PNG; infrared may be 8- or 16-bit grayscale."""
    if plane.modality == VISIBLE:
        arr = np.rint(plane.values * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
        return
    if bit_depth == 8:
        arr = np.rint(plane.values * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    elif bit_depth == 16:
        arr = np.rint(plane.values * 65535.0).astype(np.uint16)
        Image.fromarray(arr).save(path, format="PNG")  # uint16 -> I;16
    else:
        raise ValueError("bit_depth must be 8 or 16")


def load_image(path, modality: str) -> ImagePlane:
    """Read a PNG, linearly normalized to [0, 1]."""
    with Image.open(path) as img:
        if modality == VISIBLE:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        elif modality == INFRARED:
            if img.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(img, dtype=np.float64) / 65535.0
            else:
                arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
        else:
            raise ValueError(f"unknown modality {modality!r}")
    return ImagePlane(np.clip(arr, 0.0, 1.0), modality)


def save_texture(texture: TextureGrid, path) -> None:
    arr = np.rint(texture.values * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_texture(path) -> TextureGrid:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return TextureGrid(arr)
