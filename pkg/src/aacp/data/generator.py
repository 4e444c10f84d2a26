"""Procedural "children's painting" generator with closed-form attribute labels.

A painting is a flat background plus layered elements (disks, squares, triangles
and thick strokes). Each element draws its geometry, colour and texture from its
own RNG stream keyed by ``(seed, element index)``, so raising ``n_elements``
only appends elements and never changes the earlier ones.

Label rules (all on the 0-10 scale):

* brightness  = 10 * mean Rec.601 luma of the rendered 8-bit image
* excitement  = 10 * min(1, 3 * mean chroma), chroma = max - min channel
* roughness   = 10 * jitter
* singleness  = 10 * (1 - (distinct kinds drawn - 1) / 3)
* chaos       = 10 * min(1, n / 16) * (0.6 * scatter + 0.4 * (1 - symmetry))
* emptiness   = 10 * prod_i (1 - a_i), a_i the canvas fraction element i paints
                (uncovered fraction under independent placement)
* simplicity  = 10 * (1 - 0.7 * n / MAX_ELEMENTS - 0.3 * (distinct kinds - 1) / 3)
* regularity  = 10 * max(0, 1 - 4 * mean |Y - mirror(Y)|), Y the luma image
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import asdict, dataclass

import numpy as np

from .attributes import AttributeVector
from .records import PaintingRecord

GENERATOR_VERSION = "proc-paint/1"
MAX_ELEMENTS = 48
KINDS = ("disk", "square", "triangle", "stroke")
LUMA = np.array([0.299, 0.587, 0.114])
_GRID = 7


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    size: int = 64
    n_elements: int = 12
    kinds: int = 2
    jitter: float = 0.3
    saturation: float = 0.6
    lightness: float = 0.7
    background: float = 0.9
    symmetry: float = 0.3
    scatter: float = 0.5
    scale: float = 0.12

    def __post_init__(self):
        checks = {
            "size": 16 <= self.size <= 1024,
            "n_elements": 0 <= self.n_elements <= MAX_ELEMENTS,
            "kinds": 1 <= self.kinds <= len(KINDS),
            "jitter": 0.0 <= self.jitter <= 1.0,
            "saturation": 0.0 <= self.saturation <= 1.0,
            "lightness": 0.0 <= self.lightness <= 1.0,
            "background": 0.0 <= self.background <= 1.0,
            "symmetry": 0.0 <= self.symmetry <= 1.0,
            "scatter": 0.0 <= self.scatter <= 1.0,
            "scale": 0.03 <= self.scale <= 0.35,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise SpecError(f"generator spec out of range: {', '.join(f'{k}={getattr(self, k)!r}' for k in bad)}")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_spec(rng: np.random.Generator, size: int = 64) -> GeneratorSpec:
    """Draw a spec covering the documented ranges."""
    return GeneratorSpec(
        size=size,
        n_elements=int(rng.integers(1, 41)),
        kinds=int(rng.integers(1, len(KINDS) + 1)),
        jitter=float(rng.uniform(0.0, 1.0)),
        saturation=float(rng.uniform(0.0, 1.0)),
        lightness=float(rng.uniform(0.15, 1.0)),
        background=float(rng.uniform(0.0, 1.0)),
        symmetry=float(rng.uniform(0.0, 1.0)),
        scatter=float(rng.uniform(0.0, 1.0)),
        scale=float(rng.uniform(0.05, 0.2)),
    )


def _shape_mask(kind: str, yy, xx, cy, cx, r, angle, wobble, stroke_dx, stroke_dy):
    dy, dx = yy - cy, xx - cx
    theta = np.arctan2(dy, dx)
    radius = r * (1.0 + wobble(theta))
    if kind == "disk":
        return dy * dy + dx * dx <= radius * radius
    ca, sa = math.cos(angle), math.sin(angle)
    u, v = ca * dx + sa * dy, -sa * dx + ca * dy
    if kind == "square":
        half = radius * 0.85
        return (np.abs(u) <= half) & (np.abs(v) <= half)
    if kind == "triangle":
        # equilateral triangle inscribed in the (wobbled) radius
        ok = np.ones_like(u, dtype=bool)
        for k in range(3):
            phi = angle + k * 2.0 * math.pi / 3.0
            ok &= (math.cos(phi) * dx + math.sin(phi) * dy) <= 0.5 * radius
        return ok
    # stroke: thick segment through the centre
    length = math.hypot(stroke_dx, stroke_dy) or 1.0
    tx, ty = stroke_dx / length, stroke_dy / length
    along = dx * tx + dy * ty
    across = -dx * ty + dy * tx
    return (np.abs(along) <= r * 1.6) & (np.abs(across) <= 0.22 * radius + 0.8)


def _element(spec: GeneratorSpec, seed: int, index: int, yy, xx):
    rng = np.random.default_rng([seed, index, 917])
    size = spec.size
    kind_id = int(rng.integers(spec.kinds))
    kind = KINDS[kind_id]

    cell = index % (_GRID * _GRID)
    gy, gx = divmod(cell, _GRID)
    grid_pos = ((gy + 0.5) / _GRID * size, (gx + 0.5) / _GRID * size)
    rand_pos = (rng.uniform(0, size), rng.uniform(0, size))
    cy = (1 - spec.scatter) * grid_pos[0] + spec.scatter * rand_pos[0]
    cx = (1 - spec.scatter) * grid_pos[1] + spec.scatter * rand_pos[1]
    r = max(1.5, spec.scale * size * (0.6 + 0.8 * rng.uniform()))
    angle = float(rng.uniform(0, 2 * math.pi))
    sdx, sdy = rng.normal(size=2)

    freq = int(rng.integers(3, 9))
    phase = float(rng.uniform(0, 2 * math.pi))
    amp = 0.35 * spec.jitter

    def wobble(theta):
        return amp * np.sin(freq * theta + phase)

    mask = _shape_mask(kind, yy, xx, cy, cx, r, angle, wobble, sdx, sdy)

    hue = float(rng.uniform())
    sat = spec.saturation * (0.7 + 0.3 * rng.uniform())
    val = spec.lightness * (0.6 + 0.4 * rng.uniform())
    base = np.array(colorsys.hsv_to_rgb(hue, sat, val))
    texture = rng.normal(size=(size, size, 1)) * (0.35 * spec.jitter)
    color = np.clip(base[None, None, :] * (1.0 + texture) + 0.5 * texture * (1 - val), 0.0, 1.0)

    mirrored = bool(rng.uniform() < spec.symmetry)
    return kind_id, mask, color, mirrored


def render(spec: GeneratorSpec, seed: int) -> tuple[np.ndarray, dict]:
    """Rasterise ``spec`` and return the 8-bit image plus layout measurements."""
    size = spec.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    canvas = np.full((size, size, 3), spec.background, dtype=np.float64)
    # mirrored elements copy the left half's texture onto the right half
    left_half = (xx < size / 2)[..., None]
    kinds_used: set[int] = set()
    area_fractions = []
    for i in range(spec.n_elements):
        kind_id, mask, color, mirrored = _element(spec, seed, i, yy, xx)
        if mirrored:
            mask = mask | mask[:, ::-1]
            color = np.where(left_half, color, color[:, ::-1])
        canvas = np.where(mask[..., None], color, canvas)
        kinds_used.add(kind_id)
        area_fractions.append(float(mask.mean()))
    image = np.round(canvas * 255.0).astype(np.uint8)
    return image, {"kinds_used": len(kinds_used), "area_fractions": area_fractions}


def mean_luma(image: np.ndarray) -> float:
    return float((image.astype(np.float64) / 255.0 @ LUMA).mean())


def mean_chroma(image: np.ndarray) -> float:
    px = image.astype(np.float64) / 255.0
    return float((px.max(axis=-1) - px.min(axis=-1)).mean())


def mirror_asymmetry(image: np.ndarray) -> float:
    y = image.astype(np.float64) / 255.0 @ LUMA
    return float(np.abs(y - y[:, ::-1]).mean())


def label_painting(spec: GeneratorSpec, image: np.ndarray, layout: dict) -> AttributeVector:
    n = spec.n_elements
    kinds_term = (max(layout["kinds_used"], 1) - 1) / (len(KINDS) - 1)
    uncovered = math.prod(1.0 - a for a in layout["area_fractions"])
    values = dict(
        brightness=10.0 * mean_luma(image),
        excitement=10.0 * min(1.0, 3.0 * mean_chroma(image)),
        roughness=10.0 * spec.jitter,
        singleness=10.0 * (1.0 - kinds_term),
        chaos=10.0 * min(1.0, n / 16) * (0.6 * spec.scatter + 0.4 * (1.0 - spec.symmetry)),
        emptiness=10.0 * uncovered,
        simplicity=10.0 * (1.0 - 0.7 * n / MAX_ELEMENTS - 0.3 * kinds_term),
        regularity=10.0 * max(0.0, 1.0 - 4.0 * mirror_asymmetry(image)),
    )
    return AttributeVector(**{k: min(10.0, max(0.0, v)) for k, v in values.items()})


def generate_synthetic_painting(spec: GeneratorSpec, seed: int, record_id: str | None = None,
                                experts: int = 0, expert_noise: float = 0.5) -> PaintingRecord:
    """Render one painting and label it.

    With ``experts > 0`` the record carries that many noisy copies of the
    analytic label (Gaussian noise with std ``expert_noise``, clipped to the
    scale) instead of the exact label, to exercise expert averaging.
    """
    if not isinstance(spec, GeneratorSpec):
        raise SpecError("spec must be a GeneratorSpec")
    image, layout = render(spec, seed)
    label = label_painting(spec, image, layout)
    if experts > 0:
        rng = np.random.default_rng([seed, 7919])
        base = label.to_array()
        annotations = [
            AttributeVector.from_sequence(np.clip(base + rng.normal(0, expert_noise, base.size), 0, 10))
            for _ in range(experts)
        ]
    else:
        annotations = [label]
    provenance = {
        "kind": "synthetic",
        "seed": int(seed),
        "generator": GENERATOR_VERSION,
        "spec": spec.to_dict(),
    }
    return PaintingRecord(
        id=record_id or f"syn-{seed:08d}",
        image=image,
        annotations=annotations,
        provenance=provenance,
    )


def generate_corpus(count: int, seed: int, size: int = 64, experts: int = 0) -> list[PaintingRecord]:
    """``count`` paintings whose specs and render seeds derive from ``seed``."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        spec = sample_spec(rng, size)
        item_seed = int(rng.integers(0, 2**31 - 1))
        records.append(generate_synthetic_painting(spec, item_seed, f"syn-{seed}-{i:05d}", experts=experts))
    return records
