"""Synthetic scene + referring-expression generator and dataset file I/O.

Scenes are 64x64 RGB canvases with 2-6 non-overlapping colored shapes over
low-amplitude noise.  Each sample's expression is drawn from one of three
templates and is unique by construction: a brute-force semantics check over
every object must find exactly one referent, otherwise the draw is rejected
and the scene resampled under the next sub-seed.

Templates:
  T1  "the {color} {category}"                                (attributes)
  T2  "the {color} {category} in the {region} of the image"   (absolute pos)
  T3  "the {category} near the {color2} {category2}"          (proximity)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Box, mask_to_box

CANVAS = 64
CATEGORIES = ("circle", "square", "triangle")
COLOR_RGB = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.80, 0.15),
    "blue": (0.18, 0.18, 0.85),
    "yellow": (0.85, 0.80, 0.12),
}
COLORS = tuple(COLOR_RGB)
SIZE_RANGES = {"small": (4, 6), "large": (9, 12)}
REGIONS = ("left", "right", "top", "bottom", "center")

_PLACEMENT_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneSpec:
    """Generator configuration; dataset content is a pure function of
    (spec, n)."""

    seed: int
    min_objects: int = 2
    max_objects: int = 6
    template_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    noise_amplitude: float = 0.12

    def __post_init__(self):
        if not (2 <= self.min_objects <= self.max_objects <= 6):
            raise ValueError("object count range must sit within [2, 6]")
        if any(w < 0 for w in self.template_mix) or sum(self.template_mix) <= 0:
            raise ValueError("template mix must be non-negative and non-zero")

    def to_json(self) -> dict:
        return {"seed": self.seed, "min_objects": self.min_objects,
                "max_objects": self.max_objects,
                "template_mix": list(self.template_mix),
                "noise_amplitude": self.noise_amplitude}

    @staticmethod
    def from_json(d: dict) -> "SceneSpec":
        return SceneSpec(seed=d["seed"], min_objects=d["min_objects"],
                         max_objects=d["max_objects"],
                         template_mix=tuple(d["template_mix"]),
                         noise_amplitude=d["noise_amplitude"])


@dataclass(frozen=True)
class SceneObject:
    category: str
    color: str
    size: str
    radius: int
    cx: int
    cy: int


@dataclass(frozen=True)
class Expression:
    """A template instance; ``matches`` is the brute-force semantics."""

    template: str                 # "T1" | "T2" | "T3"
    text: str
    category: str
    color: str | None = None
    region: str | None = None
    anchor_color: str | None = None
    anchor_category: str | None = None

    def matches(self, obj: SceneObject, scene: list[SceneObject]) -> bool:
        if obj.category != self.category:
            return False
        if self.template == "T1":
            return obj.color == self.color
        if self.template == "T2":
            return obj.color == self.color and _in_region(obj, self.region)
        # T3: the unique anchor must be obj's strict nearest neighbour
        anchors = [o for o in scene
                   if o.color == self.anchor_color and o.category == self.anchor_category]
        if len(anchors) != 1 or anchors[0] is obj:
            return False
        anchor = anchors[0]
        d_anchor = _dist(obj, anchor)
        return all(_dist(obj, other) > d_anchor
                   for other in scene if other is not obj and other is not anchor)


@dataclass
class Sample:
    sample_id: str
    image: np.ndarray             # (64, 64, 3) float in [0, 1]
    expression: str
    gt_box: Box                   # pixel corners
    gt_mask: np.ndarray           # (64, 64) bool
    template: str | None = None   # in-memory generator metadata, not serialized
    scene: list[SceneObject] = field(default_factory=list)
    parsed: Expression | None = None


def _dist(a: SceneObject, b: SceneObject) -> float:
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def _reach(obj: SceneObject) -> float:
    # circumradius: squares/triangles extend to r*sqrt(2) at the corners
    return obj.radius if obj.category == "circle" else obj.radius * math.sqrt(2.0)


def _in_region(obj: SceneObject, region: str) -> bool:
    third = CANVAS / 3.0
    if region == "left":
        return obj.cx < third
    if region == "right":
        return obj.cx > 2 * third
    if region == "top":
        return obj.cy < third
    if region == "bottom":
        return obj.cy > 2 * third
    return third <= obj.cx <= 2 * third and third <= obj.cy <= 2 * third


def rasterize(obj: SceneObject) -> np.ndarray:
    """Binary 64x64 mask of one object, evaluated at pixel centres."""
    yy, xx = np.mgrid[0:CANVAS, 0:CANVAS]
    xx = xx + 0.5 - obj.cx
    yy = yy + 0.5 - obj.cy
    r = obj.radius
    if obj.category == "circle":
        return xx * xx + yy * yy <= r * r
    if obj.category == "square":
        return np.maximum(np.abs(xx), np.abs(yy)) <= r
    # upward triangle with apex (0, -r) and base corners (-r, r), (r, r)
    inside = (yy <= r) & (yy >= 2.0 * np.abs(xx) - r)
    return inside


def _place_objects(rng: np.random.Generator, spec: SceneSpec) -> list[SceneObject] | None:
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects: list[SceneObject] = []
    attempts = 0
    while len(objects) < count:
        attempts += 1
        if attempts > _PLACEMENT_ATTEMPTS:
            return None
        size = str(rng.choice(("small", "large")))
        lo, hi = SIZE_RANGES[size]
        radius = int(rng.integers(lo, hi + 1))
        cx = int(rng.integers(radius + 1, CANVAS - radius - 1))
        cy = int(rng.integers(radius + 1, CANVAS - radius - 1))
        cand = SceneObject(category=str(rng.choice(CATEGORIES)),
                           color=str(rng.choice(COLORS)),
                           size=size, radius=radius, cx=cx, cy=cy)
        if all(_dist(cand, o) > _reach(cand) + _reach(o) + 2 for o in objects):
            objects.append(cand)
    return objects


def _draw_expression(rng: np.random.Generator, spec: SceneSpec,
                     scene: list[SceneObject]) -> tuple[Expression, SceneObject] | None:
    mix = np.asarray(spec.template_mix, dtype=float)
    mix = mix / mix.sum()
    for _ in range(40):
        template = str(rng.choice(("T1", "T2", "T3"), p=mix))
        target = scene[int(rng.integers(len(scene)))]
        if template == "T1":
            expr = Expression("T1", f"the {target.color} {target.category}",
                              category=target.category, color=target.color)
        elif template == "T2":
            region = str(rng.choice(REGIONS))
            expr = Expression(
                "T2",
                f"the {target.color} {target.category} in the {region} of the image",
                category=target.category, color=target.color, region=region)
        else:
            others = [o for o in scene if o is not target]
            anchor = min(others, key=lambda o: _dist(target, o))
            expr = Expression(
                "T3",
                f"the {target.category} near the {anchor.color} {anchor.category}",
                category=target.category,
                anchor_color=anchor.color, anchor_category=anchor.category)
        referents = [o for o in scene if expr.matches(o, scene)]
        if len(referents) == 1 and referents[0] is target:
            return expr, target
    return None


def _render(rng: np.random.Generator, spec: SceneSpec,
            scene: list[SceneObject]) -> np.ndarray:
    image = rng.uniform(0.0, spec.noise_amplitude, (CANVAS, CANVAS, 3))
    for obj in scene:
        tint = np.asarray(COLOR_RGB[obj.color]) * rng.uniform(0.92, 1.0)
        image[rasterize(obj)] = np.clip(tint, 0.0, 1.0)
    return image.astype(np.float64)


def _make_sample(spec: SceneSpec, index: int) -> Sample:
    for attempt in range(64):
        seed_seq = np.random.SeedSequence(entropy=spec.seed,
                                          spawn_key=(index, attempt))
        rng = np.random.default_rng(seed_seq)
        scene = _place_objects(rng, spec)
        if scene is None:
            continue
        drawn = _draw_expression(rng, spec, scene)
        if drawn is None:
            continue
        expr, target = drawn
        mask = rasterize(target)
        box = mask_to_box(mask)
        image = _render(rng, spec, scene)
        sample = Sample(sample_id=f"s{index:06d}", image=image,
                        expression=expr.text, gt_box=box, gt_mask=mask,
                        template=expr.template, scene=scene, parsed=expr)
        assert box == mask_to_box(sample.gt_mask)
        return sample
    raise RuntimeError(f"could not build a unique-referent scene for sample {index}")


def generate(spec: SceneSpec, n: int) -> list[Sample]:
    """Produce ``n`` deterministic samples for the given spec."""
    if n <= 0:
        raise ValueError("sample count must be positive")
    return [_make_sample(spec, i) for i in range(n)]


# -- plain-text image formats ------------------------------------------------

def write_ppm(path: Path, image: np.ndarray) -> None:
    """Plain (P3) PPM with maxval 255 from a float [0,1] HxWx3 image."""
    q = np.clip(np.round(image * 255.0), 0, 255).astype(int)
    h, w, _ = q.shape
    body = "\n".join(" ".join(str(v) for v in row) for row in q.reshape(h, -1))
    path.write_text(f"P3\n{w} {h}\n255\n{body}\n")


def read_ppm(path: Path) -> np.ndarray:
    fields = _image_fields(path, "P3")
    w, h = fields[1], fields[2]
    maxval = fields[3]
    pix = np.asarray(fields[4:], dtype=np.float64)
    if pix.size != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} pixel values, got {pix.size}")
    return (pix / maxval).reshape(h, w, 3)


def write_pgm(path: Path, gray: np.ndarray) -> None:
    """Plain (P2) PGM with maxval 255 from a uint image or bool mask."""
    if gray.dtype == bool:
        gray = gray.astype(int) * 255
    q = np.clip(np.round(gray), 0, 255).astype(int)
    h, w = q.shape
    body = "\n".join(" ".join(str(v) for v in row) for row in q)
    path.write_text(f"P2\n{w} {h}\n255\n{body}\n")


def read_pgm(path: Path) -> np.ndarray:
    fields = _image_fields(path, "P2")
    w, h = fields[1], fields[2]
    pix = np.asarray(fields[4:], dtype=np.int64)
    if pix.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixel values, got {pix.size}")
    return pix.reshape(h, w)


def _image_fields(path: Path, magic: str) -> list:
    if not path.exists():
        raise FileNotFoundError(f"missing image file: {path}")
    raw = path.read_text().split()
    if not raw or raw[0] != magic:
        raise ValueError(f"{path}: expected {magic} header, found {raw[:1]}")
    return [raw[0]] + [int(v) for v in raw[1:]]


# -- dataset directory layout --------------------------------------------------

def write_dataset(samples: list[Sample], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        write_ppm(out_dir / "images" / f"{s.sample_id}.ppm", s.image)
        write_pgm(out_dir / "masks" / f"{s.sample_id}.pgm", s.gt_mask)
        lines.append(json.dumps({
            "id": s.sample_id,
            "expression": s.expression,
            "box": [s.gt_box.x1, s.gt_box.y1, s.gt_box.x2, s.gt_box.y2],
            "image_file": f"images/{s.sample_id}.ppm",
            "mask_file": f"masks/{s.sample_id}.pgm",
        }, sort_keys=True))
    (out_dir / "annotations.jsonl").write_text("\n".join(lines) + "\n")


def write_spec(spec: SceneSpec, out_dir: Path) -> None:
    (Path(out_dir) / "spec.json").write_text(
        json.dumps(spec.to_json(), sort_keys=True, indent=2) + "\n")


def read_dataset(in_dir: Path) -> list[Sample]:
    in_dir = Path(in_dir)
    ann = in_dir / "annotations.jsonl"
    if not ann.exists():
        raise FileNotFoundError(f"missing annotations file: {ann}")
    samples = []
    for line_no, line in enumerate(ann.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            sid = rec["id"]
            box = rec["box"]
            image = read_ppm(in_dir / rec["image_file"])
            mask_file = in_dir / rec["mask_file"]
            if not mask_file.exists():
                raise FileNotFoundError(
                    f"sample {sid}: missing mask file {rec['mask_file']}")
            mask = read_pgm(mask_file) > 127
        except (KeyError, ValueError, FileNotFoundError) as e:
            raise ValueError(f"{ann}:{line_no}: malformed record: {e}") from e
        samples.append(Sample(
            sample_id=sid, image=image, expression=rec["expression"],
            gt_box=Box(*box, unit="pixel"), gt_mask=mask))
    return samples
