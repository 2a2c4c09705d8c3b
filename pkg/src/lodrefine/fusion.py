"""Evidence fusion and opening-instance extraction.

The three wall rasters (conflict, point labels, texture) are combined
per pixel with a naive Bayes over twelve facade classes:

    posterior(c) ∝ prior(c) · L_conflict(c) · L_pc(c) · L_tex(c)

Conflict evidence supports opening classes (Window, Door, Underpass)
directly and the remaining classes through its complement.  Class maps
contribute their channel value clamped to ``[EPSILON, 1]`` so a single
zero never vetoes a class; a missing texture map contributes factor 1.

Instances are 8-connected components of supra-threshold argmax pixels,
reported as wall-frame rectangles with mean-posterior confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import CLASS_INDEX, FacadeClass, parse_class_name
from .errors import FrameMismatch
from .geom import Rect2, WallFrame, WORLD_UP
from .maps import CONFLICT_CHANNEL, ProbabilityMap

OPENING_CLASSES = (FacadeClass.Window, FacadeClass.Door, FacadeClass.Underpass)
INSTALLATION_CLASSES = (
    FacadeClass.Balcony, FacadeClass.Molding, FacadeClass.Deco,
    FacadeClass.Column, FacadeClass.Arch, FacadeClass.Drainpipe,
    FacadeClass.Stairs, FacadeClass.Blinds,
)
POSTERIOR_CLASSES = OPENING_CLASSES + INSTALLATION_CLASSES + (FacadeClass.Wall,)

EPSILON = 1e-3
DEFAULT_THRESHOLD = 0.5
DEFAULT_MIN_AREA = 0.1

# Underpass relabel rule (large ground-level openings).
UNDERPASS_MIN_HEIGHT = 2.5
UNDERPASS_EDGE_PIXELS = 2
UNDERPASS_MIN_POSTERIOR = 0.2


def uniform_priors() -> dict:
    return {c: 1.0 / len(POSTERIOR_CLASSES) for c in POSTERIOR_CLASSES}


@dataclass
class PosteriorMap:
    """Per-pixel class posterior over POSTERIOR_CLASSES; rows sum to 1."""

    frame: WallFrame
    resolution: float
    classes: tuple
    values: np.ndarray  # (n_classes, height, width)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.values.setflags(write=False)

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def channel(self, cls: FacadeClass) -> np.ndarray:
        return self.values[self.classes.index(cls)]


def _same_frame(a: ProbabilityMap, b: ProbabilityMap) -> bool:
    fa, fb = a.frame, b.frame
    return (a.resolution == b.resolution
            and np.array_equal(fa.origin, fb.origin)
            and np.array_equal(fa.u_axis, fb.u_axis)
            and np.array_equal(fa.v_axis, fb.v_axis)
            and np.array_equal(fa.normal, fb.normal)
            and fa.u_extent == fb.u_extent and fa.v_extent == fb.v_extent
            and a.values.shape[1:] == b.values.shape[1:])


def _class_likelihood(pmap: ProbabilityMap, cls: FacadeClass, shape) -> np.ndarray:
    if pmap is None:
        return np.ones(shape)
    if pmap.has_channel(cls):
        return np.clip(pmap.channel(cls), EPSILON, 1.0)
    return np.full(shape, EPSILON)


def fuse(conflict: ProbabilityMap, pc: ProbabilityMap,
         tex: ProbabilityMap | None = None,
         priors: dict | None = None) -> PosteriorMap:
    """Per-pixel naive-Bayes posterior over the twelve facade classes.

    With uniform likelihoods the posterior reproduces the priors; with a
    missing texture map the fusion degrades to conflict x point labels.
    """
    if priors is None:
        priors = uniform_priors()
    total = sum(priors[c] for c in POSTERIOR_CLASSES)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"priors sum to {total!r}, expected 1")
    if not _same_frame(conflict, pc) or (tex is not None and not _same_frame(conflict, tex)):
        raise FrameMismatch("probability maps disagree on frame/resolution/shape")

    p_conf = conflict.channel(CONFLICT_CHANNEL)
    shape = p_conf.shape
    weights = np.empty((len(POSTERIOR_CLASSES),) + shape)
    for i, cls in enumerate(POSTERIOR_CLASSES):
        l_conflict = p_conf if cls in OPENING_CLASSES else 1.0 - p_conf
        l_pc = _class_likelihood(pc, cls, shape)
        l_tex = _class_likelihood(tex, cls, shape)
        # Grouped so that swapping the pc and tex maps is bit-identical.
        weights[i] = l_conflict * (l_pc * l_tex)

    weights /= weights.max(axis=0)
    prior_vec = np.array([priors[c] for c in POSTERIOR_CLASSES])
    post = prior_vec[:, None, None] * weights
    post /= post.sum(axis=0)
    return PosteriorMap(frame=conflict.frame, resolution=conflict.resolution,
                        classes=POSTERIOR_CLASSES, values=post)


@dataclass
class OpeningInstance:
    """One detected facade element on a wall, as a wall-frame rectangle."""

    cls: FacadeClass
    rect: Rect2
    confidence: float
    wall_id: str
    pixel_count: int = 0
    attributes: dict = field(default_factory=dict)

    @property
    def is_opening(self) -> bool:
        return self.cls in OPENING_CLASSES


def _bottom_rows_last(frame: WallFrame) -> bool:
    """True when raster rows increase toward the wall's world-space bottom."""
    return float(frame.v_axis @ WORLD_UP) <= 0.0


def extract_instances(post: PosteriorMap, threshold: float = DEFAULT_THRESHOLD,
                      min_area: float = DEFAULT_MIN_AREA, wall_id: str = "",
                      underpass_rule: bool = True) -> list:
    """Connected supra-threshold components of non-Wall argmax pixels.

    Components smaller than ``min_area`` (m^2) are dropped.  Tall
    components of Window/Door reaching the wall's bottom edge are
    relabeled Underpass when the rule is enabled (see module notes).
    Output is sorted by (class, u_min, v_min).
    """
    from scipy import ndimage

    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must be in (0, 1)")
    res = post.resolution
    winner = np.argmax(post.values, axis=0)
    win_p = post.values.max(axis=0)
    eight = np.ones((3, 3), dtype=int)
    h, w = win_p.shape
    u_hi, v_hi = post.frame.u_extent, post.frame.v_extent
    bottom_last = _bottom_rows_last(post.frame)

    out = []
    for i, cls in enumerate(POSTERIOR_CLASSES):
        if cls is FacadeClass.Wall:
            continue
        mask = (winner == i) & (win_p >= threshold)
        if not mask.any():
            continue
        labels, n = ndimage.label(mask, structure=eight)
        for k in range(1, n + 1):
            comp = labels == k
            count = int(comp.sum())
            if count * res * res < min_area:
                continue
            rows, cols = np.nonzero(comp)
            rect = Rect2(
                u_min=cols.min() * res,
                v_min=rows.min() * res,
                u_max=min((cols.max() + 1) * res, u_hi),
                v_max=min((rows.max() + 1) * res, v_hi),
            )
            confidence = float(post.values[i][comp].mean())
            inst_cls = cls
            if (underpass_rule and cls in (FacadeClass.Window, FacadeClass.Door)
                    and rect.height >= UNDERPASS_MIN_HEIGHT):
                touches = (rows.max() >= h - 1 - UNDERPASS_EDGE_PIXELS if bottom_last
                           else rows.min() <= UNDERPASS_EDGE_PIXELS)
                under_mean = float(post.channel(FacadeClass.Underpass)[comp].mean())
                if touches and under_mean >= UNDERPASS_MIN_POSTERIOR:
                    inst_cls = FacadeClass.Underpass
            out.append(OpeningInstance(cls=inst_cls, rect=rect, confidence=confidence,
                                       wall_id=wall_id, pixel_count=count))
    out.sort(key=lambda o: (CLASS_INDEX[o.cls], o.rect.u_min, o.rect.v_min))
    return out


# ---------------------------------------------------------------------------
# instance list serialization (consumed by the reconstruction stage)

def _f(x: float) -> float:
    return float(f"{float(x):.9g}")


def instances_to_json(instances) -> bytes:
    import json

    rows = [{
        "class": inst.cls.value,
        "u_min": _f(inst.rect.u_min),
        "v_min": _f(inst.rect.v_min),
        "u_max": _f(inst.rect.u_max),
        "v_max": _f(inst.rect.v_max),
        "confidence": _f(inst.confidence),
        "wall_id": inst.wall_id,
    } for inst in instances]
    return (json.dumps(rows, indent=1) + "\n").encode("utf-8")


def instances_from_json(data: bytes | str) -> list:
    import json

    if isinstance(data, bytes):
        data = data.decode("utf-8")
    out = []
    for row in json.loads(data):
        rect = Rect2(u_min=float(row["u_min"]), v_min=float(row["v_min"]),
                     u_max=float(row["u_max"]), v_max=float(row["v_max"]))
        out.append(OpeningInstance(cls=parse_class_name(row["class"]), rect=rect,
                                   confidence=float(row["confidence"]),
                                   wall_id=str(row["wall_id"])))
    return out
