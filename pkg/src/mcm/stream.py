"""Synthetic non-i.i.d. test stream.

Procedural class images are corrupted segment by segment according to a mode
schedule, ordered so that consecutive samples tend to share a class
(Dirichlet time-slot ordering), and tagged with a synthetic uncertainty that
grows with corruption severity.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

KINDS = ("gaussian_noise", "contrast", "brightness", "box_blur", "impulse_noise")

# severity 1..5 -> operator parameter
NOISE_SIGMA = (0.06, 0.1, 0.16, 0.24, 0.36)
CONTRAST_SCALE = (0.8, 0.6, 0.4, 0.2, 0.05)
BRIGHTNESS_SHIFT = (0.1, 0.25, 0.35, 0.5, 0.8)
BLUR_SIZE = (2, 3, 4, 6, 8)
IMPULSE_FRACTION = (0.05, 0.1, 0.2, 0.4, 0.6)

_TABLES = {
    "gaussian_noise": NOISE_SIGMA,
    "contrast": CONTRAST_SCALE,
    "brightness": BRIGHTNESS_SHIFT,
    "box_blur": BLUR_SIZE,
    "impulse_noise": IMPULSE_FRACTION,
}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption {self.kind!r}; expected one of {KINDS}")
        if not 1 <= self.severity <= 5:
            raise ValueError("severity must be in 1..5")

    @property
    def parameter(self):
        return _TABLES[self.kind][self.severity - 1]


@dataclass(frozen=True)
class Segment:
    spec: CorruptionSpec
    dwell: int

    def __post_init__(self):
        if self.dwell < 1:
            raise ValueError("dwell must be >= 1")


def default_schedule() -> tuple[Segment, ...]:
    # ordered so the closest creation-adjacent pair shares a severity
    specs = [
        ("box_blur", 5),
        ("brightness", 2),
        ("contrast", 5),
        ("impulse_noise", 5),
        ("brightness", 5),
        ("brightness", 4),
    ]
    return tuple(Segment(CorruptionSpec(k, s), 100) for k, s in specs)


@dataclass(frozen=True)
class StreamConfig:
    """Stream shape and randomness.

    The schedule repeats cyclically when ``total_steps`` exceeds the sum of
    its dwell lengths; a sample's mode id is its schedule index.
    """

    num_classes: int = 100
    images_per_class: int = 16
    channels: int = 3
    height: int = 32
    width: int = 32
    schedule: tuple[Segment, ...] = field(default_factory=default_schedule)
    dirichlet: float = 0.1
    total_steps: int = 1000
    batch_size: int = 64
    seed: int = 0
    uncertainty_noise: float = 0.1  # Laplace scale, as a fraction of ln(num_classes)

    def __post_init__(self):
        object.__setattr__(
            self,
            "schedule",
            tuple(s if isinstance(s, Segment) else _segment_from_dict(s) for s in self.schedule),
        )
        if not self.schedule:
            raise ValueError("schedule must be nonempty")
        if not self.dirichlet > 0:
            raise ValueError("dirichlet concentration must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.channels, self.height, self.width, self.images_per_class, self.batch_size) < 1:
            raise ValueError("image shape, images_per_class and batch_size must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = [{"kind": s.spec.kind, "severity": s.spec.severity, "dwell": s.dwell} for s in self.schedule]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StreamConfig":
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = tuple(_segment_from_dict(s) for s in d["schedule"])
        return cls(**d)

    def mode_at(self, t: int) -> int:
        cycle = sum(s.dwell for s in self.schedule)
        r = t % cycle
        for i, s in enumerate(self.schedule):
            if r < s.dwell:
                return i
            r -= s.dwell
        raise AssertionError("unreachable")


def _segment_from_dict(d) -> Segment:
    if isinstance(d, Segment):
        return d
    return Segment(CorruptionSpec(d["kind"], int(d["severity"])), int(d["dwell"]))


@dataclass
class StreamSample:
    image: np.ndarray
    label: int
    mode: int
    severity: int
    uncertainty: float
    index: int  # global position in the stream


# -- base images ------------------------------------------------------------

BASE_LEVEL = (0.8, 0.3, 0.12)  # warm cast, so contrast and brightness move apart
HUE_RADIUS = 0.052
TEXTURE_AMPLITUDE = 0.06
IMAGE_JITTER = 0.05


def generate_base_images(cfg: StreamConfig, rng: np.random.Generator) -> np.ndarray:
    """``(num_classes, images_per_class, C, H, W)`` clean images.

    Class ``k`` gets a colour on a small hue ring around a warm base and a
    stripe or checker texture whose period and orientation depend on ``k``;
    each image adds a random colour jitter and texture phase.
    """
    n, m, c, h, w = cfg.num_classes, cfg.images_per_class, cfg.channels, cfg.height, cfg.width
    if n < 2:
        raise ValueError("need at least two classes")
    theta = 2.0 * np.pi * np.arange(n) / n
    chan = 2.0 * np.pi * np.arange(c) / max(c, 3)
    base = np.resize(np.asarray(BASE_LEVEL, dtype=float), c)
    colours = base + HUE_RADIUS * np.cos(theta[:, None] + chan[None, :])  # (n, c)

    yy, xx = np.mgrid[0:h, 0:w]
    out = np.empty((n, m, c, h, w))
    for k in range(n):
        half = (1, 2, 4)[k % 3]
        style = (k // 3) % 3
        phase = rng.integers(0, 2 * half, size=m)
        for i in range(m):
            rows = (yy + phase[i]) // half
            if style == 0:
                cells = rows
            elif style == 1:
                cells = (xx + phase[i]) // half
            else:
                cells = rows + xx // half
            wave = np.where(cells % 2 == 0, 1.0, -1.0)
            jitter = rng.normal(0.0, IMAGE_JITTER, size=c)
            out[k, i] = colours[k][:, None, None] + jitter[:, None, None] + TEXTURE_AMPLITUDE * wave[None]
    return np.clip(out, 0.0, 1.0)


# -- corruptions ------------------------------------------------------------

def apply_corruption(img, spec: CorruptionSpec, rng: np.random.Generator) -> np.ndarray:
    """Corrupt one ``(C, H, W)`` image or a ``(B, C, H, W)`` stack."""
    x = np.asarray(img, dtype=float)
    a = spec.parameter
    if spec.kind == "gaussian_noise":
        out = x + rng.normal(0.0, a, size=x.shape)
    elif spec.kind == "contrast":
        out = 0.5 + a * (x - 0.5)
    elif spec.kind == "brightness":
        out = x + a
    elif spec.kind == "box_blur":
        size = [1] * (x.ndim - 2) + [a, a]
        out = uniform_filter(x, size=size, mode="nearest")
    else:
        # salt and pepper drawn independently per pixel and channel
        hit = rng.random(x.shape) < a
        salt = rng.random(x.shape) < 0.5
        out = np.where(hit, salt.astype(float), x)
    return np.clip(out, 0.0, 1.0)


# -- ordering ---------------------------------------------------------------

def ptta_order(labels, dirichlet: float, rng: np.random.Generator, num_slots: int | None = None) -> np.ndarray:
    """Temporally correlated permutation of ``range(len(labels))``.

    Each class spreads its samples over ``num_slots`` consecutive time slots
    with proportions drawn from ``Dirichlet(dirichlet)``; slots are emitted in
    order and shuffled internally. Small concentrations pin each class to a
    few slots; large ones approach a uniform shuffle.
    """
    if not dirichlet > 0:
        raise ValueError("dirichlet concentration must be positive")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    num_slots = len(classes) if num_slots is None else num_slots
    slots: list[list[int]] = [[] for _ in range(num_slots)]
    for c in classes:
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(num_slots, dirichlet))
        cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
        for s, part in enumerate(np.split(idx, cuts)):
            slots[s].extend(part.tolist())
    order = []
    for s in slots:
        s = np.array(s, dtype=int)
        rng.shuffle(s)
        order.extend(s.tolist())
    return np.array(order, dtype=int)


# -- the stream -------------------------------------------------------------

class Stream:
    """Random-access stream: ``batch(t)`` depends only on ``(cfg, t)``."""

    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        root = np.random.SeedSequence(cfg.seed)
        base_seq, order_seq, self._step_seq = root.spawn(3)
        self.base_images = generate_base_images(cfg, np.random.default_rng(base_seq))
        n_total = cfg.total_steps * cfg.batch_size
        rng = np.random.default_rng(order_seq)
        labels = np.resize(np.arange(cfg.num_classes), n_total)
        self.labels = labels[ptta_order(labels, cfg.dirichlet, rng)] if n_total else labels
        self.image_ids = rng.integers(0, cfg.images_per_class, size=n_total)

    def __len__(self):
        return self.cfg.total_steps

    def _rng(self, t: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self._step_seq.entropy, spawn_key=(1, t)))

    def batch_arrays(self, t: int):
        """``(images, labels, mode, severity, uncertainties, indices)`` for step ``t``."""
        cfg = self.cfg
        if not 0 <= t < cfg.total_steps:
            raise IndexError(f"step {t} outside [0, {cfg.total_steps})")
        rng = self._rng(t)
        sl = slice(t * cfg.batch_size, (t + 1) * cfg.batch_size)
        labels = self.labels[sl]
        clean = self.base_images[labels, self.image_ids[sl]]
        mode = cfg.mode_at(t)
        spec = cfg.schedule[mode].spec
        images = apply_corruption(clean, spec, rng)
        u = synthetic_uncertainty(spec.severity, cfg.num_classes, cfg.uncertainty_noise, rng, len(labels))
        return images, labels, mode, spec.severity, u, np.arange(sl.start, sl.stop)

    def next_batch(self, t: int) -> list[StreamSample]:
        images, labels, mode, sev, u, idx = self.batch_arrays(t)
        return [
            StreamSample(images[i], int(labels[i]), mode, sev, float(u[i]), int(idx[i]))
            for i in range(len(labels))
        ]

    def manifest(self) -> dict:
        return {"stream": self.cfg.to_dict(), "num_samples": int(len(self.labels))}


def synthetic_uncertainty(severity, num_classes, noise, rng, size) -> np.ndarray:
    top = math.log(num_classes)
    u0 = 0.6 * top
    return np.clip(u0 * severity / 5.0 + rng.laplace(0.0, noise * top, size=size), 0.0, top)


def next_batch(stream: Stream, t: int) -> list[StreamSample]:
    return stream.next_batch(t)


# -- PPM / manifest I/O -----------------------------------------------------

def write_ppm(path, img):
    """Binary P6 for 3-channel images (P5 for single-channel)."""
    x = np.asarray(img, dtype=float)
    c, h, w = x.shape
    if c not in (1, 3):
        raise ValueError("PPM export supports 1 or 3 channels")
    data = np.round(np.clip(x, 0.0, 1.0) * 255).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as f:
        f.write(magic + f"\n{w} {h}\n255\n".encode())
        f.write(np.transpose(data, (1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    c = {b"P6": 3, b"P5": 1}.get(magic)
    if c is None or maxval != 255:
        raise ValueError("only 8-bit P5/P6 files are supported")
    data = np.frombuffer(raw[pos : pos + w * h * c], dtype=np.uint8).reshape(h, w, c)
    return np.transpose(data, (2, 0, 1)).astype(float) / 255.0


def write_manifest(path, stream: Stream):
    Path(path).write_text(json.dumps(stream.manifest(), indent=2))
