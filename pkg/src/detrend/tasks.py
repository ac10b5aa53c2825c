"""Synthetic contextual-recognition datasets on small grayscale grids.

Each video shows one target glyph performing a motion program (plus an
optional static distractor glyph). Category heads are the glyph identity,
the motion type, and optionally a repetition-count modifier. Count-based
modifiers are constructed so the count cannot be read off any single frame
or the per-video mean frame: every count performs full motion cycles whose
total active time is a fixed fraction of the video, so time-averaged pixel
occupancy is count-invariant. Recovering the count requires integrating
over the whole sequence.

Generation is a pure function of (spec, seed). Subject identity is realized
as per-subject style jitter (position, phase, glyph thickness).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .tensor import Prng

GLYPHS = {
    "square": ["11111", "11111", "11111", "11111", "11111"],
    "cross": ["00100", "00100", "11111", "00100", "00100"],
    "tee": ["11111", "00100", "00100", "00100", "00100"],
    "ring": ["11111", "10001", "10001", "10001", "11111"],
    "ex": ["10001", "01010", "00100", "01010", "10001"],
}

TRANSLATE_ACTIONS = {
    "left": (0, -1),
    "right": (0, 1),
    "up": (-1, 0),
    "down": (1, 0),
    "diag": (1, 1),
}
SHAKE_ACTIONS = {"shake_h": (0, 1), "shake_v": (1, 0)}
SWEEP_ACTIONS = {"sweep_h": (0, 1), "sweep_v": (1, 0)}
ALL_ACTIONS = list(TRANSLATE_ACTIONS) + list(SHAKE_ACTIONS) + list(SWEEP_ACTIONS)


@dataclass
class GridVideoSpec:
    grid: tuple = (16, 16)  # cropped frame fed to the network
    margin: int = 1  # raw frames are grid + 2*margin for crop augmentation
    objects: tuple = ("square", "cross", "tee", "ring")
    actions: tuple = tuple(ALL_ACTIONS)
    modifiers: tuple = None  # repetition counts, e.g. (1, 2, 3)
    subjects: int = 10
    repetitions: int = 2
    distractor: bool = True
    length_range: tuple = (50, 50)
    amplitude: int = 3
    active_frac: float = 0.6
    noise: float = 0.0
    class_table: tuple = None  # explicit (obj, act[, mod]) index tuples

    def __post_init__(self):
        for o in self.objects:
            if o not in GLYPHS:
                raise ValueError(f"unknown glyph {o!r}")
        for a in self.actions:
            if a not in ALL_ACTIONS:
                raise ValueError(f"unknown action {a!r}")
        if self.class_table is None:
            self.class_table = tuple(self.default_class_table())
        n_full = len(self.objects) * len(self.actions) * (len(self.modifiers) if self.modifiers else 1)
        if len(self.class_table) > n_full:
            raise ValueError("class table exceeds the object x action (x modifier) product")
        if self.modifiers:
            t_min = self.length_range[0]
            if t_min < 6 * max(self.modifiers):
                raise ValueError("sequences too short to fit the maximum repetition count")

    def default_class_table(self):
        """A partial combination table: cycle objects against actions (x modifiers)."""
        table = []
        if self.modifiers:
            for oi in range(len(self.objects)):
                for ai in range(len(self.actions)):
                    for mi in range(len(self.modifiers)):
                        table.append((oi, ai, mi))
            return table
        # diagonal walk first for variety, then fill from the full enumeration
        n_obj, n_act = len(self.objects), len(self.actions)
        count = min(15, n_obj * n_act)
        seen = []
        for j in range(n_obj * n_act):
            cand = (j % n_obj, j % n_act)
            if cand not in seen:
                seen.append(cand)
        for oi in range(n_obj):
            for ai in range(n_act):
                if (oi, ai) not in seen:
                    seen.append((oi, ai))
        return seen[:count]

    @property
    def heads(self):
        base = (len(self.objects), len(self.actions))
        return base + (len(self.modifiers),) if self.modifiers else base

    @property
    def raw_shape(self):
        return (1, self.grid[0] + 2 * self.margin, self.grid[1] + 2 * self.margin)


@dataclass
class Sample:
    frames: np.ndarray  # (T, 1, H_raw, W_raw) float32 in [-1, 1]
    labels: tuple
    subject: int
    length: int
    sample_id: str


def _glyph_array(name, thick=False):
    g = np.array([[int(ch) for ch in row] for row in GLYPHS[name]], dtype=np.float32)
    if thick:
        # subject-style variant: one extra pixel in a corner
        g = g.copy()
        g[0, 0] = 1.0
    return g


def _draw(frame, glyph, top, left):
    gh, gw = glyph.shape
    h, w = frame.shape
    y0, y1 = max(top, 0), min(top + gh, h)
    x0, x1 = max(left, 0), min(left + gw, w)
    if y0 >= y1 or x0 >= x1:
        return
    frame[y0:y1, x0:x1] = np.maximum(frame[y0:y1, x0:x1], glyph[y0 - top : y1 - top, x0 - left : x1 - left])


def _offset_schedule(action, t_len, count, amp, active_frac, phase_rng):
    """Per-frame (dy, dx) integer offsets for one motion program."""
    offsets = np.zeros((t_len, 2), dtype=int)
    if action in TRANSLATE_ACTIONS:
        dy, dx = TRANSLATE_ACTIONS[action]
        for t in range(t_len):
            step = int(round(amp * t / max(t_len - 1, 1)))
            offsets[t] = (dy * step, dx * step)
        return offsets
    if action in SWEEP_ACTIONS:
        dy, dx = SWEEP_ACTIONS[action]
        for t in range(t_len):
            step = int(round(amp * np.sin(np.pi * t / max(t_len - 1, 1))))
            offsets[t] = (dy * step, dx * step)
        return offsets
    dy, dx = SHAKE_ACTIONS[action]
    count = max(count, 1)
    cycle = int(round(active_frac * t_len / count))
    cycle = max(6, min(cycle, t_len // count))
    seg = t_len // count
    for i in range(count):
        slack = max(seg - cycle, 0)
        start = i * seg + (phase_rng.integers(0, slack + 1) if slack else 0)
        for j in range(cycle):
            u = np.sin(2.0 * np.pi * j / cycle)
            step = int(round(amp * u))
            offsets[start + j] = (dy * step, dx * step)
    return offsets


def _render_video(spec, obj, action, count, subject_rng, video_rng, t_len):
    _, hr, wr = spec.raw_shape
    glyph = _glyph_array(obj, thick=subject_rng.random() < 0.5)
    gh, gw = glyph.shape
    base_y = (hr - gh) // 2 + subject_rng.integers(-1, 2)
    base_x = (wr - gw) // 2 + subject_rng.integers(-1, 2)
    offsets = _offset_schedule(action, t_len, count, spec.amplitude, spec.active_frac, video_rng)

    frames = np.full((t_len, 1, hr, wr), -1.0, dtype=np.float32)
    if spec.distractor:
        others = [o for o in spec.objects if o != obj] or list(GLYPHS)
        d_glyph = _glyph_array(others[video_rng.integers(0, len(others))])
        corner = video_rng.integers(0, 2)
        d_top, d_left = (0, 0) if corner == 0 else (hr - d_glyph.shape[0], wr - d_glyph.shape[1])
    for t in range(t_len):
        fr = frames[t, 0]
        fr2 = np.full((hr, wr), 0.0, dtype=np.float32)
        _draw(fr2, glyph, base_y + offsets[t, 0], base_x + offsets[t, 1])
        if spec.distractor:
            _draw(fr2, d_glyph, d_top, d_left)
        fr[:] = fr2 * 2.0 - 1.0
        if spec.noise:
            fr += spec.noise * (2.0 * video_rng.uniform(0, 1, (hr, wr)).astype(np.float32) - 1.0)
            np.clip(fr, -1.0, 1.0, out=fr)
    return frames


def generate(spec, seed):
    """Full deterministic dataset for a spec: every class x subject x repetition."""
    root = Prng(seed)
    dataset = []
    for ci, cls in enumerate(spec.class_table):
        obj = spec.objects[cls[0]]
        action = spec.actions[cls[1]]
        count = spec.modifiers[cls[2]] if spec.modifiers else 1
        for subject in range(spec.subjects):
            for rep in range(spec.repetitions):
                subject_rng = root.spawn(1000 + subject)
                video_rng = root.spawn(ci * 100000 + subject * 100 + rep)
                t_min, t_max = spec.length_range
                t_len = t_min if t_min == t_max else video_rng.integers(t_min, t_max + 1)
                frames = _render_video(spec, obj, action, count, subject_rng, video_rng, t_len)
                labels = tuple(cls)
                dataset.append(
                    Sample(frames=frames, labels=labels, subject=subject, length=t_len,
                           sample_id=f"c{ci:03d}_s{subject:02d}_r{rep}")
                )
    return dataset


def oa_spec(**kw):
    """Fixed-length surrogate of the object-action task (15 classes by default)."""
    kw.setdefault("objects", ("square", "cross", "tee", "ring"))
    kw.setdefault("actions", tuple(ALL_ACTIONS))
    kw.setdefault("length_range", (50, 50))
    return GridVideoSpec(**kw)


def oam_spec(**kw):
    """Variable-length surrogate with repetition-count modifiers (12 classes)."""
    kw.setdefault("objects", ("square", "cross"))
    kw.setdefault("actions", ("shake_h", "shake_v"))
    kw.setdefault("modifiers", (1, 2, 3))
    kw.setdefault("length_range", (30, 60))
    return GridVideoSpec(**kw)


def gen_oa(spec=None, seed=0):
    return generate(spec or oa_spec(), seed)


def gen_oam(spec=None, seed=0):
    return generate(spec or oam_spec(), seed)


# -- augmentation ----------------------------------------------------------


def augment(frames, rng, crop, flip_p=0.5):
    """One random crop offset and one flip decision applied to all frames of a video."""
    t, c, h, w = frames.shape
    ch, cw = crop
    if ch > h or cw > w:
        raise ValueError("crop larger than frame")
    oy = rng.integers(0, h - ch + 1)
    ox = rng.integers(0, w - cw + 1)
    out = frames[:, :, oy : oy + ch, ox : ox + cw]
    if rng.random() < flip_p:
        out = out[:, :, :, ::-1]
    return np.ascontiguousarray(out)


def center_crop(frames, crop):
    t, c, h, w = frames.shape
    ch, cw = crop
    oy = (h - ch) // 2
    ox = (w - cw) // 2
    return np.ascontiguousarray(frames[:, :, oy : oy + ch, ox : ox + cw])


# -- subject splits --------------------------------------------------------


def split(dataset, fold, n_folds=3, test_ratio=0.2):
    """Disjoint subject partition; fold in {1..n_folds} rotates the test block."""
    if not 1 <= fold <= n_folds:
        raise ValueError(f"fold must be in 1..{n_folds}")
    subjects = sorted({s.subject for s in dataset})
    n_test = max(1, round(test_ratio * len(subjects)))
    start = (fold - 1) * n_test
    test_subjects = set(subjects[start : start + n_test])
    train = [s for s in dataset if s.subject not in test_subjects]
    test = [s for s in dataset if s.subject in test_subjects]
    return train, test


def mean_frame(sample):
    """Per-video mean over valid frames (the statistic a memoryless model sees)."""
    return sample.frames[: sample.length].mean(axis=0)


# -- on-disk cache ---------------------------------------------------------


def export(dataset, out_dir):
    """Manifest CSV plus one little-endian float32 blob of all frames."""
    os.makedirs(out_dir, exist_ok=True)
    blob = os.path.join(out_dir, "frames.bin")
    manifest = os.path.join(out_dir, "manifest.csv")
    offset = 0
    with open(blob, "wb") as bf, open(manifest, "w", newline="") as mf:
        w = csv.writer(mf)
        w.writerow(["id", "subject", "labels", "length", "shape", "offset"])
        for s in dataset:
            arr = np.ascontiguousarray(s.frames, dtype="<f4")
            bf.write(arr.tobytes())
            w.writerow([s.sample_id, s.subject, " ".join(map(str, s.labels)),
                        s.length, " ".join(map(str, s.frames.shape)), offset])
            offset += arr.nbytes


def load(out_dir):
    manifest = os.path.join(out_dir, "manifest.csv")
    blob = os.path.join(out_dir, "frames.bin")
    dataset = []
    with open(manifest, newline="") as mf, open(blob, "rb") as bf:
        raw = bf.read()
        for row in csv.DictReader(mf):
            shape = tuple(int(x) for x in row["shape"].split())
            n = int(np.prod(shape))
            off = int(row["offset"])
            frames = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape).copy()
            dataset.append(Sample(frames=frames, subject=int(row["subject"]),
                                  labels=tuple(int(x) for x in row["labels"].split()),
                                  length=int(row["length"]), sample_id=row["id"]))
    return dataset
