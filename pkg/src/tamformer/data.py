"""Synthetic pedestrian sequences, encoding-window augmentation, dataset files.

Each sample is a set of per-frame feature tracks sampled at 30 FPS that end a
few frames before the action onset (``event_frame``). Crossing pedestrians
drift laterally, gait faster, and the ego vehicle slows; the lateral drift
strengthens as the onset approaches, so later frames carry more evidence.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, ParseError, VersionError

DATASET_FORMAT = "tamformer-dataset"
DATASET_VERSION = 1
MASK64 = (1 << 64) - 1
MODALITY_KINDS = ("context", "bbox", "pose", "speed")


def splitmix64(seed, index):
    """Per-stream seed derivation: one splitmix64 step from ``seed + (index+1)*golden``."""
    z = (int(seed) + (int(index) + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(eq=False)
class FeatureSequence:
    sample_id: str
    modalities: list  # [(name, ndarray [n_frames, width])]
    label: int
    event_frame: int
    history_margin: int = 0
    fps: int = 30

    def __post_init__(self):
        lengths = {np.asarray(t).shape[0] for _, t in self.modalities}
        if len(lengths) != 1:
            raise ContractError(f"{self.sample_id}: modality tracks differ in length {sorted(lengths)}")
        if self.label not in (0, 1):
            raise ContractError(f"{self.sample_id}: label must be 0 or 1, got {self.label}")
        if self.event_frame < self.n_frames:
            raise ContractError(
                f"{self.sample_id}: event_frame {self.event_frame} must follow the last frame "
                f"({self.n_frames - 1})"
            )

    @property
    def n_frames(self):
        return int(np.asarray(self.modalities[0][1]).shape[0])

    def track(self, name):
        for n, t in self.modalities:
            if n == name:
                return t
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        if (self.sample_id, self.label, self.event_frame, self.history_margin, self.fps) != (
            other.sample_id, other.label, other.event_frame, other.history_margin, other.fps
        ):
            return False
        if [n for n, _ in self.modalities] != [n for n, _ in other.modalities]:
            return False
        return all(
            a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.modalities, other.modalities)
        )


def base_id(sample_id):
    """Identifier of the original sample an augmented copy came from."""
    return sample_id.split("#", 1)[0]


@dataclass(frozen=True)
class GeneratorConfig:
    modality_names: tuple = ("context", "bbox", "pose", "speed")
    modality_widths: tuple = (16, 4, 12, 1)
    t_enc: int = 45
    max_margin: int = 9
    event_offset_frames: int = 3
    balance: float = 0.5
    fps: int = 30
    fractions: tuple = (0.7, 0.1, 0.2)
    # positions are emitted in tenths of a unit to keep raw magnitudes near 1
    bbox_scale: float = 0.1
    pose_hz: float = 1.0

    def __post_init__(self):
        for name in ("modality_names", "modality_widths", "fractions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @classmethod
    def for_model(cls, model_config, **overrides):
        return cls(
            modality_names=model_config.modality_names,
            modality_widths=model_config.modality_widths,
            t_enc=model_config.t_enc,
            fps=model_config.fps,
            **overrides,
        )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DatasetManifest:
    seed: int
    generator: dict
    class_counts: dict
    fractions: tuple
    splits: dict = field(default_factory=dict)  # sample_id -> "train" | "val" | "test"

    def ids(self, split):
        return [k for k, v in self.splits.items() if v == split]

    def to_dict(self):
        return {
            "format": DATASET_FORMAT + "-manifest",
            "format_version": DATASET_VERSION,
            "seed": self.seed,
            "generator": self.generator,
            "class_counts": self.class_counts,
            "fractions": list(self.fractions),
            "splits": self.splits,
        }

    def __eq__(self, other):
        return isinstance(other, DatasetManifest) and self.to_dict() == other.to_dict()


def _validate(n, config):
    if n < 2:
        raise ContractError(f"need at least 2 samples, got {n}")
    if not 0.0 < config.balance < 1.0:
        raise ContractError(f"class balance must lie in (0, 1), got {config.balance}")
    n_pos = int(round(n * config.balance))
    if n_pos < 1 or n_pos > n - 1:
        raise ContractError(f"balance {config.balance} with n={n} leaves a class empty")
    fr = config.fractions
    if len(fr) != 3 or min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise ContractError(f"split fractions must be three nonnegative numbers summing to 1: {fr}")
    unknown = set(config.modality_names) - set(MODALITY_KINDS)
    if unknown:
        raise ContractError(f"generator has no process for modalities {sorted(unknown)}")
    if len(config.modality_names) != len(config.modality_widths):
        raise ContractError("modality_names and modality_widths must align")
    if "bbox" in config.modality_names:
        w = config.modality_widths[config.modality_names.index("bbox")]
        if w > 4:
            raise ContractError(f"bbox track has at most 4 channels, got {w}")
    if config.event_offset_frames < 1:
        raise ContractError("event must come strictly after the last observed frame")
    return n_pos


def _pose_width(config):
    if "pose" in config.modality_names:
        return config.modality_widths[config.modality_names.index("pose")]
    return 0


def _simulate(rng, label, n_frames, event_frame, config, projection):
    t = np.arange(n_frames, dtype=np.float64)
    progress = (t + 1.0) / (event_frame + 1.0)
    strength = 0.3 + 0.7 * progress

    v = rng.uniform(0.5, 1.5) if label else rng.normal(0.0, 0.1)
    cx = rng.normal(0.0, 1.0) + np.cumsum(v * strength)
    cy = np.full(n_frames, rng.normal(0.0, 1.0))
    w = 5.0 + 2.0 * progress
    h = 10.0 + 4.0 * progress
    bbox = np.stack([cx, cy, w, h], axis=1) + rng.normal(0.0, 0.2, size=(n_frames, 4))
    bbox *= config.bbox_scale

    n_pose = _pose_width(config)
    omega = 2.0 * np.pi * config.pose_hz / config.fps * (1.4 if label else 1.0)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=n_pose)
    pose = np.sin(omega * t[:, None] + phase[None, :]) + rng.normal(0.0, 0.3, size=(n_frames, n_pose))

    s0 = rng.uniform(0.8, 1.2)
    n_speed = config.modality_widths[config.modality_names.index("speed")] if "speed" in config.modality_names else 1
    base = s0 * (1.0 - 0.5 * progress) if label else np.full(n_frames, s0)
    speed = base[:, None] + rng.normal(0.0, 0.05, size=(n_frames, n_speed))

    context = None
    if projection is not None:
        src = np.concatenate([bbox, pose], axis=1)
        context = src @ projection.T + rng.normal(0.0, 0.5, size=(n_frames, projection.shape[0]))

    tracks = {"bbox": None, "pose": pose, "speed": speed, "context": context}
    if "bbox" in config.modality_names:
        tracks["bbox"] = bbox[:, : config.modality_widths[config.modality_names.index("bbox")]]
    return [(name, np.ascontiguousarray(tracks[name])) for name in config.modality_names]


def _assign_splits(ids, labels, seed, fractions):
    rng = np.random.default_rng(splitmix64(seed, 1 << 41))
    splits = {}
    for cls in (0, 1):
        members = [i for i, y in zip(ids, labels) if y == cls]
        order = [members[k] for k in rng.permutation(len(members))]
        n_train = int(round(len(order) * fractions[0]))
        n_val = int(round(len(order) * fractions[1]))
        n_val = min(n_val, len(order) - n_train)
        for k, sid in enumerate(order):
            splits[sid] = "train" if k < n_train else ("val" if k < n_train + n_val else "test")
    return {sid: splits[sid] for sid in ids}


def generate_synthetic(n, seed, config=None):
    """``n`` samples with exact class stratification; a pure function of (seed, config)."""
    config = GeneratorConfig() if config is None else config
    n_pos = _validate(n, config)
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    labels = labels[np.random.default_rng(splitmix64(seed, 1 << 40)).permutation(n)]

    projection = None
    if "context" in config.modality_names:
        width = config.modality_widths[config.modality_names.index("context")]
        src_dim = 4 + _pose_width(config)
        proj_rng = np.random.default_rng(splitmix64(seed, 1 << 42))
        projection = proj_rng.normal(0.0, 1.0 / np.sqrt(src_dim), size=(width, src_dim))

    samples = []
    for i, label in enumerate(labels):
        rng = np.random.default_rng(splitmix64(seed, i))
        margin = int(rng.integers(0, config.max_margin + 1))
        n_frames = config.t_enc + margin
        event_frame = n_frames - 1 + config.event_offset_frames
        tracks = _simulate(rng, int(label), n_frames, event_frame, config, projection)
        samples.append(
            FeatureSequence(
                sample_id=f"s{i:05d}", modalities=tracks, label=int(label),
                event_frame=event_frame, history_margin=margin, fps=config.fps,
            )
        )
    ids = [s.sample_id for s in samples]
    manifest = DatasetManifest(
        seed=int(seed),
        generator=config.to_dict(),
        class_counts={"0": int(n - n_pos), "1": int(n_pos)},
        fractions=tuple(config.fractions),
        splits=_assign_splits(ids, labels.tolist(), seed, config.fractions),
    )
    return samples, manifest


def split(samples, manifest, which):
    keep = set(manifest.ids(which))
    return [s for s in samples if base_id(s.sample_id) in keep]


# ------------------------------------------------------------ augmentation


def augment(sample, max_shifts=5, shift_step=3):
    """Original plus copies whose encoding window ends ``k*shift_step`` frames earlier.

    A copy keeps the earlier frames only, so its window slides back into the
    sample's spare history; ``k`` runs while that history lasts.
    """
    if shift_step < 1:
        raise ContractError(f"shift_step must be >= 1, got {shift_step}")
    out = [sample]
    k = 1
    while k <= max_shifts and k * shift_step <= sample.history_margin:
        cut = k * shift_step
        out.append(
            FeatureSequence(
                sample_id=f"{sample.sample_id}#shift{cut}",
                modalities=[(n, t[: sample.n_frames - cut].copy()) for n, t in sample.modalities],
                label=sample.label,
                event_frame=sample.event_frame,
                history_margin=sample.history_margin - cut,
                fps=sample.fps,
            )
        )
        k += 1
    return out


def augment_all(samples, max_shifts=5, shift_step=3):
    return [c for s in samples for c in augment(s, max_shifts, shift_step)]


def check_no_leakage(train_samples, manifest):
    """Raise if any training sample derives from a sample outside the train split."""
    bad = sorted({base_id(s.sample_id) for s in train_samples
                  if manifest.splits.get(base_id(s.sample_id)) != "train"})
    if bad:
        raise ContractError(f"non-train samples leaked into training: {bad[:5]}")


# ------------------------------------------------------------------- files


def manifest_path(path):
    root, _ = os.path.splitext(str(path))
    return root + ".manifest.json"


def save_dataset(path, samples, manifest):
    """JSON Lines (header line, then one sample per line) plus a manifest sidecar."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"format": DATASET_FORMAT, "format_version": DATASET_VERSION}) + "\n")
        for s in samples:
            rec = {
                "sample_id": s.sample_id,
                "label": s.label,
                "event_frame": s.event_frame,
                "history_margin": s.history_margin,
                "fps": s.fps,
                "modalities": {n: np.asarray(t).tolist() for n, t in s.modalities},
            }
            fh.write(json.dumps(rec) + "\n")
    with open(manifest_path(path), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _check_version(path, doc, expected_format, line=None):
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise ParseError(path, f"not a {expected_format} file", line)
    if doc.get("format_version") != DATASET_VERSION:
        raise VersionError(
            path, f"format_version {doc.get('format_version')} != {DATASET_VERSION}", line
        )


def load_dataset(path):
    samples = []
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(path, "empty file", 1)
    for lineno, text in enumerate(lines, start=1):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(path, f"invalid JSON: {exc.msg}", lineno) from None
        if lineno == 1:
            _check_version(path, doc, DATASET_FORMAT, lineno)
            continue
        try:
            mods = [(name, np.asarray(rows, dtype=np.float64)) for name, rows in doc["modalities"].items()]
            if any(t.ndim != 2 for _, t in mods):
                raise ParseError(path, "modality tracks must be 2-D", lineno)
            samples.append(
                FeatureSequence(
                    sample_id=doc["sample_id"], modalities=mods, label=int(doc["label"]),
                    event_frame=int(doc["event_frame"]),
                    history_margin=int(doc.get("history_margin", 0)), fps=int(doc["fps"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, f"malformed sample ({exc})", lineno) from None

    mpath = manifest_path(path)
    with open(mpath) as fh:
        try:
            mdoc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(mpath, f"invalid JSON: {exc.msg}", exc.lineno) from None
    _check_version(mpath, mdoc, DATASET_FORMAT + "-manifest")
    try:
        manifest = DatasetManifest(
            seed=mdoc["seed"], generator=mdoc["generator"], class_counts=mdoc["class_counts"],
            fractions=tuple(mdoc["fractions"]), splits=mdoc["splits"],
        )
    except KeyError as exc:
        raise ParseError(mpath, f"manifest lacks {exc}") from None
    return samples, manifest
