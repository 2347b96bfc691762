"""Synthetic images with controlled label ambiguity, splits, augmentation, file I/O."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage

from .labelcore import (
    FindingVocabulary,
    LabelMatrix,
    MentionState,
    enforce_consistency,
    state_bits,
)

log = logging.getLogger(__name__)

ShapeKind = Literal["blob", "line", "ring"]


class ManifestError(ValueError):
    pass


class PGMError(ValueError):
    pass


# --- configs ----------------------------------------------------------------


class FindingSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field(min_length=1)
    shape: ShapeKind
    prevalence: float = Field(ge=0.0, le=1.0)


class ReportPolicy(BaseModel):
    """Chance that a finding gets mentioned, conditioned on its truth.

    Whatever mass is left over becomes NoMention.
    """

    model_config = ConfigDict(extra="forbid")

    p_affirm_given_present: float = Field(ge=0.0, le=1.0)
    p_negate_given_absent: float = Field(ge=0.0, le=1.0)
    # negation rate for exams that show the context marker; None = same as above
    p_negate_given_absent_in_context: float | None = Field(None, ge=0.0, le=1.0)

    def p_negate(self, in_context: bool) -> float:
        if in_context and self.p_negate_given_absent_in_context is not None:
            return self.p_negate_given_absent_in_context
        return self.p_negate_given_absent

    def nomention_rate(self, prevalence: float, context_prevalence: float = 0.0) -> float:
        p_neg = (1 - context_prevalence) * self.p_negate(False) + context_prevalence * self.p_negate(True)
        return prevalence * (1 - self.p_affirm_given_present) + (1 - prevalence) * (1 - p_neg)


class ContextSpec(BaseModel):
    """Visible exam context (a support-device tube) that changes how often findings get negated."""

    model_config = ConfigDict(extra="forbid")

    prevalence: float = Field(ge=0.0, le=1.0)
    amplitude: float = Field(0.4, ge=0.0, le=1.0)


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_samples: int = Field(1000, ge=0)
    image_size: int = Field(32, ge=8)
    findings: list[FindingSpec] = Field(min_length=1)
    report_policy: list[ReportPolicy] = Field(min_length=1)
    amplitude: tuple[float, float] = (0.25, 0.6)
    background_noise: float = Field(0.08, ge=0.0)
    context: ContextSpec | None = None
    report_mode: Literal["direct", "text"] = "direct"
    seed: int = 0

    @model_validator(mode="after")
    def _lengths(self):
        if len(self.findings) != len(self.report_policy):
            raise ValueError(
                f"report_policy has {len(self.report_policy)} entries for {len(self.findings)} findings"
            )
        lo, hi = self.amplitude
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("amplitude must satisfy 0 <= low <= high <= 1")
        return self

    def vocabulary(self) -> FindingVocabulary:
        return FindingVocabulary.from_names([f.name for f in self.findings])


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rotation_deg: float = Field(10.0, ge=0.0)
    shift_frac: float = Field(0.10, ge=0.0)
    scale_range: tuple[float, float] = (0.95, 1.05)
    apply_prob: float = Field(0.8, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _scale(self):
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ValueError("scale_range must satisfy 0 < low <= high")
        return self


def policy_for_nomention(prevalence: float, p_affirm_given_present: float, target: float) -> ReportPolicy:
    """Solve for the negation rate that gives an expected NoMention fraction of ``target``."""
    if not 0.0 <= prevalence < 1.0:
        raise ValueError("prevalence must lie in [0, 1) to solve for the negation rate")
    p_neg = 1.0 - (target - prevalence * (1.0 - p_affirm_given_present)) / (1.0 - prevalence)
    if not 0.0 <= p_neg <= 1.0:
        raise ValueError(f"target NoMention rate {target} unreachable with these settings")
    return ReportPolicy(p_affirm_given_present=p_affirm_given_present, p_negate_given_absent=p_neg)


# --- dataset ------------------------------------------------------------------


@dataclass
class Dataset:
    images: np.ndarray  # N x H x W float32 in [0, 1]
    labels: LabelMatrix
    vocab: FindingVocabulary
    truth: np.ndarray | None = None  # N x K; never written to manifests

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images for {len(self.labels)} label rows")
        if self.labels.n_findings != len(self.vocab):
            raise ValueError("label matrix and vocabulary disagree on the number of findings")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def sample_ids(self) -> list[str]:
        return self.labels.sample_ids

    def subset(self, idx: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.images[idx],
            self.labels.subset(idx),
            self.vocab,
            None if self.truth is None else self.truth[idx],
        )


def _quantize(img: np.ndarray) -> np.ndarray:
    # 8-bit levels so PGM storage is lossless
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _render(kind: str, size: int, amp: float, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    margin = size * 0.2
    cy, cx = rng.uniform(margin, size - margin, size=2)
    if kind == "blob":
        r = rng.uniform(0.08, 0.14) * size
        return amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    if kind == "ring":
        r = rng.uniform(0.14, 0.22) * size
        d = np.hypot(yy - cy, xx - cx)
        return amp * np.exp(-((d - r) ** 2) / (2 * (0.035 * size) ** 2))
    if kind == "line":
        theta = rng.uniform(0, math.pi)
        half = rng.uniform(0.25, 0.4) * size
        ux, uy = math.cos(theta), math.sin(theta)
        along = (xx - cx) * ux + (yy - cy) * uy
        across = -(xx - cx) * uy + (yy - cy) * ux
        taper = np.clip(half - np.abs(along), 0, 1.5) / 1.5
        return amp * taper * np.exp(-(across**2) / (2 * (0.03 * size) ** 2))
    raise ValueError(f"unknown shape kind {kind!r}")


def _render_device(size: int, amp: float, rng: np.random.Generator) -> np.ndarray:
    # near-vertical tube entering from the top edge
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    x0 = rng.uniform(0.1, 0.9) * size
    slope = rng.uniform(-0.3, 0.3)
    length = rng.uniform(0.5, 0.8) * size
    dist = np.abs(xx - (x0 + slope * yy)) / math.sqrt(1 + slope * slope)
    return amp * (yy < length) * np.exp(-(dist**2) / (2 * (0.025 * size) ** 2))


def _draw_state(present: bool, policy: ReportPolicy, in_context: bool, rng: np.random.Generator) -> MentionState:
    u = rng.random()
    if present:
        return MentionState.AFFIRMED if u < policy.p_affirm_given_present else MentionState.NOMENTION
    return MentionState.NEGATED if u < policy.p_negate(in_context) else MentionState.NOMENTION


def generate_sample(cfg: SynthConfig, index: int) -> tuple[np.ndarray, np.ndarray, list[MentionState]]:
    """One sample from its own stream keyed by (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.image_size
    img = 0.2 + cfg.background_noise * rng.standard_normal((s, s))
    in_context = False
    if cfg.context is not None:
        in_context = bool(rng.random() < cfg.context.prevalence)
        device = _render_device(s, cfg.context.amplitude, rng)
        if in_context:
            img += device
    truth = np.zeros(len(cfg.findings), dtype=np.int8)
    states = []
    for k, (spec, policy) in enumerate(zip(cfg.findings, cfg.report_policy)):
        present = rng.random() < spec.prevalence
        truth[k] = present
        amp = rng.uniform(*cfg.amplitude)
        shape = _render(spec.shape, s, amp, rng)
        if present:
            img += shape
        states.append(_draw_state(present, policy, in_context, rng))
    return _quantize(img), truth, states


def generate(cfg: SynthConfig) -> Dataset:
    vocab = cfg.vocabulary()
    images = np.empty((cfg.n_samples, cfg.image_size, cfg.image_size), dtype=np.float32)
    truth = np.empty((cfg.n_samples, len(cfg.findings)), dtype=np.int8)
    rows = []
    for i in range(cfg.n_samples):
        images[i], truth[i], states = generate_sample(cfg, i)
        rows.append(states)
    ids = [f"s{i:06d}" for i in range(cfg.n_samples)]
    if cfg.report_mode == "text":
        from .textlabeler import DEFAULT_RULES, Report, label_report, synth_report

        text_vocab = FindingVocabulary.from_names(vocab.names)
        rows = [
            label_report(Report(sid, synth_report(states, vocab, np.random.default_rng([cfg.seed, i, 7]))), text_vocab, DEFAULT_RULES)
            for i, (sid, states) in enumerate(zip(ids, rows))
        ]
    labels = LabelMatrix.from_states(rows, vocab, ids)
    return Dataset(images, labels, vocab, truth)


# --- split ------------------------------------------------------------------------


def split(
    dataset: Dataset, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    parts = order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]
    return tuple(dataset.subset(np.sort(p)) for p in parts)  # type: ignore[return-value]


# --- augmentation -----------------------------------------------------------------


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rotation + shift + scale about the image centre, bilinear, zero fill."""
    if rng.random() >= cfg.apply_prob:
        return image.copy()
    h, w = image.shape
    angle = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    shift = rng.uniform(-cfg.shift_frac, cfg.shift_frac, size=2) * np.array([h, w])
    scale = rng.uniform(*cfg.scale_range)
    return affine(image, angle, shift, scale)


def affine(image: np.ndarray, angle: float, shift: Sequence[float], scale: float) -> np.ndarray:
    if angle == 0.0 and scale == 1.0 and shift[0] == 0.0 and shift[1] == 0.0:
        return image.copy()
    h, w = image.shape
    c, s = math.cos(angle), math.sin(angle)
    # output -> input mapping: inverse of (scale * rotate) about the centre, then shift
    inv = np.array([[c, s], [-s, c]]) / scale
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - inv @ (centre + np.asarray(shift, dtype=np.float64))
    out = ndimage.affine_transform(image.astype(np.float64), inv, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment_batch(images: np.ndarray, cfg: AugmentConfig | None, rng: np.random.Generator) -> np.ndarray:
    if cfg is None:
        return images
    return np.stack([augment(img, cfg, rng) for img in images])


# --- PGM ----------------------------------------------------------------------------


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    h, w = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P5":
        raise PGMError(f"{path}: not a binary P5 PGM")
    fields: list[bytes] = []
    i = 2
    while len(fields) < 3:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise PGMError(f"{path}: truncated header")
        fields.append(buf[i:j])
        i = j
    i += 1  # single whitespace byte before the raster
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise PGMError(f"{path}: malformed header") from None
    if not 0 < maxval < 256:
        raise PGMError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    raster = np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=i) if len(buf) - i >= w * h else None
    if raster is None:
        raise PGMError(f"{path}: truncated raster")
    return (raster.reshape(h, w).astype(np.float32) / maxval).astype(np.float32)


# --- manifests ------------------------------------------------------------------------


def manifest_header(vocab: FindingVocabulary) -> list[str]:
    return ["sample_id", "image_path"] + [f"{name}_state" for name in vocab.names]


def save_manifest(dataset: Dataset, path: str | Path, image_dir: str | Path | None = None) -> None:
    """Write a manifest CSV plus one PGM per sample (images go next to the manifest by default)."""
    path = Path(path)
    image_dir = Path(image_dir) if image_dir is not None else path.parent / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    states = dataset.labels.states()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(manifest_header(dataset.vocab))
        for sid, img, row in zip(dataset.sample_ids, dataset.images, states):
            img_path = image_dir / f"{sid}.pgm"
            write_pgm(img_path, img)
            rel = img_path.relative_to(path.parent) if img_path.is_relative_to(path.parent) else img_path
            writer.writerow([sid, rel.as_posix()] + [s.value for s in row])


def load_manifest(path: str | Path, strict: bool = True, load_images: bool = True) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest (missing header)") from None
        if header[:2] != ["sample_id", "image_path"] or len(header) < 3:
            raise ManifestError(f"{path}:1: header must start with sample_id,image_path,<finding>_state")
        names = []
        for col in header[2:]:
            if not col.endswith("_state"):
                raise ManifestError(f"{path}:1: column {col!r} does not end in _state")
            names.append(col[: -len("_state")])
        vocab = FindingVocabulary.from_names(names)
        ids, paths, targets = [], [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ManifestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                targets.append(_parse_state_row(row[2:], vocab))
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            ids.append(row[0])
            paths.append(row[1])
    matrix = LabelMatrix(np.array(targets, dtype=np.int8).reshape(len(targets), vocab.n_heads), ids)
    keep_ids = set(enforce_consistency(matrix, strict=strict).sample_ids)
    keep = [i for i, sid in enumerate(ids) if sid in keep_ids]
    matrix = matrix.subset(keep)
    if load_images:
        images = [read_pgm(path.parent / paths[i]) for i in keep]
        arr = np.stack(images) if images else np.zeros((0, 1, 1), np.float32)
    else:
        arr = np.zeros((len(keep), 1, 1), np.float32)
    return Dataset(arr, matrix, vocab)


def _parse_state_row(cells: Sequence[str], vocab: FindingVocabulary) -> np.ndarray:
    """States are spelled affirmed|negated|nomention; a raw ``a/abar`` bit pair is also accepted."""
    row = np.zeros(vocab.n_heads, dtype=np.int8)
    for k, cell in enumerate(cells):
        cell = cell.strip()
        if "/" in cell:
            try:
                a, a_bar = (int(b) for b in cell.split("/"))
            except ValueError:
                raise ValueError(f"malformed bit pair {cell!r}") from None
            if a not in (0, 1) or a_bar not in (0, 1):
                raise ValueError(f"bit pair {cell!r} must use 0/1")
        else:
            a, a_bar = state_bits(MentionState.parse(cell))
        row[2 * k], row[2 * k + 1] = a, a_bar
    return row
