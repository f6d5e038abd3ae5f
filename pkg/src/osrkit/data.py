"""Synthetic open-set benchmark generation, CSV ingestion, and batch iteration.

A dataset bundle carries four roles: a labelled known-class training set, an
unlabelled background set used only for regularization at training time, a
labelled known-class test set, and an unlabelled test set of classes never
seen during training.  Background and unseen-test samples always come from
disjoint generating processes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, CsvFormatError

KUC_MODES = ("ring", "held_out_blobs", "uniform_box")

# Fraction of each known class used for training; the remainder is test.
TRAIN_FRACTION = 0.75


@dataclass(frozen=True)
class SyntheticSpec:
    """Declarative description of a synthetic Gaussian-blob benchmark."""

    input_dim: int = 2
    total_classes: int = 10
    kkc_count: int = 6
    uuc_count: int = 4
    samples_per_class: int = 200
    class_center_scale: float = 4.0
    cluster_std: float = 0.4
    kuc_mode: str = "uniform_box"
    seed: int = 0

    def validate(self) -> None:
        if min(self.input_dim, self.total_classes, self.kkc_count, self.uuc_count) < 1:
            raise ConfigError("all dataset counts must be >= 1")
        if self.samples_per_class < 2:
            raise ConfigError("samples_per_class must be >= 2 to split train/test")
        if self.kkc_count + self.uuc_count > self.total_classes:
            raise ConfigError(
                f"kkc_count + uuc_count = {self.kkc_count + self.uuc_count} exceeds "
                f"total_classes = {self.total_classes}"
            )
        if self.kuc_mode not in KUC_MODES:
            raise ConfigError(f"kuc_mode must be one of {KUC_MODES}, got {self.kuc_mode!r}")
        if self.kuc_mode == "held_out_blobs" and self.kkc_count + self.uuc_count == self.total_classes:
            raise ConfigError("held_out_blobs needs spare classes beyond KKC + UUC")
        if self.cluster_std < 0.0 or self.class_center_scale <= 0.0:
            raise ConfigError("cluster_std must be >= 0 and class_center_scale > 0")


@dataclass
class DatasetBundle:
    """The four dataset roles; labels are 1-based and lie in 1..class_count."""

    train_known_x: np.ndarray
    train_known_y: np.ndarray
    background_x: np.ndarray
    test_known_x: np.ndarray
    test_known_y: np.ndarray
    test_unknown_x: np.ndarray
    class_count: int

    @property
    def input_dim(self) -> int:
        return self.train_known_x.shape[1]


def generate(spec: SyntheticSpec) -> DatasetBundle:
    """Deterministically generate a bundle from the spec's seed.

    Gaussian blobs per class; a seeded random subset of classes becomes the
    known classes and a disjoint subset the unseen test classes.  Background
    samples come from kuc_mode and never from the unseen classes.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    d, spc = spec.input_dim, spec.samples_per_class

    centers = _separated_centers(spec, rng)
    order = rng.permutation(spec.total_classes)
    kkc_classes = np.sort(order[: spec.kkc_count])
    uuc_classes = np.sort(order[spec.kkc_count : spec.kkc_count + spec.uuc_count])
    spare_classes = np.sort(order[spec.kkc_count + spec.uuc_count :])

    n_train = max(1, int(round(TRAIN_FRACTION * spc)))
    if n_train >= spc:
        n_train = spc - 1

    train_x, train_y, test_x, test_y = [], [], [], []
    for label, cls in enumerate(kkc_classes, start=1):
        pts = centers[cls] + rng.normal(0.0, spec.cluster_std, size=(spc, d))
        train_x.append(pts[:n_train])
        test_x.append(pts[n_train:])
        train_y.append(np.full(n_train, label, dtype=np.int64))
        test_y.append(np.full(spc - n_train, label, dtype=np.int64))
    train_known_x = np.concatenate(train_x)
    train_known_y = np.concatenate(train_y)
    test_known_x = np.concatenate(test_x)
    test_known_y = np.concatenate(test_y)

    unknown = [centers[cls] + rng.normal(0.0, spec.cluster_std, size=(spc, d)) for cls in uuc_classes]
    test_unknown_x = np.concatenate(unknown)

    # Twice the training-set size: background pools are cheap and denser
    # coverage sharpens the learned boundaries.
    bg_count = 2 * spec.kkc_count * spc
    background_x = _draw_background(
        spec, rng, train_known_x, centers, kkc_classes, spare_classes, bg_count
    )

    return DatasetBundle(
        train_known_x=train_known_x,
        train_known_y=train_known_y,
        background_x=background_x,
        test_known_x=test_known_x,
        test_known_y=test_known_y,
        test_unknown_x=test_unknown_x,
        class_count=spec.kkc_count,
    )


def _separated_centers(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Class centers from a Gaussian prior, rejection-sampled so blobs stay distinct.

    A minimum pairwise gap of 8 cluster standard deviations keeps every class
    resolvable; without it, colliding blobs make per-seed results degenerate
    for every method alike.
    """
    min_gap = 8.0 * spec.cluster_std
    centers: list[np.ndarray] = []
    attempts = 0
    while len(centers) < spec.total_classes:
        c = rng.normal(0.0, spec.class_center_scale, size=spec.input_dim)
        attempts += 1
        if attempts > 10000 * spec.total_classes:
            raise ConfigError(
                "could not place separated class centers; "
                "increase class_center_scale or decrease cluster_std"
            )
        if all(np.linalg.norm(c - prev) >= min_gap for prev in centers):
            centers.append(c)
    return np.stack(centers)


def _draw_background(
    spec: SyntheticSpec,
    rng: np.random.Generator,
    train_known_x: np.ndarray,
    centers: np.ndarray,
    kkc_classes: np.ndarray,
    spare_classes: np.ndarray,
    count: int,
) -> np.ndarray:
    d = spec.input_dim
    if spec.kuc_mode == "ring":
        # Annulus just outside the known training data, centred on its mean.
        centroid = train_known_x.mean(axis=0)
        r_max = np.linalg.norm(train_known_x - centroid, axis=1).max()
        radii = rng.uniform(1.1 * r_max, 1.4 * r_max, size=count)
        dirs = rng.normal(size=(count, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        return centroid + radii[:, None] * dirs
    if spec.kuc_mode == "uniform_box":
        # Background classes are disjoint from the known classes, so box
        # samples landing inside a known blob are resampled.  Unseen-class
        # blob locations are NOT avoided: nothing about them may inform
        # training-time data.
        lo = train_known_x.min(axis=0)
        hi = train_known_x.max(axis=0)
        pad = 0.1 * (hi - lo)
        kkc_centers = centers[kkc_classes]
        radius = spec.cluster_std * (np.sqrt(d) + 1.5)
        accepted: list[np.ndarray] = []
        needed = count
        while needed > 0:
            draw = rng.uniform(lo - pad, hi + pad, size=(max(needed * 2, 16), d))
            dist = np.linalg.norm(draw[:, None, :] - kkc_centers[None, :, :], axis=2)
            keep = draw[dist.min(axis=1) > radius][:needed]
            accepted.append(keep)
            needed -= len(keep)
        return np.concatenate(accepted)
    # held_out_blobs: spare Gaussian classes disjoint from both known and
    # unseen-test classes.
    idx = spare_classes[np.arange(count) % len(spare_classes)]
    return centers[idx] + rng.normal(0.0, spec.cluster_std, size=(count, d))


# -- CSV ingestion -------------------------------------------------------------


def feature_columns(dim: int) -> list[str]:
    return [f"f{i}" for i in range(dim)]


def load_csv(path, expect_label: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a feature CSV with header f0..f{d-1}[, label]; labels are 1-based ints.

    Row order is preserved.  Malformed content raises CsvFormatError carrying
    the 1-based physical line number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file", line=1) from None
        header = [h.strip() for h in header]
        has_label = header and header[-1] == "label"
        feat_names = header[:-1] if has_label else header
        dim = len(feat_names)
        if dim == 0 or feat_names != feature_columns(dim):
            raise CsvFormatError(
                f"header must be f0..f{{d-1}}[, label], got {header}", line=1
            )
        if expect_label and not has_label:
            raise CsvFormatError("label column required but missing", line=1)

        features: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"expected {len(header)} cells, got {len(row)}", line=lineno
                )
            try:
                features.append([float(c) for c in row[:dim]])
            except ValueError as exc:
                raise CsvFormatError(f"non-numeric cell: {exc}", line=lineno) from None
            if has_label:
                try:
                    labels.append(int(row[dim]))
                except ValueError:
                    raise CsvFormatError(
                        f"non-integer label {row[dim]!r}", line=lineno
                    ) from None

    x = np.asarray(features, dtype=np.float64).reshape(len(features), dim)
    if has_label:
        y = np.asarray(labels, dtype=np.int64)
        if len(y) and y.min() < 1:
            raise CsvFormatError("labels must be >= 1")
        return x, y
    return x, None


def write_csv(path, x: np.ndarray, y: np.ndarray | None = None) -> None:
    """Write features (and optional labels) in the load_csv format, losslessly."""
    x = np.asarray(x, dtype=np.float64)
    header = feature_columns(x.shape[1]) + (["label"] if y is not None else [])
    lines = [",".join(header)]
    for i in range(x.shape[0]):
        cells = [repr(float(v)) for v in x[i]]
        if y is not None:
            cells.append(str(int(y[i])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- batching ------------------------------------------------------------------


def batch_iter(
    x: np.ndarray,
    y: np.ndarray | None,
    batch_size: int,
    seed,
    shuffle: bool = True,
):
    """Yield (x_batch, y_batch) covering the set exactly once; last batch may be short.

    The permutation is a deterministic function of the seed, which may be an
    int or a tuple such as (run_seed, epoch).
    """
    n = x.shape[0]
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    idx = np.arange(n)
    if shuffle:
        idx = np.random.default_rng(seed).permutation(n)
    for start in range(0, n, batch_size):
        sel = idx[start : start + batch_size]
        yield x[sel], (None if y is None else y[sel])
