"""Records, task label maps, manifest I/O, fold splits, batching and synthetic data.

Manifest format (UTF-8, comma separated, with header)::

    record_id,fold,signal_file,labels
    rec001,3,signals/rec001.bin,NORM;SR

``signal_file`` is relative to the manifest and holds raw little-endian
float32 values in lead-major order (all samples of lead 0, then lead 1, ...).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .autodiff import Tensor

__all__ = [
    "ManifestError",
    "TaskSpec",
    "ECGRecord",
    "Dataset",
    "TASK_CLASS_COUNTS",
    "load_tasks",
    "get_task",
    "synthetic_task",
    "read_manifest",
    "read_signal",
    "write_signal",
    "load_manifest",
    "write_manifest",
    "split_folds",
    "SynthSpec",
    "synth_dataset",
    "batches",
]

log = logging.getLogger(__name__)

TASK_CLASS_COUNTS = {"all": 71, "diag": 44, "sub": 23, "super": 5, "form": 19, "rhythm": 12}
NUM_FOLDS = 10


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    name: str
    class_names: tuple[str, ...]
    mapping: dict[str, tuple[str, ...]]  # statement code -> class names

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def encode(self, statements: Sequence[str]) -> tuple[np.ndarray, int]:
        """Multi-hot vector for ``statements`` and the count of unmapped codes."""
        index = {c: i for i, c in enumerate(self.class_names)}
        vec = np.zeros(self.num_classes, dtype=np.float32)
        unknown = 0
        for code in statements:
            classes = self.mapping.get(code)
            if classes is None:
                unknown += 1
                continue
            for c in classes:
                vec[index[c]] = 1.0
        return vec, unknown


def _parse_tasks(text: str) -> dict[str, TaskSpec]:
    sections: dict[str, list[tuple[str, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, [])
            continue
        if current is None or line.count(",") != 1:
            raise ValueError(f"task file line {lineno}: expected 'statement_code,class_name' inside a section")
        code, cls = (p.strip() for p in line.split(","))
        sections[current].append((code, cls))
    tasks = {}
    for name, rows in sections.items():
        classes: list[str] = []
        mapping: dict[str, list[str]] = {}
        for code, cls in rows:
            if cls not in classes:
                classes.append(cls)
            mapping.setdefault(code, [])
            if cls not in mapping[code]:
                mapping[code].append(cls)
        tasks[name] = TaskSpec(name, tuple(classes), {k: tuple(v) for k, v in mapping.items()})
    return tasks


def load_tasks(path=None) -> dict[str, TaskSpec]:
    """Read a task mapping file; the bundled PTB-XL tables when ``path`` is None."""
    if path is None:
        text = resources.files("incepse.resources").joinpath("ptbxl_tasks.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return _parse_tasks(text)


def get_task(name: str, path=None) -> TaskSpec:
    tasks = load_tasks(path)
    if name not in tasks:
        raise KeyError(f"unknown task {name!r}; available: {sorted(tasks)}")
    return tasks[name]


def synthetic_task(num_classes: int, name: str = "synthetic") -> TaskSpec:
    names = tuple(f"c{i}" for i in range(num_classes))
    return TaskSpec(name, names, {n: (n,) for n in names})


@dataclass(frozen=True)
class ECGRecord:
    record_id: str
    signal: np.ndarray  # [leads, samples]
    fold: int
    labels: np.ndarray  # multi-hot [num_classes]
    statements: tuple[str, ...] = ()

    def __post_init__(self):
        if not 1 <= self.fold <= NUM_FOLDS:
            raise ValueError(f"record {self.record_id}: fold {self.fold} out of range 1..{NUM_FOLDS}")
        if self.signal.ndim != 2 or self.signal.shape[0] < 1:
            raise ValueError(f"record {self.record_id}: signal must be [leads, samples], got {self.signal.shape}")

    def with_signal(self, signal: np.ndarray) -> "ECGRecord":
        return dataclasses.replace(self, signal=signal)


@dataclass
class Dataset:
    records: list[ECGRecord]
    task: TaskSpec
    fs_hz: float = 100.0
    stats: object | None = None  # signal.LeadStats once standardized
    unknown_statements: int = 0
    _x: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)
    _y: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.records:
            shape = self.records[0].signal.shape
            for r in self.records:
                if r.signal.shape != shape:
                    raise ValueError(f"record {r.record_id} has signal shape {r.signal.shape}, expected {shape}")
                if r.labels.shape != (self.task.num_classes,):
                    raise ValueError(f"record {r.record_id} has {r.labels.shape[0]} labels, "
                                     f"task {self.task.name} has {self.task.num_classes} classes")

    def __len__(self) -> int:
        return len(self.records)

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    @property
    def num_leads(self) -> int:
        return self.records[0].signal.shape[0]

    @property
    def num_samples(self) -> int:
        return self.records[0].signal.shape[1]

    @property
    def signals(self) -> np.ndarray:
        """Stacked signals ``[N, leads, samples]`` (cached)."""
        if self._x is None:
            self._x = np.stack([r.signal for r in self.records])
        return self._x

    @property
    def labels(self) -> np.ndarray:
        if self._y is None:
            self._y = np.stack([r.labels for r in self.records]).astype(np.float32)
        return self._y


@dataclass(frozen=True)
class ManifestRow:
    row: int
    record_id: str
    fold: int
    signal_file: str
    statements: tuple[str, ...]


MANIFEST_HEADER = ["record_id", "fold", "signal_file", "labels"]


def read_manifest(path) -> list[ManifestRow]:
    """Parse and validate manifest rows; row numbers count data rows from 1."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {header}")
        for n, cols in enumerate(reader, 1):
            if not cols:
                continue
            if len(cols) != 4:
                raise ManifestError(f"malformed row {n}: expected 4 columns, got {len(cols)}")
            rid, fold_s, sig, labels = (c.strip() for c in cols)
            try:
                fold = int(fold_s)
            except ValueError:
                raise ManifestError(f"malformed fold {fold_s!r} at row {n}") from None
            if not 1 <= fold <= NUM_FOLDS:
                raise ManifestError(f"fold out of range at row {n}: {fold}")
            if not rid or not sig:
                raise ManifestError(f"malformed row {n}: empty record_id or signal_file")
            statements = tuple(s.strip() for s in labels.split(";") if s.strip())
            rows.append(ManifestRow(n, rid, fold, sig, statements))
    return rows


def read_signal(path, leads: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size == 0 or raw.size % leads:
        raise ValueError(f"{path}: {raw.size} values is not a positive multiple of {leads} leads")
    return raw.reshape(leads, -1).astype(np.float32)


def write_signal(path, signal: np.ndarray) -> None:
    np.ascontiguousarray(signal, dtype="<f4").tofile(path)


def load_manifest(manifest_path, task: TaskSpec, leads: int = 12, fs_hz: float = 100.0) -> Dataset:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records, unknown = [], 0
    for row in read_manifest(manifest_path):
        sig_path = base / row.signal_file
        if not sig_path.exists():
            raise ManifestError(f"missing signal file {sig_path} at row {row.row}")
        try:
            signal = read_signal(sig_path, leads)
        except ValueError as exc:
            raise ManifestError(f"row {row.row}: {exc}") from None
        labels, n_unknown = task.encode(row.statements)
        unknown += n_unknown
        records.append(ECGRecord(row.record_id, signal, row.fold, labels, row.statements))
    if unknown:
        log.warning("%d statement codes not in task %r were ignored", unknown, task.name)
    try:
        return Dataset(records, task, fs_hz, unknown_statements=unknown)
    except ValueError as exc:
        raise ManifestError(str(exc)) from None


def write_manifest(dataset: Dataset, out_dir, signal_dir: str = "signals") -> Path:
    """Write signals and a manifest under ``out_dir``; returns the manifest path.

    A record's original statement codes are written when known, otherwise the
    names of its positive classes.
    """
    out_dir = Path(out_dir)
    (out_dir / signal_dir).mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in dataset.records:
            rel = f"{signal_dir}/{r.record_id}.bin"
            write_signal(out_dir / rel, r.signal)
            codes = r.statements or tuple(c for c, on in zip(dataset.task.class_names, r.labels) if on)
            w.writerow([r.record_id, r.fold, rel, ";".join(codes)])
    return manifest


def split_folds(d: Dataset) -> tuple[Dataset, Dataset, Dataset]:
    """Folds 1-8 train, fold 9 validation, fold 10 test."""
    parts = {"training": [], "validation": [], "test": []}
    for r in d.records:
        key = "training" if r.fold <= 8 else "validation" if r.fold == 9 else "test"
        parts[key].append(r)
    for key, recs in parts.items():
        if not recs:
            raise ValueError(f"empty {key} split")
    return tuple(d.replace(records=parts[k]) for k in ("training", "validation", "test"))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic ECG-like generator.

    Each record draws one primary class from ``imbalance_ratios`` (uniform when
    None); with probability ``co_occurrence`` a second, different class is
    added. ``jitter`` is the maximum random circular shift, in samples,
    applied per record and class.
    """

    num_records: int = 500
    classes: int = 2
    imbalance_ratios: tuple[float, ...] | None = None
    fs: float = 100.0
    seconds: float = 10.0
    leads: int = 12
    noise_sigma: float = 0.5
    jitter: int = 0
    co_occurrence: float = 0.0


def class_template(k: int, spec: SynthSpec, seed: int) -> np.ndarray:
    """Clean [leads, samples] waveform for class ``k``.

    Families cycle through sinusoids, Gaussian spike trains and sawtooth
    bursts; the parameters inside a family move with ``k // 3``.
    """
    n = int(round(spec.fs * spec.seconds))
    t = np.arange(n) / spec.fs
    rng = np.random.default_rng([seed, 7919, k])
    idx = k // 3
    family = k % 3
    if family == 0:
        freq = 4.0 + 6.0 * idx + rng.uniform(0, 1)
        wave = np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    elif family == 1:
        rate = 1.1 + 0.45 * idx
        centers = np.arange(rng.uniform(0, 1 / rate), spec.seconds, 1 / rate)
        width = 0.025
        wave = np.exp(-0.5 * ((t[:, None] - centers[None, :]) / width) ** 2).sum(axis=1) * 2.0
    else:
        freq = 7.0 + 3.0 * idx
        period, on = 2.0, 0.7
        saw = 2.0 * ((freq * t) % 1.0) - 1.0
        wave = saw * (((t + rng.uniform(0, period)) % period) < on)
    gains = rng.uniform(0.5, 1.5, spec.leads) * rng.choice([-1.0, 1.0], spec.leads)
    return gains[:, None] * wave[None, :]


def synth_dataset(spec: SynthSpec, seed: int = 0) -> Dataset:
    if spec.classes < 2:
        raise ValueError(f"need at least 2 classes, got {spec.classes}")
    ratios = np.full(spec.classes, 1.0 / spec.classes) if spec.imbalance_ratios is None \
        else np.asarray(spec.imbalance_ratios, dtype=np.float64)
    if ratios.shape != (spec.classes,) or np.any(ratios < 0) or not math.isclose(ratios.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"imbalance_ratios must be {spec.classes} non-negative values summing to 1, "
                         f"got {spec.imbalance_ratios}")
    if not 0 <= spec.co_occurrence <= 1:
        raise ValueError(f"co_occurrence must be a probability, got {spec.co_occurrence}")
    templates = [class_template(k, spec, seed) for k in range(spec.classes)]
    n_samples = templates[0].shape[1]
    rng = np.random.default_rng(seed)
    folds = np.empty(spec.num_records, dtype=int)
    folds[rng.permutation(spec.num_records)] = np.arange(spec.num_records) % NUM_FOLDS + 1
    task = synthetic_task(spec.classes)
    records = []
    for i in range(spec.num_records):
        labels = np.zeros(spec.classes, dtype=np.float32)
        labels[rng.choice(spec.classes, p=ratios)] = 1.0
        if spec.co_occurrence and rng.random() < spec.co_occurrence:
            others = np.flatnonzero(labels == 0)
            labels[rng.choice(others)] = 1.0
        sig = np.zeros((spec.leads, n_samples))
        for k in np.flatnonzero(labels):
            shift = int(rng.integers(-spec.jitter, spec.jitter + 1)) if spec.jitter else 0
            sig += np.roll(templates[k], shift, axis=1)
        if spec.noise_sigma:
            sig += spec.noise_sigma * rng.standard_normal(sig.shape)
        records.append(ECGRecord(f"syn{i:05d}", sig.astype(np.float32), int(folds[i]), labels))
    return Dataset(records, task, spec.fs)


def batches(split: Dataset, batch_size: int, shuffle: bool = False, seed: int = 0,
            epoch: int = 0, dtype=None) -> Iterator[tuple[Tensor, Tensor]]:
    """Yield ``(signals [B, leads, L], labels [B, C])``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    x, y = split.signals, split.labels
    for lo in range(0, n, batch_size):
        idx = order[lo:lo + batch_size]
        xb = x[idx] if dtype is None else x[idx].astype(dtype)
        yb = y[idx] if dtype is None else y[idx].astype(dtype)
        yield Tensor(xb), Tensor(yb)
