"""Butterworth bandpass design, zero-phase filtering and per-lead standardization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

__all__ = [
    "BandpassSpec",
    "BiquadCascade",
    "design_bandpass",
    "frequency_response",
    "apply_zero_phase",
    "LeadStats",
    "lead_stats",
    "standardize",
    "write_stats",
    "read_stats",
]


@dataclass(frozen=True)
class BandpassSpec:
    low_hz: float = 1.0
    high_hz: float = 45.0
    fs_hz: float = 100.0
    order: int = 3

    def __post_init__(self):
        nyq = self.fs_hz / 2
        if self.high_hz >= nyq:
            raise ValueError(f"cutoff at or above Nyquist: high {self.high_hz} Hz, Nyquist {nyq} Hz")
        if not 0 < self.low_hz < self.high_hz:
            raise ValueError(f"need 0 < low < high, got low={self.low_hz}, high={self.high_hz}")
        if not 1 <= self.order <= 8:
            raise ValueError(f"order must be in 1..8, got {self.order}")


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order sections ``(b0, b1, b2, a1, a2)`` plus an overall gain.

    Each section is ``(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)``.
    """

    sections: np.ndarray  # [n, 5]
    gain: float

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for _, _, _, a1, a2 in self.sections])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def as_sos(self) -> np.ndarray:
        """scipy-style ``[n, 6]`` array with the gain folded into the first section."""
        sos = np.zeros((len(self.sections), 6))
        sos[:, :3] = self.sections[:, :3]
        sos[:, 3] = 1.0
        sos[:, 4:] = self.sections[:, 3:]
        sos[0, :3] *= self.gain
        return sos


def design_bandpass(spec: BandpassSpec) -> BiquadCascade:
    """Digital Butterworth bandpass of prototype order ``spec.order``.

    Analog lowpass prototype, lowpass-to-bandpass around pre-warped edges,
    then the bilinear transform. The result has ``order`` sections, each with
    zeros at z = 1 and z = -1.
    """
    n = spec.order
    fs2 = 2.0 * spec.fs_hz
    w_lo = fs2 * math.tan(math.pi * spec.low_hz / spec.fs_hz)
    w_hi = fs2 * math.tan(math.pi * spec.high_hz / spec.fs_hz)
    bw = w_hi - w_lo
    w0 = math.sqrt(w_lo * w_hi)

    proto = [np.exp(1j * math.pi * (2 * k + n - 1) / (2 * n)) for k in range(1, n + 1)]
    # each prototype pole p maps to the roots of s^2 - p*bw*s + w0^2
    pairs = []
    for p in proto:
        if p.imag < -1e-12:
            continue  # handled via its conjugate
        half = p * bw / 2
        disc = np.sqrt(half * half - w0 * w0 + 0j)
        s1, s2 = half + disc, half - disc
        if abs(p.imag) <= 1e-12:
            pairs.append((s1, s2))
        else:
            pairs.append((s1, np.conj(s1)))
            pairs.append((s2, np.conj(s2)))

    analog_poles = np.array([s for pair in pairs for s in pair])
    # analog gain bw^n with n zeros at s=0; the bilinear map sends them to z=1
    # and the n zeros at infinity to z=-1
    gain = float(np.real(bw ** n * fs2 ** n / np.prod(fs2 - analog_poles)))

    sections = []
    for s1, s2 in pairs:
        z1 = (fs2 + s1) / (fs2 - s1)
        z2 = (fs2 + s2) / (fs2 - s2)
        a1 = float(np.real(-(z1 + z2)))
        a2 = float(np.real(z1 * z2))
        sections.append((1.0, 0.0, -1.0, a1, a2))
    cascade = BiquadCascade(np.array(sections, dtype=np.float64), gain)
    if not cascade.is_stable():
        raise ArithmeticError("designed filter has a pole on or outside the unit circle")
    return cascade


def frequency_response(f: BiquadCascade, freqs_hz, fs_hz: float) -> np.ndarray:
    """Complex response ``H(e^{jw})`` of the cascade at the given frequencies."""
    z = np.exp(-2j * np.pi * np.asarray(freqs_hz, dtype=np.float64) / fs_hz)  # z^-1
    h = np.full(z.shape, f.gain, dtype=np.complex128)
    for b0, b1, b2, a1, a2 in f.sections:
        h *= (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    return h


def apply_zero_phase(x, f: BiquadCascade) -> np.ndarray:
    """Forward-backward filtering along the last axis with odd-reflection padding.

    The pad length is three times the total filter order (``6 * sections``).
    """
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * 2 * len(f.sections)
    if x.shape[-1] <= padlen:
        raise ValueError(f"signal too short: {x.shape[-1]} samples, need more than {padlen}")
    return scipy.signal.sosfiltfilt(f.as_sos(), x, axis=-1, padtype="odd", padlen=padlen)


@dataclass(frozen=True)
class LeadStats:
    mean: np.ndarray  # [leads]
    std: np.ndarray  # [leads]


def lead_stats(signals) -> LeadStats:
    """Per-lead mean and population std over a stack ``[N, leads, samples]``."""
    arr = np.asarray(signals, dtype=np.float64)
    mean = arr.mean(axis=(0, 2))
    std = arr.std(axis=(0, 2))
    for i, s in enumerate(std):
        if not s > 0:
            raise ValueError(f"zero variance in lead {i}")
    return LeadStats(mean, std)


def standardize(dataset, stats_source):
    """Z-score every lead of ``dataset`` with statistics from ``stats_source``.

    ``stats_source`` is a dataset (normally the training split) or a
    :class:`LeadStats`. Returns a new dataset carrying the stats it used.
    """
    stats = stats_source if isinstance(stats_source, LeadStats) else lead_stats(
        np.stack([r.signal for r in stats_source.records]))
    mean = stats.mean[:, None]
    std = stats.std[:, None]
    records = [r.with_signal(((r.signal - mean) / std).astype(r.signal.dtype)) for r in dataset.records]
    return dataset.replace(records=records, stats=stats)


def write_stats(stats: LeadStats, path) -> None:
    """One ``index,mean,std`` line per lead, full repr precision."""
    lines = [f"{i},{float(m)!r},{float(s)!r}" for i, (m, s) in enumerate(zip(stats.mean, stats.std))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats(path) -> LeadStats:
    rows = [line.split(",") for line in Path(path).read_text().splitlines() if line.strip()]
    rows.sort(key=lambda r: int(r[0]))
    return LeadStats(np.array([float(r[1]) for r in rows]), np.array([float(r[2]) for r in rows]))
