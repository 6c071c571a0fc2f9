"""Frequency analysis of per-frame error sequences.

Forward transform is the unnormalized DFT ``F_k = sum_t e_t exp(-2 pi i k t / T)``
and the inverse carries the ``1/T``.  ``naive_dft`` / ``naive_idft`` are the
direct O(T^2) sums kept as a reference for the FFT path.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from ._validation import check_choice, check_int

ERROR_METRICS = ("absrel", "rmse", "one_minus_delta1")
RATIO_FLOOR = 1e-12


class SymmetryError(ValueError):
    """Inverse transform left a significant imaginary part."""


class PartitionError(ValueError):
    """No band partition satisfies the request."""


@dataclass(frozen=True, eq=False)
class ErrorSequence:
    values: np.ndarray
    metric_name: str = "absrel"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.size < 2:
            raise ValueError("an error sequence needs at least 2 frames")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("error values must be finite and non-negative")
        check_choice(self.metric_name, "metric_name", ERROR_METRICS)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True, eq=False)
class ErrorSpectrum:
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.complex128).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def source_length(self) -> int:
        return self.coefficients.size

    def is_conjugate_symmetric(self, rtol: float = 1e-9) -> bool:
        c = self.coefficients
        mirror = np.conj(c[(-np.arange(c.size)) % c.size])
        scale = max(np.max(np.abs(c)), np.finfo(float).tiny)
        return bool(np.max(np.abs(c - mirror)) <= rtol * scale)


def _values(seq) -> np.ndarray:
    if isinstance(seq, ErrorSequence):
        return seq.values
    return np.asarray(seq, dtype=np.float64).reshape(-1)


def dft(seq) -> ErrorSpectrum:
    x = _values(seq)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    return ErrorSpectrum(np.fft.fft(x))


def idft(spec, strict: bool = True) -> np.ndarray:
    """Real sequence from a conjugate-symmetric spectrum.

    The imaginary remainder is dropped; if it reaches 1e-6 of the mean
    coefficient magnitude and ``strict`` is set, :class:`SymmetryError` is
    raised.
    """
    c = spec.coefficients if isinstance(spec, ErrorSpectrum) else np.asarray(spec, np.complex128)
    z = np.fft.ifft(c)
    scale = max(np.sum(np.abs(c)) / max(c.size, 1), np.finfo(float).tiny)
    if strict and np.max(np.abs(z.imag)) >= 1e-6 * scale:
        raise SymmetryError("spectrum is not conjugate-symmetric")
    return z.real.copy()


def _phase_matrix(T: int, sign: float) -> np.ndarray:
    k = np.arange(T)
    # reduce k*t mod T before scaling keeps the angle small and exact
    kt = np.outer(k, k) % T
    return np.exp(sign * 2j * np.pi * kt / T)


def naive_dft(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128).reshape(-1)
    return _phase_matrix(x.size, -1.0) @ x


def naive_idft(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.complex128).reshape(-1)
    return (_phase_matrix(c.size, 1.0) @ c) / c.size


# --------------------------------------------------------------------------
# bands

@dataclass(frozen=True)
class BandPartition:
    """Disjoint groups of non-negative frequency bins ``0 .. T//2``.

    ``edges`` has ``band_count + 1`` entries; band ``b`` holds bins
    ``edges[b] <= k < edges[b+1]``.  Band 0 is the DC bin alone.
    """

    length: int
    edges: tuple[int, ...]
    scheme: str = "exponential"

    def __post_init__(self):
        half = self.length // 2
        e = tuple(int(v) for v in self.edges)
        if len(e) < 3 or e[0] != 0 or e[1] != 1 or e[-1] != half + 1:
            raise PartitionError(f"edges must start 0, 1 and end at {half + 1}, got {e}")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise PartitionError(f"edges must be strictly increasing, got {e}")
        object.__setattr__(self, "edges", e)

    @property
    def band_count(self) -> int:
        return len(self.edges) - 1

    def bins(self, band: int) -> np.ndarray:
        return np.arange(self.edges[band], self.edges[band + 1])

    def band_of_bin(self) -> np.ndarray:
        """Band index of every bin ``0 .. T-1`` (negative frequencies mirrored)."""
        k = np.arange(self.length)
        folded = np.minimum(k, self.length - k)
        return np.searchsorted(np.asarray(self.edges), folded, side="right") - 1

    def sizes(self) -> list[int]:
        return [b - a for a, b in zip(self.edges, self.edges[1:])]


def make_band_partition(T: int, B: int, scheme: str = "exponential",
                        boundaries=None) -> BandPartition:
    """Split bins ``0 .. T//2`` into ``B`` bands.

    exponential: band ``b >= 1`` starts at ``round(H ** ((b-1)/(B-1)))`` pushed
    up to stay strictly increasing, ``H = T//2``; the last band takes the rest.
    linear: bins ``1 .. H`` cut into ``B - 1`` near-equal runs.
    custom: ``boundaries`` are the start bins of bands ``2 .. B-1``.
    """
    T = check_int(T, "T", 2)
    B = check_int(B, "B", 2)
    check_choice(scheme, "scheme", ("exponential", "linear", "custom"))
    half = T // 2
    if B > half + 1:
        raise PartitionError(f"cannot split {half + 1} bins into {B} non-empty bands")

    if scheme == "custom":
        if boundaries is None or len(boundaries) != B - 2:
            raise PartitionError(f"custom scheme needs {B - 2} interior boundaries")
        return BandPartition(T, (0, 1, *[int(b) for b in boundaries], half + 1), scheme)

    edges = [0, 1]
    for b in range(1, B - 1):
        if scheme == "exponential":
            target = int(round(half ** (b / (B - 1))))
        else:
            target = 1 + int(round(b * half / (B - 1)))
        lo = edges[-1] + 1
        hi = half + 1 - (B - 1 - b)  # leave one bin for each later band
        edges.append(min(max(target, lo), hi))
    edges.append(half + 1)
    return BandPartition(T, tuple(edges), scheme)


def band_reconstruction(seq, partition: BandPartition, band_index: int) -> np.ndarray:
    """Inverse transform of the spectrum with every bin outside the band zeroed."""
    x = _values(seq)
    if partition.length != x.size:
        raise ValueError(f"partition built for T={partition.length}, sequence has {x.size}")
    band_index = check_int(band_index, "band_index", 0, partition.band_count - 1)
    c = np.fft.fft(x)
    c[partition.band_of_bin() != band_index] = 0
    return idft(c, strict=False)


def band_metric(seq, partition: BandPartition, band_index: int) -> float:
    """Mean absolute value of the band-limited reconstruction.

    Band 0 reproduces the sequence mean, i.e. the aggregate metric.
    """
    return float(np.mean(np.abs(band_reconstruction(seq, partition, band_index))))


def band_table(seq, partition: BandPartition) -> np.ndarray:
    return np.array([band_metric(seq, partition, b) for b in range(partition.band_count)])


def band_energies(seq, partition: BandPartition) -> np.ndarray:
    """Energy ``(1/T) sum |F_k|^2`` carried by each band, both half-spectra."""
    x = _values(seq)
    power = np.abs(np.fft.fft(x)) ** 2 / x.size
    return np.bincount(partition.band_of_bin(), weights=power, minlength=partition.band_count)


def band_energy_fraction(seq, partition: BandPartition, bands) -> float:
    """Share of the fluctuation energy (mean removed) that falls in ``bands``.

    The DC bin is the aggregate metric itself and carries no consistency
    information, so it is left out of both numerator and denominator.
    """
    e = band_energies(seq, partition)
    e[0] = 0.0
    total = e.sum()
    if total == 0:
        return 0.0
    return float(e[list(bands)].sum() / total)


def magnitude_spectrum(seq) -> np.ndarray:
    """``|F_k|`` for ``k = 0 .. T//2``."""
    x = _values(seq)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    return np.abs(np.fft.fft(x))[: x.size // 2 + 1]


def amplitude_ratio(a, b) -> np.ndarray:
    """``|F_a(k)| / |F_b(k)|`` on the half spectrum; NaN marks a vanishing denominator."""
    xa, xb = _values(a), _values(b)
    if xa.size != xb.size:
        raise ValueError(f"length mismatch: {xa.size} vs {xb.size}")
    ma, mb = magnitude_spectrum(xa), magnitude_spectrum(xb)
    out = np.full(ma.shape, np.nan)
    ok = mb >= RATIO_FLOOR
    out[ok] = ma[ok] / mb[ok]
    return out


def lowpass_error_model(spec, k_thr: int, alpha: float) -> ErrorSpectrum:
    """Keep bins with ``min(k, T-k) <= k_thr`` and scale the rest by ``alpha``."""
    c = np.array(spec.coefficients if isinstance(spec, ErrorSpectrum) else spec, dtype=np.complex128)
    T = c.size
    k_thr = check_int(k_thr, "k_thr", 0, T // 2)
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    k = np.arange(T)
    high = np.minimum(k, T - k) > k_thr
    c[high] *= alpha
    return ErrorSpectrum(c)


def parseval_check(seq) -> tuple[float, float]:
    """Time-domain energy and ``(1/T) sum |F_k|^2``; equal up to rounding."""
    x = _values(seq)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    return float(np.sum(x * x)), float(np.sum(np.abs(np.fft.fft(x)) ** 2) / x.size)


# --------------------------------------------------------------------------
# reports

def _fmt(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def spectrum_csv(seq, fps: float = 1.0) -> str:
    mags = magnitude_spectrum(seq)
    T = len(_values(seq))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "frequency_hz", "amplitude"])
    for k, m in enumerate(mags):
        w.writerow([k, _fmt(k * fps / T), _fmt(m)])
    return buf.getvalue()


def ratio_csv(ratio: np.ndarray, T: int, fps: float = 1.0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin", "frequency_hz", "ratio"])
    for k, r in enumerate(ratio):
        w.writerow([k, _fmt(k * fps / T), _fmt(r)])
    return buf.getvalue()


def band_table_csv(rows: dict[str, np.ndarray]) -> str:
    """One row per labelled sequence, one column per band (``F0 .. F{B-1}``)."""
    B = len(next(iter(rows.values())))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", *[f"F{b}" for b in range(B)]])
    for name, vals in rows.items():
        w.writerow([name, *[_fmt(v) for v in vals]])
    return buf.getvalue()


def band_table_json(rows: dict[str, np.ndarray], partition: BandPartition) -> str:
    doc = {
        "length": partition.length,
        "scheme": partition.scheme,
        "edges": list(partition.edges),
        "bands": {name: [float(v) for v in vals] for name, vals in rows.items()},
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
