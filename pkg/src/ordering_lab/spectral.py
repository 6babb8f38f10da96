"""Power spectra of weight matrices over Z_p and the metrics derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerSpectrum:
    """Two-sided normalized power over k = 0..p-1 (DC at index 0)."""

    p: int
    P: np.ndarray
    source: str = "embedding"
    total_power: float = 1.0

    @property
    def half_band(self) -> range:
        """Frequencies k in [1, p/2)."""
        return range(1, (self.p + 1) // 2)


def dft_power(matrix: np.ndarray) -> np.ndarray:
    """Unnormalized power sum_d |X_hat[k, d]|^2 along axis 0."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    spec = np.fft.fft(x, axis=0)
    return (spec.real ** 2 + spec.imag ** 2).sum(axis=1)


def weight_spectrum(matrix: np.ndarray, source: str = "embedding") -> PowerSpectrum:
    """Spectrum of a ``p x d`` matrix along its length-p axis."""
    power = dft_power(matrix)
    total = float(power.sum())
    if total == 0.0:
        raise ValueError(f"{source}: all-zero weights have no power spectrum")
    return PowerSpectrum(p=len(power), P=power / total, source=source, total_power=total)


def spectral_entropy(spec: PowerSpectrum | np.ndarray) -> float:
    """Shannon entropy of P divided by log p, with 0 log 0 = 0."""
    P = spec.P if isinstance(spec, PowerSpectrum) else np.asarray(spec, dtype=np.float64)
    nz = P[P > 0]
    h = float(-np.sum(nz * np.log(nz)))
    return max(0.0, h / math.log(len(P)))


def _P(spec) -> np.ndarray:
    return spec.P if isinstance(spec, PowerSpectrum) else np.asarray(spec, dtype=np.float64)


def peak_frequency(spec: PowerSpectrum | np.ndarray) -> int:
    """Argmax over k in [1, p/2); ties go to the lowest k."""
    P = _P(spec)
    band = P[1:(len(P) + 1) // 2]
    if band.size == 0:
        raise ValueError("no non-DC frequencies below p/2")
    return int(np.argmax(band)) + 1


def significant_frequencies(spec: PowerSpectrum | np.ndarray, factor: float = 10.0) -> np.ndarray:
    """Frequencies k in [1, p/2) whose power exceeds ``factor / p``."""
    P = _P(spec)
    p = len(P)
    ks = np.arange(1, (p + 1) // 2)
    return ks[P[ks] > factor / p]


def low_freq_cutoff(p: int) -> int:
    return max(p // 20, 10)


def low_freq_power(spec: PowerSpectrum | np.ndarray) -> float:
    """Power in bins k < max(p/20, 10), DC included."""
    P = _P(spec)
    return float(P[:low_freq_cutoff(len(P))].sum())


def stride_harmonic_power(spec: PowerSpectrum | np.ndarray, s: int | None = None, count: int = 9) -> float:
    P = _P(spec)
    p = len(P)
    s = math.isqrt(p) if s is None else s
    return float(sum(P[(k * s) % p] for k in range(1, count + 1)))


@dataclass(frozen=True)
class HarmonicSeries:
    fundamental: int
    p: int
    terms: tuple[int, ...]


def harmonic_series(F: int, p: int, count: int) -> HarmonicSeries:
    """Repeated doubling of F modulo p, reflected to p - f above p/2."""
    if not 1 <= F < p:
        raise ValueError(f"fundamental must satisfy 1 <= F < p, got F={F}, p={p}")
    terms = []
    f = F
    for _ in range(count):
        r = f % p
        terms.append(p - r if 2 * r > p else r)
        f = 2 * r
    return HarmonicSeries(F, p, tuple(terms))


def neuron_spectra(matrix: np.ndarray) -> np.ndarray:
    """Folded one-sided spectra per column over k in [1, p/2), each summing to 1.

    DC is excluded. Columns whose non-DC power is round-off relative to their
    total power are dropped.
    """
    x = np.asarray(matrix, dtype=np.float64)
    p = x.shape[0]
    spec = np.fft.fft(x, axis=0)
    power = spec.real ** 2 + spec.imag ** 2
    half = (p + 1) // 2
    # bin k plus its mirror p-k, for k = 1 .. half-1
    folded = power[1:half] + power[p - 1:p - half:-1]
    totals = folded.sum(axis=0)
    keep = totals > 1e-20 * power.sum(axis=0)
    return folded[:, keep] / totals[keep]


def neuron_metrics(matrix: np.ndarray) -> dict:
    cols = neuron_spectra(matrix)
    p = np.asarray(matrix).shape[0]
    if cols.shape[1] == 0:
        return {"neuron_fourier_top1": None, "neuron_fourier_entropy": None}
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(cols > 0, cols * np.log(cols), 0.0).sum(axis=0)
    return {
        "neuron_fourier_top1": float(cols.max(axis=0).mean()),
        "neuron_fourier_entropy": float((h / math.log(p / 2)).mean()),
    }


class SignificanceTracker:
    """Cumulative set of ever-significant frequencies."""

    def __init__(self):
        self.ever: set[int] = set()

    def update(self, current) -> list[int]:
        new = sorted(int(k) for k in current if int(k) not in self.ever)
        self.ever.update(new)
        return new

    def state_dict(self) -> dict:
        return {"ever": sorted(self.ever)}

    def load_state_dict(self, state: dict) -> None:
        self.ever = {int(k) for k in state["ever"]}


def fourier_metrics(embedding: np.ndarray, decoder_by_class: np.ndarray, tracker: SignificanceTracker,
                    stride: int | None = None) -> dict:
    """Embedding and decoder spectral metrics for one epoch."""
    emb = weight_spectrum(embedding, "embedding")
    sig = significant_frequencies(emb)
    newly = tracker.update(sig)
    peak = peak_frequency(emb)
    out = {
        "low_freq_power": low_freq_power(emb),
        "spectral_entropy": spectral_entropy(emb),
        "peak_frequency": peak,
        "peak_power": float(emb.P[peak]),
        "n_significant_freqs": int(len(sig)),
        "stride_harmonic_power": stride_harmonic_power(emb, stride),
        "n_tracked_freqs": len(tracker.ever),
        "newly_acquired_freqs": newly,
        "freq_powers": {str(k): float(emb.P[k]) for k in sorted(tracker.ever)},
    }
    try:
        dec = weight_spectrum(decoder_by_class, "decoder")
        out["decoder_spectral_entropy"] = spectral_entropy(dec)
        out["decoder_peak_frequency"] = peak_frequency(dec)
        out["decoder_n_significant_freqs"] = int(len(significant_frequencies(dec)))
    except ValueError:
        out["decoder_spectral_entropy"] = out["decoder_peak_frequency"] = out["decoder_n_significant_freqs"] = None
    out.update(neuron_metrics(embedding))
    return out
