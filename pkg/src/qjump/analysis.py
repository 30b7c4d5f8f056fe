"""Ensemble statistics, steady-state preparation and fluorescence spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correlators import EstimatorResult, RunningStats
from .model import ModelError, ModelSpec
from .pdp import JumpEngine, RngStream, default_dt, uniform_sphere_state

__all__ = [
    "SpectrumResult",
    "ensemble_stats",
    "peak_fwhm",
    "prepare_steady_state",
    "spectrum_from_correlation",
]


def ensemble_stats(samples) -> EstimatorResult:
    """Per-point mean and standard error of a sample of complex trajectories.

    ``samples`` has shape (n,) or (n, m); standard errors are computed for
    the real and imaginary parts separately with the n-1 normalization.
    """
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.ndim != 2:
        raise ValueError("samples must be a 1-d or 2-d array")
    n = samples.shape[0]
    if n < 2:
        raise ValueError("at least 2 samples are needed")
    mean = samples.mean(axis=0)
    se_re = samples.real.std(axis=0, ddof=1) / np.sqrt(n)
    se_im = samples.imag.std(axis=0, ddof=1) / np.sqrt(n)
    return EstimatorResult(mean, se_re, se_im, n)


def prepare_steady_state(
    model: ModelSpec,
    rng: RngStream,
    n_samples: int = 1,
    horizon: float | None = None,
    dt: float | None = None,
) -> np.ndarray:
    """Steady-state samples: uniform initial draws evolved for a long horizon.

    Returns an (n_samples, d) array of normalized states whose ensemble
    covariance approximates the steady density matrix.  Requires a damped
    model; default horizon is 30/gamma.
    """
    if not model.gamma > 0.0:
        raise ModelError("steady-state preparation needs gamma > 0")
    total = model.gamma * sum(
        c.rate_factor * float(np.abs(c.op).max()) for c in model.channels
    )
    if total == 0.0:
        raise ModelError("model has no dissipation; no steady state is reached")
    if horizon is None:
        horizon = 30.0 / model.gamma
    dt = default_dt(model) if dt is None else float(dt)
    gens = [rng.substream(rng.stream_index + i).generator() for i in range(n_samples)]
    states = np.stack([uniform_sphere_state(g, model.dim) for g in gens])
    eng = JumpEngine(model, states[:, None, :], -horizon, gens, dt)
    eng.advance(0.0)
    return eng.normalized_states()[:, 0, :]


@dataclass(frozen=True)
class SpectrumResult:
    """Real spectrum on a symmetric frequency grid (units of the rate)."""

    frequencies: np.ndarray
    intensities: np.ndarray
    metadata: dict

    def __post_init__(self):
        f = self.frequencies
        if not np.allclose(f, -f[::-1], atol=1e-9 * max(1.0, abs(f[-1]))):
            raise ValueError("frequency grid must be symmetric about 0")


def spectrum_from_correlation(
    tau_grid,
    values,
    subtract_coherent: bool = True,
    window: str | None = None,
    metadata: dict | None = None,
) -> SpectrumResult:
    """Fluorescence spectrum from a one-sided correlation function.

    The tau -> infinity constant (estimated as the mean over the last 10% of
    the grid) is subtracted when ``subtract_coherent`` is set, since it
    carries the delta-shaped coherent line.  The correlation is extended to
    negative lags by Hermitian symmetry C(-tau) = conj(C(tau)) and transformed
    with a plain DFT: S(w) = dtau * Re sum_j C(tau_j) e^{-i w tau_j}.
    An optional Hann window is available for noisy inputs (a deliberate
    deviation when used; the default applies none).
    """
    tau = np.asarray(tau_grid, dtype=float)
    c = np.asarray(values.values if isinstance(values, EstimatorResult) else values, dtype=complex)
    if tau.ndim != 1 or tau.size != c.size or tau.size < 4:
        raise ValueError("need matching 1-d tau grid and values with >= 4 points")
    if abs(tau[0]) > 1e-12:
        raise ValueError("tau grid must start at 0")
    dtau = tau[1] - tau[0]
    if not np.allclose(np.diff(tau), dtau, rtol=1e-9, atol=1e-12 * max(dtau, 1.0)):
        raise ValueError("tau grid must be uniform")

    subtracted = 0.0 + 0.0j
    if subtract_coherent:
        tail = max(1, int(np.ceil(0.1 * c.size)))
        subtracted = c[-tail:].mean()
        c = c - subtracted

    n = c.size
    c = c.copy()
    # C(0) is the fixed point of the Hermitian symmetry; drop the (noise-only)
    # imaginary part so the transform is real
    c[0] = c[0].real
    ext = np.concatenate([np.conj(c[:0:-1]), c])  # tau = -(n-1)dtau .. (n-1)dtau
    if window == "hann":
        ext = ext * np.hanning(ext.size)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")
    length = ext.size
    spec_c = np.fft.fft(ext)
    freqs = 2.0 * np.pi * np.fft.fftfreq(length, d=dtau)
    # undo the offset of the first sample sitting at tau = -(n-1) dtau
    spec_c = spec_c * np.exp(1j * freqs * (n - 1) * dtau) * dtau
    order = np.argsort(freqs, kind="stable")
    meta = dict(metadata or {})
    meta.update(
        {
            "tau_max": float(tau[-1]),
            "dtau": float(dtau),
            "subtracted_constant": complex(subtracted),
            "window": window,
        }
    )
    return SpectrumResult(freqs[order], spec_c[order].real, meta)


def peak_fwhm(frequencies, intensities, center: float = 0.0, half_window: float | None = None) -> float:
    """Full width at half maximum of the peak nearest ``center``.

    Searches for the local maximum closest to ``center`` (restricted to
    |w - center| <= half_window when given) and interpolates the half-height
    crossings linearly on both sides.
    """
    f = np.asarray(frequencies, dtype=float)
    s = np.asarray(intensities, dtype=float)
    mask = np.ones(f.size, dtype=bool)
    if half_window is not None:
        mask = np.abs(f - center) <= half_window
        if not mask.any():
            raise ValueError("no frequencies inside the search window")
    idx = np.nonzero(mask)[0]
    peak = idx[np.argmax(s[idx])]
    height = s[peak]
    if height <= 0:
        raise ValueError("peak height must be positive")
    half = 0.5 * height

    def cross(direction: int) -> float:
        i = peak
        while 0 <= i + direction < f.size and s[i + direction] > half:
            i += direction
        j = i + direction
        if j < 0 or j >= f.size:
            raise ValueError("half-maximum crossing lies outside the grid")
        # linear interpolation between samples i and j
        frac = (s[i] - half) / (s[i] - s[j])
        return f[i] + frac * (f[j] - f[i])

    return cross(+1) - cross(-1)
