"""Periodic RBF encoding of learned task-space acceleration signals.

A signal is a normalized weighted sum of von-Mises-shaped basis functions
of the phase,

    f(phi) = r * sum_j w_j G_j(phi) / sum_j G_j(phi),
    G_j(phi) = exp(h_j (cos(phi - c_j) - 1)),

with one weight column per task dimension, evaluated by a phase
oscillator phi_dot = Omega. Weights are fitted to recorded samples by
ridge-regularized least squares on the normalized basis; the amplitude
gain r stays 1 during fitting (jointly fitting w and r is unidentifiable)
and is kept as a post-hoc modulation knob.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import yaml

TWO_PI = 2.0 * np.pi


def uniform_centers(L: int) -> np.ndarray:
    """c_j = 2 pi (j - 1) / L."""
    return TWO_PI * np.arange(L) / L


def uniform_widths(L: int) -> np.ndarray:
    """h_j = 1 / (1 - cos(2 pi / L)): ~ e^-1 overlap at neighboring centers.

    A single basis function is constant over the period, so any width
    works; 1.0 keeps the formula finite.
    """
    h = 1.0 if L == 1 else 1.0 / (1.0 - np.cos(TWO_PI / L))
    return np.full(L, h)


@dataclass(frozen=True)
class FeedforwardSignal:
    """Periodic task-space signal; immutable after construction."""

    weights: np.ndarray   # (L, task_dim)
    centers: np.ndarray   # (L,) rad in [0, 2 pi)
    widths: np.ndarray    # (L,) > 0
    gain: float = 1.0     # amplitude gain r
    omega: float = 0.0    # phase oscillator frequency, rad/s

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        c = np.asarray(self.centers, dtype=float)
        h = np.asarray(self.widths, dtype=float)
        L = c.shape[0]
        if L < 1:
            raise ValueError("at least one basis function required")
        if w.shape[0] != L or h.shape != (L,):
            raise ValueError(f"weights/centers/widths inconsistent: "
                             f"{w.shape}, {c.shape}, {h.shape}")
        if np.any(h <= 0.0):
            raise ValueError("widths must be > 0")
        if np.any(c < 0.0) or np.any(c >= TWO_PI):
            raise ValueError("centers must lie in [0, 2 pi)")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", h)

    @property
    def num_basis(self) -> int:
        return self.centers.shape[0]

    @property
    def task_dim(self) -> int:
        return self.weights.shape[1]

    def with_gain(self, gain: float) -> "FeedforwardSignal":
        return replace(self, gain=gain)


def zero_signal(L: int, task_dim: int, omega: float = 0.0) -> FeedforwardSignal:
    return FeedforwardSignal(weights=np.zeros((L, task_dim)),
                             centers=uniform_centers(L),
                             widths=uniform_widths(L), omega=omega)


def phase_advance(phi: float, omega: float, dt: float) -> float:
    """Phase oscillator step: (phi + omega dt) mod 2 pi.

    The double reduction keeps the result strictly inside [0, 2 pi):
    a % of a tiny negative value rounds up to 2 pi itself.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    return float((phi + omega * dt) % TWO_PI % TWO_PI)


def basis_values(phi, centers, widths) -> np.ndarray:
    """G_j(phi) = exp(h_j (cos(phi - c_j) - 1)), in (0, 1].

    The phase is canonicalized to [0, 2 pi) first, so any two phases with
    identical residue evaluate bitwise-identically.
    """
    centers = np.asarray(centers, dtype=float)
    widths = np.asarray(widths, dtype=float)
    if np.any(widths <= 0.0):
        raise ValueError("widths must be > 0")
    phi = np.asarray(phi, dtype=float) % TWO_PI % TWO_PI
    return np.exp(widths * (np.cos(phi[..., None] - centers) - 1.0))


def evaluate(signal: FeedforwardSignal, phi) -> np.ndarray:
    """Signal value at phase phi; (task_dim,) or (K, task_dim) for arrays."""
    phi_arr = np.atleast_1d(np.asarray(phi, dtype=float))
    G = basis_values(phi_arr, signal.centers, signal.widths)
    out = (G @ signal.weights) / G.sum(axis=1)[:, None] * signal.gain
    if np.isscalar(phi) or np.shape(phi) == ():
        return out[0]
    return out


@dataclass(frozen=True)
class FitReport:
    signal: FeedforwardSignal
    rms: float            # reconstruction RMS over the fitted samples
    coverage: float       # fraction of the period covered (1 - largest gap)


def fit(samples, phases, L: int = 25, ridge: float = 1e-6,
        omega: float = 0.0) -> FitReport:
    """Least-squares fit of an L-basis signal to (phase, value) samples.

    Minimizes sum_k |f(phi_k) - y_k|^2 + ridge |w|^2 per task dimension
    on shared uniform centers and widths. Phases leaving more than 10%
    of the period uncovered trigger a warning, not a failure.
    """
    y = np.asarray(samples, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    phi = np.asarray(phases, dtype=float) % TWO_PI
    K = phi.shape[0]
    if y.shape[0] != K:
        raise ValueError(f"{y.shape[0]} samples vs {K} phases")
    if K < L:
        raise ValueError(f"need at least L = {L} samples, got {K}")

    order = np.sort(phi)
    gaps = np.diff(np.concatenate([order, [order[0] + TWO_PI]]))
    coverage = 1.0 - float(gaps.max()) / TWO_PI
    if coverage < 0.9:
        warnings.warn(f"phases cover only {coverage:.0%} of the period",
                      stacklevel=2)

    centers = uniform_centers(L)
    widths = uniform_widths(L)
    G = basis_values(phi, centers, widths)
    B = G / G.sum(axis=1)[:, None]
    A = B.T @ B + ridge * np.eye(L)
    w = np.linalg.solve(A, B.T @ y)
    resid = B @ w - y
    rms = float(np.sqrt(np.mean(resid ** 2)))
    sig = FeedforwardSignal(weights=w, centers=centers, widths=widths,
                            gain=1.0, omega=omega)
    return FitReport(signal=sig, rms=rms, coverage=coverage)


def add(a: FeedforwardSignal, b: FeedforwardSignal) -> FeedforwardSignal:
    """Pointwise sum of two signals on identical basis and gain."""
    if a.num_basis != b.num_basis:
        raise ValueError(f"basis count mismatch: {a.num_basis} vs {b.num_basis}")
    if not (np.array_equal(a.centers, b.centers) and np.array_equal(a.widths, b.widths)):
        raise ValueError("signals use different centers/widths")
    if a.gain != b.gain:
        raise ValueError("signals use different amplitude gains")
    return replace(a, weights=a.weights + b.weights)


# ---------------------------------------------------------------------------
# serialization (used by the feedforward database)

def signal_to_dict(signal: FeedforwardSignal) -> dict:
    return {
        "format": "rbf-signal/1",
        "num_basis": signal.num_basis,
        "task_dim": signal.task_dim,
        "gain": float(signal.gain),
        "omega_radps": float(signal.omega),
        "centers_rad": [float(v) for v in signal.centers],
        "widths": [float(v) for v in signal.widths],
        "weights": [[float(v) for v in row] for row in signal.weights],
    }


def signal_from_dict(doc: dict) -> FeedforwardSignal:
    if doc.get("format") != "rbf-signal/1":
        raise ValueError(f"unsupported signal format {doc.get('format')!r}")
    return FeedforwardSignal(
        weights=np.array(doc["weights"], dtype=float),
        centers=np.array(doc["centers_rad"], dtype=float),
        widths=np.array(doc["widths"], dtype=float),
        gain=float(doc["gain"]),
        omega=float(doc["omega_radps"]),
    )


def save_signal(signal: FeedforwardSignal, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(signal_to_dict(signal), fh, sort_keys=False)


def load_signal(path) -> FeedforwardSignal:
    with open(path, "r", encoding="utf-8") as fh:
        return signal_from_dict(yaml.safe_load(fh))
