"""Feedforward-signal database and Gaussian-process generalization.

The database stores the learned RBF weight matrix for each task
parameter (here the squat amplitude). A squared-exponential GP per
weight coordinate, all sharing one Cholesky factorization of the kernel
Gram matrix, maps an unseen task parameter to a full weight matrix:

    k(a, b) = sf2 * exp(-(a - b)^2 / (2 l^2))
    mean_c(x) = k_x^T (K + sn2 I)^-1 y_c

Hyperparameters are fixed (optionally grid-searched by leave-one-out
error) rather than optimized by marginal likelihood; the experiments
stay deterministic that way.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
import yaml

from . import encoding as enc
from .encoding import FeedforwardSignal


@dataclass(frozen=True)
class FeedforwardDatabase:
    """Signals keyed by scalar task parameter; shared encoding meta.

    The first entry pins num_basis / centers / widths / gain / omega;
    later entries must match. ``add`` returns a new database.
    """

    kappas: tuple[float, ...] = ()
    weights: tuple[np.ndarray, ...] = ()
    template: FeedforwardSignal | None = None

    def __len__(self) -> int:
        return len(self.kappas)

    def add(self, kappa: float, signal: FeedforwardSignal) -> "FeedforwardDatabase":
        kappa = float(kappa)
        if self.template is not None:
            t = self.template
            if signal.num_basis != t.num_basis:
                raise ValueError(
                    f"basis count mismatch: database has L = {t.num_basis}, "
                    f"new signal has L = {signal.num_basis}")
            if not (np.array_equal(signal.centers, t.centers)
                    and np.array_equal(signal.widths, t.widths)):
                raise ValueError("signal centers/widths differ from the database")
            if signal.gain != t.gain or signal.omega != t.omega:
                raise ValueError("signal gain/omega differ from the database")
            if signal.task_dim != t.task_dim:
                raise ValueError("signal task dimension differs from the database")
        kappas = list(self.kappas)
        weights = list(self.weights)
        if kappa in kappas:
            warnings.warn(f"replacing database entry kappa = {kappa}", stacklevel=2)
            i = kappas.index(kappa)
            weights[i] = signal.weights.copy()
        else:
            kappas.append(kappa)
            weights.append(signal.weights.copy())
        template = self.template if self.template is not None else \
            replace(signal, weights=np.zeros_like(signal.weights))
        return FeedforwardDatabase(kappas=tuple(kappas), weights=tuple(weights),
                                   template=template)

    def signal(self, kappa: float) -> FeedforwardSignal:
        i = self.kappas.index(float(kappa))
        return replace(self.template, weights=self.weights[i])

    def target_matrix(self) -> np.ndarray:
        """(N, L * task_dim) stacked weight vectors in kappa order."""
        return np.stack([w.reshape(-1) for w in self.weights])


def add_entry(db: FeedforwardDatabase, kappa: float,
              signal: FeedforwardSignal) -> FeedforwardDatabase:
    return db.add(kappa, signal)


@dataclass(frozen=True)
class GprHyperparameters:
    length_scale: float = 0.02        # m, the spacing of the bundled database
    signal_variance: float | None = None  # None: mean empirical target variance
    noise_variance: float = 1e-8

    def __post_init__(self):
        if self.length_scale <= 0.0:
            raise ValueError("length_scale must be > 0")
        if self.signal_variance is not None and self.signal_variance <= 0.0:
            raise ValueError("signal_variance must be > 0")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be >= 0")


def _kernel(a: np.ndarray, b: np.ndarray, sf2: float, ell: float) -> np.ndarray:
    d = a[:, None] - b[None, :]
    return sf2 * np.exp(-0.5 * (d / ell) ** 2)


@dataclass(frozen=True)
class GprModel:
    """Trained GP over the weight coordinates; immutable after train()."""

    kappas: np.ndarray          # (N,)
    alpha: np.ndarray           # (N, L * task_dim), (K + sn2 I)^-1 Y
    chol: np.ndarray            # Cholesky factor of K + sn2 I
    hyper: GprHyperparameters
    sf2: float                  # resolved signal variance
    template: FeedforwardSignal


def train(db: FeedforwardDatabase, hyper: GprHyperparameters | None = None) -> GprModel:
    """Factor the kernel Gram matrix once; one GP per weight coordinate."""
    hyper = hyper or GprHyperparameters()
    if len(db) < 2:
        raise ValueError(f"need at least 2 database entries, got {len(db)}")
    kappas = np.array(db.kappas, dtype=float)
    Y = db.target_matrix()
    if hyper.signal_variance is not None:
        sf2 = hyper.signal_variance
    else:
        sf2 = float(max(np.mean(np.var(Y, axis=0)), 1e-12))
    K = _kernel(kappas, kappas, sf2, hyper.length_scale)
    K[np.diag_indices_from(K)] += hyper.noise_variance
    try:
        chol = scipy.linalg.cholesky(K, lower=True)
    except scipy.linalg.LinAlgError as e:
        raise ValueError(
            "kernel Gram matrix is not positive definite; increase "
            "noise_variance or separate near-duplicate kappas") from e
    alpha = scipy.linalg.cho_solve((chol, True), Y)
    return GprModel(kappas=kappas, alpha=alpha, chol=chol, hyper=hyper,
                    sf2=sf2, template=db.template)


def predict(model: GprModel, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    """GP mean weights (L, task_dim) and per-coordinate predictive variance.

    All coordinates share the kernel, so the latent variance is common
    to every coordinate; it is returned broadcast per task dimension.
    """
    kq = np.atleast_1d(np.asarray(kappa, dtype=float))
    ks = _kernel(model.kappas, kq, model.sf2, model.hyper.length_scale)  # (N, 1)
    mean = ks.T @ model.alpha  # (1, L * dim)
    v = scipy.linalg.solve_triangular(model.chol, ks, lower=True).ravel()
    var = max(float(model.sf2 - v @ v), 0.0)
    t = model.template
    weights = mean.reshape(t.num_basis, t.task_dim)
    return weights, np.full(t.task_dim, var)


def predict_signal(model: GprModel, kappa: float) -> FeedforwardSignal:
    weights, _ = predict(model, kappa)
    return replace(model.template, weights=weights)


def loo_error(db: FeedforwardDatabase, hyper: GprHyperparameters) -> float:
    """Mean squared leave-one-out prediction error over the weights."""
    if len(db) < 3:
        raise ValueError("leave-one-out needs at least 3 entries")
    total = 0.0
    for i in range(len(db)):
        rest = FeedforwardDatabase(
            kappas=tuple(k for j, k in enumerate(db.kappas) if j != i),
            weights=tuple(w for j, w in enumerate(db.weights) if j != i),
            template=db.template)
        model = train(rest, hyper)
        pred, _ = predict(model, db.kappas[i])
        total += float(np.mean((pred - db.weights[i]) ** 2))
    return total / len(db)


def tune_length_scale(db: FeedforwardDatabase, grid,
                      hyper: GprHyperparameters | None = None) -> GprHyperparameters:
    """Pick the grid length scale with the lowest leave-one-out error."""
    hyper = hyper or GprHyperparameters()
    best = None
    for ell in grid:
        h = replace(hyper, length_scale=float(ell))
        err = loo_error(db, h)
        if best is None or err < best[0]:
            best = (err, h)
    return best[1]


# ---------------------------------------------------------------------------
# persistence: a directory of serialized signals plus an index file

def save_database(db: FeedforwardDatabase, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {"format": "ff-database/1", "entries": []}
    for kappa, w in zip(db.kappas, db.weights):
        fname = f"kappa_{kappa:.6g}.yaml"
        enc.save_signal(replace(db.template, weights=w), directory / fname)
        index["entries"].append({"kappa": float(kappa), "file": fname})
    with open(directory / "index.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(index, fh, sort_keys=False)


def load_database(directory) -> FeedforwardDatabase:
    directory = Path(directory)
    with open(directory / "index.yaml", "r", encoding="utf-8") as fh:
        index = yaml.safe_load(fh)
    if index.get("format") != "ff-database/1":
        raise ValueError(f"unsupported database format {index.get('format')!r}")
    db = FeedforwardDatabase()
    for entry in index["entries"]:
        sig = enc.load_signal(directory / entry["file"])
        db = db.add(entry["kappa"], sig)
    return db
