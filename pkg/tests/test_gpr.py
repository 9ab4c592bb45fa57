"""Feedforward database and GP generalization over the task parameter."""

import numpy as np
import pytest

from taskilc import encoding as enc
from taskilc import gpr


def make_signal(weights):
    w = np.asarray(weights, dtype=float)
    L = w.shape[0]
    return enc.FeedforwardSignal(weights=w, centers=enc.uniform_centers(L),
                                 widths=enc.uniform_widths(L),
                                 omega=2 * np.pi * 0.25)


def smooth_db(kappas, L=6, dim=2):
    """Weights varying smoothly (affinely) with kappa."""
    rng = np.random.default_rng(3)
    base = rng.normal(size=(L, dim))
    slope = rng.normal(size=(L, dim))
    db = gpr.FeedforwardDatabase()
    for k in kappas:
        db = db.add(k, make_signal(base + k * slope))
    return db


# ---------------------------------------------------------------------------
# database

def test_add_entry_grows_database():
    db = gpr.FeedforwardDatabase()
    db = db.add(0.02, make_signal(np.ones((4, 2))))
    assert len(db) == 1
    assert db.kappas == (0.02,)


def test_duplicate_kappa_replaced_with_warning():
    db = gpr.FeedforwardDatabase()
    db = db.add(0.02, make_signal(np.ones((4, 2))))
    with pytest.warns(UserWarning, match="replacing"):
        db = db.add(0.02, make_signal(2 * np.ones((4, 2))))
    assert len(db) == 1
    assert np.all(db.weights[0] == 2.0)


def test_mismatched_basis_count_names_both():
    db = gpr.FeedforwardDatabase()
    db = db.add(0.02, make_signal(np.ones((4, 2))))
    with pytest.raises(ValueError, match=r"L = 4.*L = 6"):
        db.add(0.04, make_signal(np.ones((6, 2))))


# ---------------------------------------------------------------------------
# training

def test_zero_targets_predict_zero():
    db = gpr.FeedforwardDatabase()
    for k in (0.02, 0.04, 0.06):
        db = db.add(k, make_signal(np.zeros((5, 2))))
    model = gpr.train(db)
    w, _ = gpr.predict(model, 0.05)
    assert np.max(np.abs(w)) < 1e-12


def test_noise_free_interpolation():
    db = smooth_db([0.02, 0.08])
    model = gpr.train(db, gpr.GprHyperparameters(noise_variance=0.0))
    for i, k in enumerate(db.kappas):
        w, _ = gpr.predict(model, k)
        assert np.max(np.abs(w - db.weights[i])) < 1e-8


def test_paper_database_trains_with_defaults():
    db = smooth_db([0.02, 0.04, 0.06, 0.08])
    model = gpr.train(db)
    w, var = gpr.predict(model, 0.05)
    assert w.shape == (6, 2)
    assert np.all(var >= 0.0)


def test_train_requires_two_entries():
    db = smooth_db([0.02])
    with pytest.raises(ValueError, match="at least 2"):
        gpr.train(db)


def test_near_duplicate_kappas_reported():
    db = smooth_db([0.02, 0.02 + 1e-15, 0.04])
    with pytest.raises(ValueError, match="positive definite"):
        gpr.train(db, gpr.GprHyperparameters(noise_variance=0.0))


# ---------------------------------------------------------------------------
# prediction properties

def test_prediction_linear_in_targets():
    # linearity of the GP mean in the targets holds at fixed hyperparameters
    db = smooth_db([0.02, 0.04, 0.06, 0.08])
    doubled = gpr.FeedforwardDatabase(
        kappas=db.kappas, weights=tuple(2 * w for w in db.weights),
        template=db.template)
    hyper = gpr.GprHyperparameters(signal_variance=1.0)
    w1, _ = gpr.predict(gpr.train(db, hyper), 0.05)
    w2, _ = gpr.predict(gpr.train(doubled, hyper), 0.05)
    assert np.max(np.abs(w2 - 2 * w1)) < 1e-10


def test_variance_at_training_points_bounded():
    db = smooth_db([0.02, 0.04, 0.06, 0.08])
    hyper = gpr.GprHyperparameters(noise_variance=1e-8)
    model = gpr.train(db, hyper)
    for k in db.kappas:
        _, var = gpr.predict(model, k)
        assert np.all(var <= 1e-8 + 1e-10)


def test_variance_grows_with_distance():
    db = smooth_db([0.02, 0.04, 0.06, 0.08])
    model = gpr.train(db)
    grid = 0.08 + np.linspace(0.0, 0.2, 30)
    vals = [gpr.predict(model, k)[1][0] for k in grid]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))


def test_predict_signal_carries_template_meta():
    db = smooth_db([0.02, 0.04, 0.06])
    sig = gpr.predict_signal(gpr.train(db), 0.05)
    assert sig.omega == db.template.omega
    assert np.array_equal(sig.centers, db.template.centers)


# ---------------------------------------------------------------------------
# length-scale grid search

def test_tune_length_scale_returns_grid_member():
    db = smooth_db([0.02, 0.04, 0.06, 0.08])
    grid = [0.005, 0.02, 0.08]
    hyper = gpr.tune_length_scale(db, grid)
    assert hyper.length_scale in grid
    # affine targets: longer correlation should beat a very short one
    short = gpr.loo_error(db, gpr.GprHyperparameters(length_scale=0.005))
    best = gpr.loo_error(db, hyper)
    assert best <= short


# ---------------------------------------------------------------------------
# persistence

def test_database_roundtrip(tmp_path):
    db = smooth_db([0.02, 0.04, 0.06, 0.08])
    gpr.save_database(db, tmp_path / "db")
    back = gpr.load_database(tmp_path / "db")
    assert back.kappas == db.kappas
    for a, b in zip(back.weights, db.weights):
        assert np.array_equal(a, b)
    assert np.array_equal(back.template.centers, db.template.centers)
