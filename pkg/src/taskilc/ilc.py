"""Iterative learning over repeated trials of the same task.

Iteration 1 runs without any learned signal. After each trial the PD
feedback contribution over the last full period is recorded, encoded as
a periodic RBF signal, and added onto the running feedforward for the
next repetition:

    ff_i(phi) = ff_{i-1}(phi) + gain * fit(feedback_{i-1})(phi)

With two iterations this is exactly "record once, replay once"; more
iterations accumulate the fits (a unit-gain ILC update, with an optional
learning gain in (0, 1]). The current-cycle PD feedback stays active in
every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import encoding as enc
from . import gpr
from . import harness as hn


@dataclass(frozen=True)
class RecordedFeedback:
    """Steady-state feedback samples of one trial, indexed by phase."""

    phases: np.ndarray     # (K,) rad, monotone mod 2 pi
    samples: np.ndarray    # (K, task_dim) m/s^2
    omega: float           # rad/s
    iteration: int = 1
    kappa: float = 0.0     # task parameter (squat amplitude, m)

    def __post_init__(self):
        if self.phases.shape[0] != self.samples.shape[0]:
            raise ValueError("sample count must match phase count")
        if self.phases.shape[0] == 0:
            raise ValueError("no samples recorded")


def record_feedback(trial: hn.TrialLog, omega: float, iteration: int = 1,
                    kappa: float = 0.0) -> RecordedFeedback:
    """Extract the last full period of feedback from a trial.

    The last period is steady state by construction (the settling prefix
    and any feedforward switch-on transient lie earlier), so it is the
    cleanest window to encode. Phases follow the trial clock,
    phi = (omega t) mod 2 pi.
    """
    if omega <= 0.0:
        raise ValueError("omega must be > 0")
    period = 2.0 * np.pi / omega
    duration = trial.ticks * trial.dt
    if duration < period - 1e-9:
        raise ValueError(
            f"trial of {duration:.3f} s is shorter than one period ({period:.3f} s)")
    t_start = duration - period
    mask = trial.time >= t_start - 1e-12
    phases = (omega * trial.time[mask]) % enc.TWO_PI
    return RecordedFeedback(phases=phases, samples=trial.feedback[mask].copy(),
                            omega=omega, iteration=iteration, kappa=kappa)


def update_feedforward(previous: enc.FeedforwardSignal | None,
                       recorded: RecordedFeedback, L: int = 25,
                       ridge: float = 1e-6,
                       gain: float = 1.0) -> enc.FeedforwardSignal:
    """previous + gain * fit(recorded), pointwise in phase.

    Signals share uniform centers and widths, so the pointwise sum is a
    plain weight sum. With previous = None the result is just the fitted
    recording.
    """
    if not 0.0 < gain <= 1.0:
        raise ValueError("learning gain must be in (0, 1]")
    fitted = enc.fit(recorded.samples, recorded.phases, L=L, ridge=ridge,
                     omega=recorded.omega).signal
    if gain != 1.0:
        fitted = replace(fitted, weights=gain * fitted.weights)
    if previous is None:
        return fitted
    return enc.add(previous, fitted)


def iteration_labels(n: int) -> tuple[str, ...]:
    if n == 1:
        return ("i-1",)
    if n == 2:
        return ("i-1", "i")
    return tuple(f"iter{k}" for k in range(1, n + 1))


def run_ilc(config: hn.ExperimentConfig, iterations: int | None = None
            ) -> hn.ExperimentReport:
    """Run N repetitions of the squat task with the learning update.

    The report carries one labeled TrialLog per iteration plus, under
    ``signals``, the feedforward injected into each iteration (absent
    for iteration 1) and the final updated signal under "learned". A
    trial failure aborts with the partial report attached.
    """
    n_iter = config.iterations if iterations is None else iterations
    if n_iter < 1:
        raise ValueError("iterations must be >= 1")
    labels = iteration_labels(n_iter)
    runs = []
    metrics = {}
    signals: dict[str, enc.FeedforwardSignal] = {}
    ff: enc.FeedforwardSignal | None = None
    try:
        for i in range(1, n_iter + 1):
            label = labels[i - 1]
            log = hn.run_trial(config, ff=ff)
            runs.append((label, log))
            metrics[label] = hn.compute_metrics(log, config.settle_periods)
            if ff is not None:
                signals[label] = ff
            recorded = record_feedback(log, config.omega, iteration=i,
                                       kappa=config.amplitude)
            ff = update_feedforward(ff, recorded, L=config.num_basis,
                                    ridge=config.ridge,
                                    gain=config.learning_gain)
    except hn.TrialAbort as e:
        partial = hn.ExperimentReport(
            runs=tuple(runs), metrics=metrics,
            config_echo=hn.config_to_dict(config), signals=signals)
        raise hn.TrialAbort(str(e), partial_log=partial) from e
    signals["learned"] = ff
    report = hn.ExperimentReport(
        runs=tuple(runs), metrics=metrics,
        config_echo=hn.config_to_dict(config), signals=signals)
    if config.out_dir:
        out = Path(config.out_dir)
        hn.save_report(report, out)
        for i, label in enumerate(labels):
            if label in signals:
                name = (f"signal_squat_k{config.amplitude:.6g}"
                        f"_w{config.omega:.6g}_iter{i + 1}.yaml")
                enc.save_signal(signals[label], out / name)
    return report


def learned_signal(report: hn.ExperimentReport) -> enc.FeedforwardSignal:
    """The signal injected into the final iteration of an ILC report.

    This is "the learned feedforward term" that the generalization
    database stores: for a two-iteration run it is the fit of the first
    iteration's feedback, i.e. the signal that produced the improved
    final trial.
    """
    labels = report.labels()
    if len(labels) >= 2 and labels[-1] in report.signals:
        return report.signals[labels[-1]]
    if "learned" in report.signals:
        return report.signals["learned"]
    raise ValueError("report carries no learned signal")


@dataclass(frozen=True)
class GeneralizationResult:
    """Closed-loop comparison at an unseen task amplitude."""

    report: hn.ExperimentReport        # runs: i-1 (no ff), i (direct), i'' (GPR)
    database: gpr.FeedforwardDatabase
    model: gpr.GprModel
    query: float
    query_signal: enc.FeedforwardSignal


def build_database(config: hn.ExperimentConfig, amplitudes,
                   iterations: int = 2) -> gpr.FeedforwardDatabase:
    """Learn one feedforward signal per amplitude and collect them."""
    db = gpr.FeedforwardDatabase()
    for amp in amplitudes:
        cfg = replace(config, amplitude=float(amp), out_dir=None)
        report = run_ilc(cfg, iterations)
        db = db.add(float(amp), learned_signal(report))
    return db


def run_generalization(config: hn.ExperimentConfig,
                       amplitudes=(0.02, 0.04, 0.06, 0.08),
                       query: float = 0.05,
                       hyper: gpr.GprHyperparameters | None = None
                       ) -> GeneralizationResult:
    """Database over the amplitudes, GP query, closed-loop comparison.

    The three runs at the query amplitude are labeled like the figures:
    i-1 without feedforward, i with the directly learned signal, i''
    with the database-generalized signal.
    """
    db = build_database(config, amplitudes)
    model = gpr.train(db, hyper)
    sig_query = gpr.predict_signal(model, query)

    cfg_q = replace(config, amplitude=float(query), out_dir=None)
    direct = run_ilc(cfg_q, 2)
    log_base = direct.log("i-1")
    log_direct = direct.log("i")
    log_gpr = hn.run_trial(cfg_q, ff=sig_query)

    runs = (("i-1", log_base), ("i", log_direct), ("i''", log_gpr))
    metrics = {label: hn.compute_metrics(log, config.settle_periods)
               for label, log in runs}
    signals = {"i": learned_signal(direct), "i''": sig_query}
    report = hn.ExperimentReport(runs=runs, metrics=metrics,
                                 config_echo=hn.config_to_dict(cfg_q),
                                 signals=signals)
    if config.out_dir:
        out = Path(config.out_dir)
        hn.save_report(report, out)
        gpr.save_database(db, out / "database")
    return GeneralizationResult(report=report, database=db, model=model,
                                query=float(query), query_signal=sig_query)
