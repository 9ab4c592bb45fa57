"""Experiment configuration, closed-loop trials, metrics and file outputs.

A squat trial drives the whole-body controller against the mismatched
plant for an integer number of task periods. The CoM reference holds x
constant at the stance value and modulates z sinusoidally,

    z_ref(t) = z_stance + A sin(Omega t),

with the analytic acceleration -A Omega^2 sin(Omega t) supplied as the
planned feedforward so the feedforward/feedback split is exact. A
learned feedforward signal, when given, is injected only after the
settling window (one period by default); recording and metrics likewise
ignore the settling window.
"""

from __future__ import annotations

import csv as _csv
import io
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

import taskilc

from . import __version__
from . import controller as ctl
from . import encoding as enc
from . import model as tm
from . import simulator as sim


class ConfigError(ValueError):
    pass


class TrialAbort(RuntimeError):
    """Trial failed mid-episode; carries the partial log."""

    def __init__(self, message, partial_log=None):
        super().__init__(message)
        self.partial_log = partial_log


def stance_q(model: tm.RobotModel, crouch: float) -> np.ndarray:
    """Symmetric crouched stance with flat feet resting on the ground.

    Leg pattern (hip, knee, ankle) = (crouch, -2 crouch, crouch) keeps each
    foot flat and its ankle directly below the hip; the base height is then
    chosen so the lowest contact point touches z = 0.
    """
    if model.n % 3 != 0:
        raise ValueError("stance_q expects legs with (hip, knee, ankle) triples")
    q = np.zeros(model.nq)
    for leg in range(model.n // 3):
        q[3 + 3 * leg + 0] = crouch
        q[3 + 3 * leg + 1] = -2.0 * crouch
        q[3 + 3 * leg + 2] = crouch
    lowest = min(
        tm.point_position(model, q, c.link, p)[1]
        for c in model.contacts for p in c.points
    )
    q[1] -= lowest
    return q


def crouch_limits(model: tm.RobotModel) -> tuple[float, float]:
    """Crouch angle range allowed by the joint limits (legs assumed alike)."""
    lo, hi = 0.0, np.inf
    for leg in range(model.n // 3):
        hip, knee, ankle = model.joints[3 * leg:3 * leg + 3]
        hi = min(hi, hip.limit[1], -knee.limit[0] / 2.0, ankle.limit[1])
        lo = max(lo, hip.limit[0], -knee.limit[1] / 2.0, ankle.limit[0])
    return max(lo, 0.05), hi  # keep clear of the straight-leg singularity


def com_height_range(model: tm.RobotModel) -> tuple[float, float]:
    """Reachable stance CoM heights over the crouch manifold."""
    lo, hi = crouch_limits(model)
    z = np.zeros(model.nq)

    def com_z(c):
        q = stance_q(model, c)
        return float(tm.com_state(model, q, z).position[1])

    return com_z(hi), com_z(lo)  # deeper crouch -> lower CoM


@dataclass(frozen=True)
class ExperimentConfig:
    """One squat experiment; everything needed to reproduce it exactly."""

    model_path: str = ""
    mismatch: sim.MismatchSpec = sim.DEFAULT_MISMATCH
    amplitude: float = 0.06       # m
    frequency: float = 0.25       # Hz
    gains_profile: str = "full"   # "full" or "reduced" (P' = 0.2 P)
    iterations: int = 2
    periods: int = 3
    dt: float = 1e-3
    substep_dt: float = 1e-4
    crouch: float = 0.6           # rad, deep enough for +-0.08 m CoM travel
    settle_periods: int = 1
    num_basis: int = 25
    ridge: float = 1e-6
    learning_gain: float = 1.0
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if not self.model_path:
            object.__setattr__(self, "model_path", taskilc.bundled_model_path("biped"))
        if self.frequency <= 0.0:
            raise ConfigError("frequency must be > 0")
        if self.periods < 3:
            raise ConfigError("periods must be >= 3 (settle + record margin)")
        if self.amplitude < 0.0:
            raise ConfigError("amplitude must be >= 0")
        if self.gains_profile not in ("full", "reduced"):
            raise ConfigError(f"unknown gains profile {self.gains_profile!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.settle_periods < 1 or self.settle_periods >= self.periods:
            raise ConfigError("settle_periods must be in [1, periods)")

    @property
    def omega(self) -> float:
        return 2.0 * np.pi * self.frequency

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def load_model(self) -> tm.RobotModel:
        return tm.load_model(self.model_path)

    def check_reachable(self, model: tm.RobotModel) -> None:
        """Static reachability sweep of the CoM reference over one period."""
        q0 = stance_q(model, self.crouch)
        z0 = float(tm.com_state(model, q0, np.zeros(model.nq)).position[1])
        z_lo, z_hi = com_height_range(model)
        margin = 0.01
        lo_need = z0 - self.amplitude
        hi_need = z0 + self.amplitude
        if lo_need < z_lo + margin or hi_need > z_hi - margin:
            raise ConfigError(
                f"amplitude {self.amplitude} m unreachable from stance CoM "
                f"z = {z0:.3f} m (joint limits allow [{z_lo:.3f}, {z_hi:.3f}] m "
                f"with {margin} m margin)")

    def gains(self, model: tm.RobotModel) -> ctl.ControlGains:
        g = ctl.ControlGains.defaults(model)
        return g.reduced() if self.gains_profile == "reduced" else g


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = asdict(config)
    doc["mismatch"] = asdict(config.mismatch)
    for key, val in list(doc["mismatch"].items()):
        if isinstance(val, Mapping):
            doc["mismatch"][key] = dict(val)
        elif isinstance(val, tuple):
            doc["mismatch"][key] = list(val)
    return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    mm = dict(doc.pop("mismatch"))
    if isinstance(mm.get("payload_point"), list):
        mm["payload_point"] = tuple(mm["payload_point"])
    return ExperimentConfig(mismatch=sim.MismatchSpec(**mm), **doc)


# ---------------------------------------------------------------------------
# trial log

@dataclass(frozen=True)
class TrialLog:
    """Per-tick record of one closed-loop episode."""

    time: np.ndarray          # (K,)
    x_ref: np.ndarray         # (K, 2)
    x: np.ndarray             # (K, 2)
    xdot_ref: np.ndarray      # (K, 2)
    xdot: np.ndarray          # (K, 2)
    xddot_des: np.ndarray     # (K, 2)
    feedforward: np.ndarray   # (K, 2), learned injection only
    feedback: np.ndarray      # (K, 2)
    qddot: np.ndarray         # (K, nq)
    lam: np.ndarray           # (K, mc)
    tau: np.ndarray           # (K, n)
    cop: np.ndarray           # (K, n_flat_contacts)
    qp_status: tuple[str, ...]
    qp_residuals: np.ndarray  # (K, 4)
    dt: float
    omega: float
    stance_com: np.ndarray    # (2,)
    contact_names: tuple[str, ...]
    joint_names: tuple[str, ...]
    lam_labels: tuple[str, ...]

    def __post_init__(self):
        K = self.time.shape[0]
        if K > 1:
            steps = np.diff(self.time)
            if np.any(steps <= 0) or np.max(np.abs(steps - self.dt)) > 1e-9:
                raise ValueError("times must increase by dt")
        for name in ("x_ref", "x", "xddot_des", "feedforward", "feedback",
                     "qddot", "lam", "tau", "qp_residuals"):
            if getattr(self, name).shape[0] != K:
                raise ValueError(f"{name} must have one record per tick")

    @property
    def ticks(self) -> int:
        return self.time.shape[0]

    @property
    def err_z(self) -> np.ndarray:
        return self.x_ref[:, 1] - self.x[:, 1]


def _lam_labels(model: tm.RobotModel) -> tuple[str, ...]:
    labels = []
    for c in model.contacts:
        comps = ("fx_N", "fz_N", "m_Nm") if c.kind == tm.FLAT else ("fx_N", "fz_N")
        labels += [f"lam_{c.name}_{p}" for p in comps]
    return tuple(labels)


def squat_reference(stance_com: np.ndarray, amplitude: float, omega: float,
                    t: float) -> ctl.TaskReference:
    s = np.sin(omega * t)
    c = np.cos(omega * t)
    return ctl.TaskReference(
        x_ref=np.array([stance_com[0], stance_com[1] + amplitude * s]),
        xdot_ref=np.array([0.0, amplitude * omega * c]),
        xddot_ref=np.array([0.0, -amplitude * omega * omega * s]),
    )


DRIFT_ABORT = 1e-3  # m, clear violation of the 1e-4 contact-drift budget


def run_trial(config: ExperimentConfig,
              ff: enc.FeedforwardSignal | None = None) -> TrialLog:
    """Closed loop controller -> plant for periods * period seconds.

    The learned feedforward (if any) is evaluated at phase Omega t and
    injected from the end of the settling window onward. Deterministic:
    identical configs produce identical logs.
    """
    model = config.load_model()
    config.check_reachable(model)
    plant = sim.make_plant(model, config.mismatch, dt=config.dt,
                           substep_dt=config.substep_dt)
    q0 = stance_q(model, config.crouch)
    state = sim.init_state(plant, q0)
    gains = config.gains(model)
    zeros = np.zeros(model.nq)
    stance_com = tm.com_state(model, q0, zeros).position.copy()
    posture_ref = q0.copy()
    omega = config.omega
    K = int(round(config.periods * config.period / config.dt))
    settle_t = config.settle_periods * config.period

    nq, n, mc = model.nq, model.n, model.contact_rows
    flat_names = tuple(c.name for c in model.contacts if c.kind == tm.FLAT)
    log = {
        "time": np.zeros(K), "x_ref": np.zeros((K, 2)), "x": np.zeros((K, 2)),
        "xdot_ref": np.zeros((K, 2)), "xdot": np.zeros((K, 2)),
        "xddot_des": np.zeros((K, 2)), "feedforward": np.zeros((K, 2)),
        "feedback": np.zeros((K, 2)), "qddot": np.zeros((K, nq)),
        "lam": np.zeros((K, mc)), "tau": np.zeros((K, n)),
        "cop": np.zeros((K, len(flat_names))), "qp_residuals": np.zeros((K, 4)),
    }
    statuses: list[str] = []

    def build(upto: int) -> TrialLog:
        return TrialLog(
            time=log["time"][:upto], x_ref=log["x_ref"][:upto], x=log["x"][:upto],
            xdot_ref=log["xdot_ref"][:upto], xdot=log["xdot"][:upto],
            xddot_des=log["xddot_des"][:upto], feedforward=log["feedforward"][:upto],
            feedback=log["feedback"][:upto], qddot=log["qddot"][:upto],
            lam=log["lam"][:upto], tau=log["tau"][:upto], cop=log["cop"][:upto],
            qp_status=tuple(statuses[:upto]), qp_residuals=log["qp_residuals"][:upto],
            dt=config.dt, omega=omega, stance_com=stance_com,
            contact_names=flat_names,
            joint_names=tuple(j.name for j in model.joints),
            lam_labels=_lam_labels(model))

    for k in range(K):
        t = k * config.dt
        ref = squat_reference(stance_com, config.amplitude, omega, t)
        ff_val = None
        if ff is not None and t >= settle_t - 1e-12:
            ff_val = enc.evaluate(ff, (omega * t) % enc.TWO_PI)
        try:
            tau, diag = ctl.control_step(model, state, ref, posture_ref, gains,
                                         ff=ff_val)
            com = tm.com_state(model, state.q, state.qdot)
            log["time"][k] = t
            log["x_ref"][k] = ref.x_ref
            log["x"][k] = com.position
            log["xdot_ref"][k] = ref.xdot_ref
            log["xdot"][k] = com.velocity
            log["xddot_des"][k] = diag.xddot_des
            log["feedforward"][k] = diag.ff_learned
            log["feedback"][k] = diag.feedback
            log["qddot"][k] = diag.qddot
            log["lam"][k] = diag.lam
            log["tau"][k] = diag.tau
            log["cop"][k] = [diag.cop[name][0] for name in flat_names]
            log["qp_residuals"][k] = diag.qp_residuals
            statuses.append(diag.qp_status)
            state = sim.step(plant, state, tau)
        except (ctl.ControlError, sim.SimulationError) as e:
            raise TrialAbort(f"trial aborted at t = {t:.4f} s: {e}",
                             partial_log=build(k)) from e
        drift = sim.contact_drift(plant, state)
        if drift > DRIFT_ABORT:
            raise TrialAbort(
                f"contact drift {drift:.2e} m breached {DRIFT_ABORT} m "
                f"at t = {t:.4f} s", partial_log=build(k + 1))
    return build(K)


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class TrialMetrics:
    tracking_rms: float   # m, CoM_z error RMS after settling
    tracking_max: float   # m
    feedback_rms: float   # m/s^2, vector RMS of the PD feedback term
    torque_rms: float     # N m, over all joints
    torque_peak: float    # N m, largest magnitude after settling
    ticks: int


def compute_metrics(log: TrialLog, settle_periods: int = 1) -> TrialMetrics:
    period = 2.0 * np.pi / log.omega if log.omega > 0 else 0.0
    t0 = settle_periods * period
    mask = log.time >= t0 - 1e-12
    if not np.any(mask):
        raise ValueError("log shorter than the settling window")
    err = log.err_z[mask]
    fb = log.feedback[mask]
    tau = log.tau[mask]
    return TrialMetrics(
        tracking_rms=float(np.sqrt(np.mean(err ** 2))),
        tracking_max=float(np.max(np.abs(err))),
        feedback_rms=float(np.sqrt(np.mean(np.sum(fb ** 2, axis=1)))),
        torque_rms=float(np.sqrt(np.mean(tau ** 2))),
        torque_peak=float(np.max(np.abs(tau))),
        ticks=int(mask.sum()),
    )


# ---------------------------------------------------------------------------
# experiment report

@dataclass(frozen=True)
class ExperimentReport:
    runs: tuple[tuple[str, TrialLog], ...]
    metrics: dict[str, TrialMetrics]
    config_echo: dict
    version: str = __version__
    signals: dict[str, enc.FeedforwardSignal] = field(default_factory=dict)

    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.runs)

    def log(self, label: str) -> TrialLog:
        for l, lg in self.runs:
            if l == label:
                return lg
        raise KeyError(f"no run labeled {label!r}")


def save_report(report: ExperimentReport, out_dir) -> Path:
    """CSV per run + report.yaml (config echo, metrics, version)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for label, log in report.runs:
        fname = "run_" + _slug(label) + ".csv"
        write_csv(log, out / fname)
        files[label] = fname
    doc = {
        "format": "taskilc-report/1",
        "version": report.version,
        "config": report.config_echo,
        "runs": [{"label": label, "csv": files[label],
                  "metrics": asdict(report.metrics[label])}
                 for label, _ in report.runs],
    }
    with open(out / "report.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    for label, signal in report.signals.items():
        enc.save_signal(signal, out / f"signal_{_slug(label)}.yaml")
    return out / "report.yaml"


def _slug(label: str) -> str:
    out = []
    for ch in label:
        if ch.isalnum():
            out.append(ch)
        elif ch == "'":
            out.append("p")
        else:
            out.append("_")
    return "".join(out)


# ---------------------------------------------------------------------------
# CSV schema
#
# One header row, comma separator, '.' decimal point, no locale anywhere.
# Columns, in order:
#   time_s, xref_z_m, x_z_m, err_z_m, ff_z_mps2, fb_z_mps2,
#   tau_<joint>_Nm ... , lam_<contact>_<fx_N|fz_N|m_Nm> ... ,
#   cop_<contact>_x_m ... , qp_status
# Floats are written with repr (shortest exact round trip).

def csv_header(log: TrialLog) -> list[str]:
    cols = ["time_s", "xref_z_m", "x_z_m", "err_z_m", "ff_z_mps2", "fb_z_mps2"]
    cols += [f"tau_{name}_Nm" for name in log.joint_names]
    cols += list(log.lam_labels)
    cols += [f"cop_{name}_x_m" for name in log.contact_names]
    cols.append("qp_status")
    return cols


def write_csv(log: TrialLog, path) -> None:
    err = log.err_z
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(csv_header(log)) + "\n")
        for k in range(log.ticks):
            row = [repr(float(v)) for v in (
                log.time[k], log.x_ref[k, 1], log.x[k, 1], err[k],
                log.feedforward[k, 1], log.feedback[k, 1],
                *log.tau[k], *log.lam[k], *log.cop[k])]
            row.append(log.qp_status[k])
            fh.write(",".join(row) + "\n")


def read_csv(path) -> dict[str, np.ndarray]:
    """Columns back as arrays; qp_status stays a string array."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        if name == "qp_status":
            out[name] = np.array(col, dtype=object)
        else:
            out[name] = np.array([float(v) for v in col])
    return out


# ---------------------------------------------------------------------------
# SVG rendering (two panels: CoM_z trajectories and CoM_z error)

_COLORS = {
    "reference": "#2ca02c",
    "i-1": "#1f77b4",
    "i": "#d62728",
    "i'": "#c9a227",
    "i''": "#9467bd",
}
_FALLBACK = ("#17becf", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22")


def _color(label: str, k: int) -> str:
    return _COLORS.get(label, _FALLBACK[k % len(_FALLBACK)])


class _Panel:
    """Maps data to pixel space and accumulates SVG elements."""

    def __init__(self, x0, y0, w, h, xlim, ylim, title, ylabel):
        self.x0, self.y0, self.w, self.h = x0, y0, w, h
        self.xlim, self.ylim = xlim, ylim
        self.title, self.ylabel = title, ylabel
        self.elements: list[str] = []

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo or 1.0) * self.w

    def py(self, y):
        lo, hi = self.ylim
        return self.y0 + self.h - (y - lo) / (hi - lo or 1.0) * self.h

    def polyline(self, xs, ys, color, dash=None, width=1.5):
        # decimate long traces: pixel resolution needs ~2 points per px
        step = max(1, len(xs) // (2 * int(self.w)))
        pts = " ".join(f"{self.px(x):.2f},{self.py(y):.2f}"
                       for x, y in zip(xs[::step], ys[::step]))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.elements.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="{width}"'
            f'{dash_attr} points="{pts}"/>')

    def frame(self) -> list[str]:
        out = [f'<rect x="{self.x0}" y="{self.y0}" width="{self.w}" '
               f'height="{self.h}" fill="none" stroke="#333"/>']
        out.append(f'<text x="{self.x0 + self.w / 2:.0f}" y="{self.y0 - 8}" '
                   f'text-anchor="middle" font-size="14">{self.title}</text>')
        out.append(f'<text x="{self.x0 - 52}" y="{self.y0 + self.h / 2:.0f}" '
                   f'font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 {self.x0 - 52} {self.y0 + self.h / 2:.0f})"'
                   f'>{self.ylabel}</text>')
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            xv = self.xlim[0] + frac * (self.xlim[1] - self.xlim[0])
            yv = self.ylim[0] + frac * (self.ylim[1] - self.ylim[0])
            xp, yp = self.px(xv), self.py(yv)
            out.append(f'<line x1="{xp:.1f}" y1="{self.y0 + self.h}" '
                       f'x2="{xp:.1f}" y2="{self.y0 + self.h + 4}" stroke="#333"/>')
            out.append(f'<text x="{xp:.1f}" y="{self.y0 + self.h + 16}" '
                       f'text-anchor="middle" font-size="10">{xv:.3g}</text>')
            out.append(f'<line x1="{self.x0 - 4}" y1="{yp:.1f}" '
                       f'x2="{self.x0}" y2="{yp:.1f}" stroke="#333"/>')
            out.append(f'<text x="{self.x0 - 6}" y="{yp + 3:.1f}" '
                       f'text-anchor="end" font-size="10">{yv:.3g}</text>')
        return out + self.elements


def render_svg(report: ExperimentReport, path) -> None:
    """Two stacked panels: CoM_z (reference + runs) and CoM_z error."""
    if not report.runs:
        raise ValueError("report has no runs to plot")
    ref_log = report.runs[0][1]
    tmax = max(lg.time[-1] for _, lg in report.runs)
    z_all = [ref_log.x_ref[:, 1]] + [lg.x[:, 1] for _, lg in report.runs]
    zlo = min(float(np.min(a)) for a in z_all)
    zhi = max(float(np.max(a)) for a in z_all)
    pad = 0.05 * (zhi - zlo or 1.0)
    errs = [lg.err_z for _, lg in report.runs]
    emax = max(float(np.max(np.abs(e))) for e in errs) or 1e-6

    top = _Panel(80, 40, 700, 230, (0.0, tmax), (zlo - pad, zhi + pad),
                 "CoM height", "CoM_z [m]")
    bot = _Panel(80, 330, 700, 230, (0.0, tmax), (-1.1 * emax, 1.1 * emax),
                 "CoM_z tracking error", "error [m]")
    top.polyline(ref_log.time, ref_log.x_ref[:, 1], _COLORS["reference"],
                 dash="6,4")
    legend = [("reference", _COLORS["reference"], "6,4")]
    for k, (label, lg) in enumerate(report.runs):
        color = _color(label, k)
        top.polyline(lg.time, lg.x[:, 1], color)
        bot.polyline(lg.time, lg.err_z, color)
        legend.append((label, color, None))

    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             '<svg xmlns="http://www.w3.org/2000/svg" width="860" height="640" '
             'viewBox="0 0 860 640">',
             '<rect width="860" height="640" fill="white"/>']
    parts += top.frame()
    parts += bot.frame()
    parts.append('<text x="430" y="600" text-anchor="middle" font-size="12">'
                 'time [s]</text>')
    for k, (label, color, dash) in enumerate(legend):
        y = 50 + 18 * k
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        parts.append(f'<line x1="795" y1="{y}" x2="820" y2="{y}" '
                     f'stroke="{color}" stroke-width="2"{dash_attr}/>')
        parts.append(f'<text x="824" y="{y + 4}" font-size="11">{_xml(label)}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


def _xml(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
