"""QP inverse-dynamics control of a planar biped with task-space ILC.

Library layout:

    model      robot description, kinematics, M / h / Jacobians
    simulator  ground-truth plant with injected model mismatch
    qp         dense convex QP solver (interior point, KKT-certified)
    controller per-tick inverse-dynamics QP and torque extraction
    encoding   periodic RBF feedforward signals and fitting
    ilc        iterative-learning loop over repeated trials
    gpr        feedforward database + Gaussian-process generalization
    harness    experiment configs, trials, metrics, CSV/SVG, CLI backend
"""

from importlib import resources

__version__ = "0.1.0"


def bundled_model_path(name: str = "biped"):
    """Filesystem path of a bundled robot descriptor ('biped', 'pendulum')."""
    ref = resources.files(__package__) / "data" / f"{name}.yaml"
    if not ref.is_file():
        raise FileNotFoundError(f"no bundled model named {name!r}")
    return str(ref)
