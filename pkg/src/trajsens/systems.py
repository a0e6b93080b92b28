"""Closed-loop benchmark systems behind one evaluation interface.

Three kinds are supported: continuous nonlinear ODEs, guard-switched hybrid
systems, and discrete-time maps with file-loaded neural feedback controllers.
ODE parameters, domains, and initial boxes follow common literature choices;
step sizes and horizons follow the benchmark defaults recorded per system.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError, NotFoundError, ParseError

FieldFn = Callable[[np.ndarray], np.ndarray]
GuardFn = Callable[[np.ndarray], bool]


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


ACTIVATIONS = {"relu": _relu, "sigmoid": _sigmoid, "tanh": np.tanh}


@dataclass(frozen=True)
class ControllerSpec:
    """Feedforward state-feedback law: affine layers with a hidden activation.

    `layers` holds (weights, bias) pairs with weights shaped (out, in); the
    hidden activation is applied after every layer except the last.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    activation: str
    source: str = ""

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ParseError("controller has an empty layer list")
        if self.activation not in ACTIVATIONS:
            raise ParseError(f"unknown activation {self.activation!r}")
        width = self.layers[0][0].shape[1]
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise DimensionError(f"controller layer {i} is not an affine map")
            if w.shape[1] != width:
                raise DimensionError(
                    f"controller layer {i} expects input width {w.shape[1]}, "
                    f"previous layer produces {width}"
                )
            width = w.shape[0]

    @property
    def in_width(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_width(self) -> int:
        return self.layers[-1][0].shape[0]


def controller_forward(ctrl: ControllerSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the control u = g(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (ctrl.in_width,):
        raise DimensionError(
            f"controller expects input of width {ctrl.in_width}, got shape {x.shape}"
        )
    act = ACTIVATIONS[ctrl.activation]
    a = x
    for w, b in ctrl.layers[:-1]:
        a = act(w @ a + b)
    w, b = ctrl.layers[-1]
    return w @ a + b


def load_controller(path) -> ControllerSpec:
    """Load a controller from a JSON file with `layers` and `activation`."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read controller file {path}: {exc}") from exc
    return controller_from_dict(raw, source=str(path))


def controller_from_dict(raw, source: str = "") -> ControllerSpec:
    if not isinstance(raw, dict) or "layers" not in raw or "activation" not in raw:
        raise ParseError("controller file needs 'layers' and 'activation' fields")
    try:
        layers = tuple(
            (np.asarray(layer["weights"], dtype=float), np.asarray(layer["bias"], dtype=float))
            for layer in raw["layers"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed controller layers: {exc}") from exc
    return ControllerSpec(layers=layers, activation=str(raw["activation"]), source=source)


@dataclass(frozen=True)
class ModeSpec:
    """One dynamics mode: a vector field (or next-state map) plus an optional guard."""

    field: FieldFn
    guard: GuardFn | None = None
    name: str = ""


@dataclass(frozen=True)
class SystemSpec:
    """A closed-loop system: kind, dimension, operating domain, and modes.

    Immutable after construction; evaluation is pure.  `metadata` records the
    benchmark defaults (step size `h`, `horizon`, `init_box`, parameters, and
    reference error metrics where published values exist).
    """

    name: str
    kind: str  # continuous | hybrid | discrete
    dimension: int
    domain: np.ndarray  # (n, 2) rows of [lower, upper]
    modes: tuple[ModeSpec, ...]
    controller: ControllerSpec | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("continuous", "hybrid", "discrete"):
            raise ConfigError(f"unknown system kind {self.kind!r}")
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        dom = np.asarray(self.domain, dtype=float)
        if dom.shape != (self.dimension, 2) or np.any(dom[:, 0] > dom[:, 1]):
            raise ConfigError("domain must be an (n, 2) box with lower <= upper")
        dom.setflags(write=False)
        object.__setattr__(self, "domain", dom)
        if len(self.modes) == 0:
            raise ConfigError("system needs at least one mode")
        if self.kind == "hybrid":
            if len(self.modes) < 2:
                raise ConfigError("hybrid system needs at least two modes")
            if any(m.guard is None for m in self.modes):
                raise ConfigError("every hybrid mode needs a guard")


def select_mode(sys: SystemSpec, x: np.ndarray) -> ModeSpec:
    """First mode whose guard accepts x (guard None matches everything)."""
    for mode in sys.modes:
        if mode.guard is None or mode.guard(x):
            return mode
    raise ConfigError(f"guards of {sys.name} do not cover state {x.tolist()}")


def eval_field(sys: SystemSpec, x) -> np.ndarray:
    """Closed-loop field f(x, g(x)) at x; the next-state map for discrete kind."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.dimension,):
        raise DimensionError(
            f"{sys.name} is {sys.dimension}-dimensional, got state shape {x.shape}"
        )
    out = np.asarray(select_mode(sys, x).field(x), dtype=float)
    if out.shape != (sys.dimension,):
        raise DimensionError(
            f"vector field of {sys.name} produced shape {out.shape}, "
            f"expected ({sys.dimension},)"
        )
    return out


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

# Published reference metrics (MSE, MRE) for the learned forward and inverse
# sensitivity networks; surfaced in evaluation manifests for comparison.
_REFERENCE_METRICS = {
    "brusselator": {"forward": {"mse": 0.14, "mre": 0.34}, "inverse": {"mse": 1.01, "mre": 0.29}},
    "buckling": {"forward": {"mse": 2.38, "mre": 0.18}, "inverse": {"mse": 0.59, "mre": 0.17}},
    "lotka": {"forward": {"mse": 0.38, "mre": 0.31}, "inverse": {"mse": 0.50, "mre": 0.13}},
    "jetengine": {"forward": {"mse": 0.086, "mre": 0.63}, "inverse": {"mse": 1.002, "mre": 0.26}},
    "vanderpol": {"forward": {"mse": 0.15, "mre": 0.29}, "inverse": {"mse": 0.23, "mre": 0.23}},
    "lacoperon": {"forward": {"mse": 0.12, "mre": 0.33}, "inverse": {"mse": 1.8, "mre": 0.46}},
    "roesseler": {"forward": {"mse": 0.58, "mre": 0.087}, "inverse": {"mse": 0.44, "mre": 0.07}},
    "lorentz": {"forward": {"mse": 1.08, "mre": 0.11}, "inverse": {"mse": 0.48, "mre": 0.08}},
    "steam": {"forward": {"mse": 0.34, "mre": 0.07}, "inverse": {"mse": 0.13, "mre": 0.057}},
    "coupled-vanderpol": {"forward": {"mse": 0.18, "mre": 0.15}, "inverse": {"mse": 0.34, "mre": 0.16}},
    "hybrid-oscillator": {"forward": {"mse": 0.35, "mre": 0.11}, "inverse": {"mse": 0.31, "mre": 0.077}},
    "smooth-oscillator": {"forward": {"mse": 0.40, "mre": 0.096}, "inverse": {"mse": 0.23, "mre": 0.063}},
    "mountain-car": {"forward": {"mse": 0.015, "mre": 0.79}, "inverse": {"mse": 0.005, "mre": 0.70}},
}


def _meta(name, h, horizon, init_box, params=None, extra=None):
    md = {
        "h": h,
        "horizon": horizon,
        "init_box": [list(map(float, ax)) for ax in init_box],
        "params": dict(params or {}),
    }
    if name in _REFERENCE_METRICS:
        md["reference_metrics"] = _REFERENCE_METRICS[name]
    if extra:
        md.update(extra)
    return md


def _continuous(name, dim, domain, fieldfn, h, horizon, init_box, params=None, extra=None):
    return SystemSpec(
        name=name,
        kind="continuous",
        dimension=dim,
        domain=np.asarray(domain, dtype=float),
        modes=(ModeSpec(field=fieldfn, name="flow"),),
        metadata=_meta(name, h, horizon, init_box, params, extra),
    )


def _brusselator():
    a, b = 1.0, 1.5

    def f(x):
        return np.array([a + x[0] ** 2 * x[1] - (b + 1.0) * x[0], b * x[0] - x[0] ** 2 * x[1]])

    return _continuous(
        "brusselator", 2, [[0.0, 3.0], [0.0, 3.0]], f, 0.01, 500,
        [[0.8, 1.2], [0.0, 0.4]], {"a": a, "b": b},
    )


def _lotka():
    def f(x):
        return np.array([1.5 * x[0] - x[0] * x[1], x[0] * x[1] - 3.0 * x[1]])

    return _continuous(
        "lotka", 2, [[0.0, 8.0], [0.0, 8.0]], f, 0.01, 500,
        [[4.5, 5.5], [1.5, 2.5]], {"alpha": 1.5, "beta": 1.0, "gamma": 3.0, "delta": 1.0},
    )


def _jetengine():
    def f(x):
        return np.array(
            [-x[1] - 1.5 * x[0] ** 2 - 0.5 * x[0] ** 3 - 0.5, 3.0 * x[0] - x[1]]
        )

    return _continuous(
        "jetengine", 2, [[-2.0, 2.0], [-2.0, 2.0]], f, 0.02, 300,
        [[0.8, 1.2], [0.8, 1.2]],
    )


def _buckling():
    def f(x):
        return np.array([x[1], 2.0 * x[0] - x[0] ** 3 - 0.2 * x[1]])

    return _continuous(
        "buckling", 2, [[-2.5, 2.5], [-2.5, 2.5]], f, 0.01, 500,
        [[-0.5, 0.5], [-0.5, 0.5]],
    )


def _vanderpol():
    mu = 1.0

    def f(x):
        return np.array([x[1], mu * (1.0 - x[0] ** 2) * x[1] - x[0]])

    return _continuous(
        "vanderpol", 2, [[-3.0, 3.0], [-3.0, 3.0]], f, 0.01, 500,
        [[-2.5, 2.5], [-2.5, 2.5]], {"mu": mu},
    )


def _lacoperon():
    # Planar Hill-kinetics gene-regulation model: production repressed by y.
    def f(x):
        return np.array([2.0 / (1.0 + x[1] ** 2) - 0.5 * x[0], x[0] - 0.5 * x[1]])

    return _continuous(
        "lacoperon", 2, [[0.0, 4.0], [0.0, 4.0]], f, 0.1, 500,
        [[1.5, 2.5], [0.5, 1.5]],
    )


def _roesseler():
    a, b, c = 0.2, 0.2, 5.7

    def f(x):
        return np.array([-x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c)])

    return _continuous(
        "roesseler", 3, [[-12.0, 12.0], [-12.0, 12.0], [-1.0, 30.0]], f, 0.02, 500,
        [[-1.0, 1.0], [-9.0, -7.0], [0.0, 0.5]], {"a": a, "b": b, "c": c},
        extra={"chaotic": True},
    )


def _steam():
    # Watt steam governor in angle / angular velocity / engine speed form.
    eps, rho = 3.0, 0.5

    def f(x):
        s, c = np.sin(x[0]), np.cos(x[0])
        return np.array([x[1], x[2] ** 2 * s * c - s - eps * x[1], c - rho])

    return _continuous(
        "steam", 3, [[0.1, 2.5], [-2.0, 2.0], [0.1, 2.5]], f, 0.01, 500,
        [[0.8, 1.2], [-0.2, 0.2], [1.2, 1.6]], {"eps": eps, "rho": rho},
    )


def _lorentz():
    sigma, rho, beta = 10.0, 28.0, 8.0 / 3.0

    def f(x):
        return np.array(
            [sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2]]
        )

    return _continuous(
        "lorentz", 3, [[-20.0, 20.0], [-27.0, 27.0], [0.0, 50.0]], f, 0.01, 500,
        [[-8.5, -7.5], [7.5, 8.5], [26.5, 27.5]],
        {"sigma": sigma, "rho": rho, "beta": beta}, extra={"chaotic": True},
    )


def _coupled_vanderpol():
    mu = 1.0

    def f(x):
        return np.array(
            [
                x[1],
                mu * (1.0 - x[0] ** 2) * x[1] - x[0] + (x[2] - x[0]),
                x[3],
                mu * (1.0 - x[2] ** 2) * x[3] - x[2] + (x[0] - x[2]),
            ]
        )

    return _continuous(
        "coupled-vanderpol", 4, [[-3.0, 3.0]] * 4, f, 0.01, 500,
        [[1.25, 1.55], [2.25, 2.35], [1.25, 1.55], [2.25, 2.35]], {"mu": mu},
    )


def _hybrid_oscillator():
    # Relay-switched nonlinear spring: the field jumps at the guard x1 = 0.
    def f_pos(x):
        return np.array([x[1], -2.0 * x[0] - 0.2 * x[1] - 0.3 * x[0] ** 3 - 0.5])

    def f_neg(x):
        return np.array([x[1], -x[0] - 0.2 * x[1] - 0.3 * x[0] ** 3 + 0.5])

    return SystemSpec(
        name="hybrid-oscillator",
        kind="hybrid",
        dimension=2,
        domain=np.array([[-3.0, 3.0], [-3.0, 3.0]]),
        modes=(
            ModeSpec(field=f_pos, guard=lambda x: x[0] >= 0.0, name="pos"),
            ModeSpec(field=f_neg, guard=lambda x: x[0] < 0.0, name="neg"),
        ),
        metadata=_meta("hybrid-oscillator", 0.01, 500, [[0.5, 1.5], [0.5, 1.5]]),
    )


def _smooth_oscillator():
    # Stiffness switches at x1 = 0 but the two fields agree on the guard,
    # so the closed-loop field stays continuous (not C1).
    def f_pos(x):
        return np.array([x[1], -4.0 * x[0] - 0.2 * x[1] - 0.3 * x[0] ** 3])

    def f_neg(x):
        return np.array([x[1], -x[0] - 0.2 * x[1] - 0.3 * x[0] ** 3])

    return SystemSpec(
        name="smooth-oscillator",
        kind="hybrid",
        dimension=2,
        domain=np.array([[-4.0, 4.0], [-4.0, 4.0]]),
        modes=(
            ModeSpec(field=f_pos, guard=lambda x: x[0] >= 0.0, name="pos"),
            ModeSpec(field=f_neg, guard=lambda x: x[0] < 0.0, name="neg"),
        ),
        metadata=_meta("smooth-oscillator", 0.01, 500, [[1.0, 2.0], [1.0, 2.0]]),
    )


def _mountain_car():
    # Discrete-time mountain car with a bundled sigmoid neural controller.
    # State (position, velocity); one environment step per unit time.  The
    # velocity is clipped to the physical limit; the position is left
    # unclamped so left-hill excursions remain measurable.
    res = resources.files("trajsens").joinpath("controllers/mountain_car.json")
    ctrl = controller_from_dict(json.loads(res.read_text()), source=str(res))

    def step(x):
        u = float(np.clip(controller_forward(ctrl, x)[0], -1.0, 1.0))
        v = x[1] + 0.0015 * u - 0.0025 * np.cos(3.0 * x[0])
        v = float(np.clip(v, -0.07, 0.07))
        return np.array([x[0] + v, v])

    return SystemSpec(
        name="mountain-car",
        kind="discrete",
        dimension=2,
        domain=np.array([[-1.2, 0.6], [-0.07, 0.07]]),
        modes=(ModeSpec(field=step, name="step"),),
        controller=ctrl,
        metadata=_meta("mountain-car", 1.0, 100, [[-0.55, -0.45], [0.0, 0.0]]),
    )


def _linear(name, matrix, domain, init_box, horizon):
    a = np.asarray(matrix, dtype=float)

    def f(x):
        return a @ x

    return _continuous(
        name, a.shape[0], domain, f, 0.01, horizon, init_box,
        extra={"matrix": [list(map(float, row)) for row in a]},
    )


def _linear_rotation():
    return _linear(
        "linear-rotation", [[0.0, 1.0], [-1.0, 0.0]],
        [[-2.0, 2.0], [-2.0, 2.0]], [[-1.0, 1.0], [-1.0, 1.0]], 700,
    )


def _linear_stable():
    return _linear(
        "linear-stable", [[-0.5, 0.0], [0.0, -0.5]],
        [[-2.0, 2.0], [-2.0, 2.0]], [[0.5, 1.5], [0.5, 1.5]], 500,
    )


_REGISTRY: dict[str, Callable[[], SystemSpec]] = {
    "brusselator": _brusselator,
    "lotka": _lotka,
    "jetengine": _jetengine,
    "buckling": _buckling,
    "vanderpol": _vanderpol,
    "lacoperon": _lacoperon,
    "roesseler": _roesseler,
    "steam": _steam,
    "lorentz": _lorentz,
    "coupled-vanderpol": _coupled_vanderpol,
    "hybrid-oscillator": _hybrid_oscillator,
    "smooth-oscillator": _smooth_oscillator,
    "mountain-car": _mountain_car,
    "linear-rotation": _linear_rotation,
    "linear-stable": _linear_stable,
}

_ALIASES = {
    "brussellator": "brusselator",
    "c-vanderpol": "coupled-vanderpol",
    "coupledvanderpol": "coupled-vanderpol",
    "coupled vanderpol": "coupled-vanderpol",
    "hybridoscillator": "hybrid-oscillator",
    "hybridosc": "hybrid-oscillator",
    "smoothhybridoscillator": "smooth-oscillator",
    "smoothosc": "smooth-oscillator",
    "mountain car": "mountain-car",
    "mountaincar": "mountain-car",
    "rossler": "roesseler",
    "lorenz": "lorentz",
}


def available_systems() -> list[str]:
    return sorted(_REGISTRY)


def builtin_system(name: str) -> SystemSpec:
    """Build a registered benchmark system by (case-insensitive) name."""
    key = str(name).strip().lower()
    key = _ALIASES.get(key, key)
    if key not in _REGISTRY:
        hint = ""
        if key == "quadrotor":
            hint = "'quadrotor' is not shipped (its trained controller is unavailable); "
        raise NotFoundError(
            f"unknown system {name!r}; {hint}available: {', '.join(available_systems())}"
        )
    return _REGISTRY[key]()
