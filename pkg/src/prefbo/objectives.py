"""Hidden objectives and simulated choosers for benchmarks.

Objectives are always maximized; the classical minimization test
functions are negated here so every task reports simple regret as
best_value - f(incumbent) >= 0.

The warp-matching task hides a parameter vector theta*, publishes
source and target = warp(theta*, source), and scores a candidate theta
by the negative relative L2 distance between its warp and the target
(so the global maximum is 0 at theta*).  Restricted variants optimize
a subset of the 24 components, the rest pinned at the identity.

Simulated choosers mirror the feedback models: argmax picks the best
candidate deterministically, gumbel-logit perturbs utilities over a
temperature (selection frequencies then follow the softmax of
values / temperature), and subset-threshold selects every candidate
within epsilon of the best.
"""

from __future__ import annotations

import base64
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import BoxBounds
from .errors import ContractError
from .warp import AFFINE_DIM, Field2D, THETA_DIM, theta_bounds, warp_compose

CHOICE_KINDS = ("argmax", "gumbel-logit", "subset-threshold")

# restricted warp searches: affine head, and affine + the center control point
AFFINE6_COMPONENTS = tuple(range(AFFINE_DIM))
AFFINE8_COMPONENTS = tuple(range(AFFINE_DIM)) + (14, 15)


@dataclass(frozen=True)
class ChoiceNoiseModel:
    kind: str = "argmax"
    temperature: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in CHOICE_KINDS:
            raise ContractError(
                f"unknown choice model {self.kind!r}; expected one of {CHOICE_KINDS}"
            )
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ContractError("temperature must be finite and positive")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ContractError("epsilon must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "temperature": self.temperature, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, payload: dict) -> "ChoiceNoiseModel":
        return cls(**payload)


def simulate_choice(values, model: ChoiceNoiseModel, rng: np.random.Generator) -> tuple:
    """Winning positions for one shown batch; never empty.

    Exact ties under argmax go to the smallest index.
    """
    vals = np.asarray(values, dtype=float).reshape(-1)
    if vals.shape[0] < 2:
        raise ContractError("a choice needs at least two candidates")
    if not np.all(np.isfinite(vals)):
        raise ContractError("utilities must be finite")
    if model.kind == "argmax":
        return (int(np.argmax(vals)),)
    if model.kind == "gumbel-logit":
        perturbed = vals / model.temperature + rng.gumbel(size=vals.shape[0])
        return (int(np.argmax(perturbed)),)
    cutoff = float(np.max(vals)) - model.epsilon
    winners = tuple(int(i) for i in np.nonzero(vals >= cutoff)[0])
    return winners


def embed_components(theta_restricted, components) -> np.ndarray:
    """Place a restricted parameter vector into the full 24-vector."""
    sub = np.asarray(theta_restricted, dtype=float).reshape(-1)
    comp = tuple(int(c) for c in components)
    if sub.shape[0] != len(comp):
        raise ContractError("restricted vector length does not match components")
    full = np.zeros(THETA_DIM)
    full[list(comp)] = sub
    return full


def restrict_bounds(box: BoxBounds, components) -> BoxBounds:
    comp = list(int(c) for c in components)
    return BoxBounds(lower=box.lower[comp], upper=box.upper[comp])


@dataclass
class HiddenObjective:
    """A scalar objective with known bounds and known global maximum value."""

    kind: str
    bounds: BoxBounds
    best_value: float
    descriptor: dict
    payload: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.descriptor)


def _sphere_value(x: np.ndarray) -> float:
    return -float(np.dot(x, x))


def _ackley_value(x: np.ndarray) -> float:
    a, b, c = 20.0, 0.2, 2.0 * math.pi
    d = x.shape[0]
    term1 = -a * math.exp(-b * math.sqrt(float(np.dot(x, x)) / d))
    term2 = -math.exp(float(np.sum(np.cos(c * x))) / d)
    return -(term1 + term2 + a + math.e)


def _branin_value(x: np.ndarray) -> float:
    a = 1.0
    b = 5.1 / (4.0 * math.pi**2)
    c = 5.0 / math.pi
    r = 6.0
    s = 10.0
    t = 1.0 / (8.0 * math.pi)
    value = a * (x[1] - b * x[0] ** 2 + c * x[0] - r) ** 2 + s * (1 - t) * math.cos(x[0]) + s
    return -float(value)


BRANIN_BEST = -0.39788735772973816


def make_source_field(seed: int, size: int = 48) -> Field2D:
    """Deterministic smooth test pattern: a ramp plus Gaussian blobs."""
    rng = np.random.default_rng([int(seed), 0x50A7])
    ys, xs = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    slope = rng.uniform(-0.4, 0.4, size=2)
    vals = 0.5 + slope[0] * (xs - 0.5) + slope[1] * (ys - 0.5)
    for _ in range(5):
        cx, cy = rng.uniform(0.15, 0.85, size=2)
        width = rng.uniform(0.08, 0.22)
        amp = rng.uniform(0.4, 1.0) * rng.choice([-1.0, 1.0])
        vals = vals + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * width**2))
    return Field2D(values=vals)


def make_warp_match_task(
    task_seed: int,
    components=None,
    size: int = 48,
    amplitude: float = 0.4,
    name: str | None = None,
) -> HiddenObjective:
    """Hide a random warp within a fraction of the box and publish its result.

    amplitude scales the hidden parameters relative to the box limits,
    keeping the optimum in the interior and the warp clearly visible.
    """
    if not 0.0 < amplitude <= 1.0:
        raise ContractError("amplitude must lie in (0, 1]")
    comp = tuple(int(c) for c in components) if components is not None else tuple(range(THETA_DIM))
    if len(set(comp)) != len(comp) or any(not 0 <= c < THETA_DIM for c in comp):
        raise ContractError("components must be distinct indices into the 24-vector")
    full_box = theta_bounds()
    rng = np.random.default_rng([int(task_seed), 0x7A3F])
    source = make_source_field(task_seed, size=size)
    hidden = np.zeros(THETA_DIM)
    hidden[list(comp)] = (
        amplitude * rng.uniform(-1.0, 1.0, size=len(comp)) * full_box.upper[list(comp)]
    )
    target = warp_compose(hidden, source)
    target_norm = float(np.linalg.norm(target.values))
    if target_norm <= 0.0:
        raise ContractError("degenerate warp task: target field is identically zero")
    descriptor = {
        "name": name or "warp-custom",
        "task_seed": int(task_seed),
        "size": int(size),
        "amplitude": float(amplitude),
        "components": list(comp),
    }
    return HiddenObjective(
        kind="warp-match",
        bounds=restrict_bounds(full_box, comp),
        best_value=0.0,
        descriptor=descriptor,
        payload={
            "source": source,
            "target": target,
            "target_norm": target_norm,
            "hidden_theta": hidden,
            "components": comp,
        },
    )


def make_custom_warp_task(source: Field2D, hidden_theta, components=None) -> HiddenObjective:
    """Warp task from an explicit source field and hidden parameter vector."""
    comp = tuple(int(c) for c in components) if components is not None else tuple(range(THETA_DIM))
    hidden = np.asarray(hidden_theta, dtype=float).reshape(-1)
    if hidden.shape[0] != THETA_DIM:
        raise ContractError(f"hidden theta must have length {THETA_DIM}")
    full_box = theta_bounds()
    if not full_box.contains(hidden):
        raise ContractError("hidden theta violates the warp parameter box")
    if any(abs(hidden[i]) > 0 for i in range(THETA_DIM) if i not in comp):
        raise ContractError("hidden theta uses components outside the restricted set")
    target = warp_compose(hidden, source)
    target_norm = float(np.linalg.norm(target.values))
    if target_norm <= 0.0:
        raise ContractError("degenerate warp task: target field is identically zero")
    descriptor = {
        "name": "warp-custom",
        "components": list(comp),
        "source_pgm_b64": base64.b64encode(source.to_pgm()).decode("ascii"),
        "hidden_theta": hidden.tolist(),
    }
    return HiddenObjective(
        kind="warp-match",
        bounds=restrict_bounds(full_box, comp),
        best_value=0.0,
        descriptor=descriptor,
        payload={
            "source": source,
            "target": target,
            "target_norm": target_norm,
            "hidden_theta": hidden,
            "components": comp,
        },
    )


_WARP_NAMES = {
    "warp-full24": tuple(range(THETA_DIM)),
    "warp-affine6": AFFINE6_COMPONENTS,
    "warp-affine8": AFFINE8_COMPONENTS,
}


def make_objective(name: str, task_seed: int = 0, size: int = 48) -> HiddenObjective:
    """Build a named objective.

    Synthetic names: branin-2d, sphere-<n>d, ackley-<n>d.  Warp names:
    warp-affine6, warp-affine8, warp-full24 (the hidden warp varies
    with task_seed).
    """
    if name in _WARP_NAMES:
        return make_warp_match_task(task_seed, components=_WARP_NAMES[name], size=size, name=name)
    if name == "branin-2d":
        return HiddenObjective(
            kind="branin",
            bounds=BoxBounds(lower=[-5.0, 0.0], upper=[10.0, 15.0]),
            best_value=BRANIN_BEST,
            descriptor={"name": name},
        )
    match = re.fullmatch(r"(sphere|ackley)-(\d+)d", name)
    if match is None:
        raise ContractError(f"unknown objective {name!r}")
    family, dim_text = match.groups()
    dim = int(dim_text)
    if dim < 1:
        raise ContractError("objective dimension must be positive")
    if family == "sphere":
        half = 5.12
    else:
        half = 5.0
    return HiddenObjective(
        kind=family,
        bounds=BoxBounds(lower=np.full(dim, -half), upper=np.full(dim, half)),
        best_value=0.0,
        descriptor={"name": name},
    )


def objective_from_descriptor(descriptor: dict) -> HiddenObjective:
    name = descriptor.get("name")
    if name == "warp-custom":
        source = Field2D.from_pgm(base64.b64decode(descriptor["source_pgm_b64"]))
        return make_custom_warp_task(
            source, descriptor["hidden_theta"], components=descriptor.get("components")
        )
    if name in _WARP_NAMES:
        return make_objective(
            name, task_seed=descriptor.get("task_seed", 0), size=descriptor.get("size", 48)
        )
    return make_objective(name)


def save_task_file(obj: HiddenObjective, path) -> None:
    """Write a warp task as a JSON document plus a sibling source image.

    The document holds the source image path (relative), the hidden
    parameter vector, and the optimized component indices; it is meant
    for server-side use and must never be sent to a client.
    """
    if obj.kind != "warp-match":
        raise ContractError("task files are only defined for warp tasks")
    target = Path(path)
    source_name = target.stem + "-source.pgm"
    obj.payload["source"].save_pgm(target.parent / source_name)
    document = {
        "format": "prefbo-task",
        "version": 1,
        "source_pgm": source_name,
        "hidden_theta": [float(v) for v in obj.payload["hidden_theta"]],
        "components": [int(c) for c in obj.payload["components"]],
    }
    target.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_task_file(path) -> HiddenObjective:
    """Load a warp task document written by save_task_file."""
    target = Path(path)
    document = json.loads(target.read_text(encoding="utf-8"))
    if document.get("format") != "prefbo-task":
        raise ContractError("not a task document")
    source = Field2D.load_pgm(target.parent / document["source_pgm"])
    return make_custom_warp_task(
        source, document["hidden_theta"], components=document.get("components")
    )


def objective_eval(obj: HiddenObjective, theta) -> float:
    """Deterministic objective value; rejects out-of-bounds parameters."""
    x = np.asarray(theta, dtype=float).reshape(-1)
    if x.shape[0] != obj.bounds.dim:
        raise ContractError(
            f"theta has dimension {x.shape[0]} but the objective expects {obj.bounds.dim}"
        )
    if not obj.bounds.contains(x):
        raise ContractError("theta lies outside the objective bounds")
    if obj.kind == "sphere":
        return _sphere_value(x)
    if obj.kind == "ackley":
        return _ackley_value(x)
    if obj.kind == "branin":
        return _branin_value(x)
    if obj.kind == "warp-match":
        full = embed_components(x, obj.payload["components"])
        rendered = warp_compose(full, obj.payload["source"])
        diff = rendered.values - obj.payload["target"].values
        return -float(np.linalg.norm(diff)) / obj.payload["target_norm"]
    raise ContractError(f"unknown objective kind {obj.kind!r}")


def render_candidate(obj: HiddenObjective, theta) -> Field2D:
    """Warp the task's source field by a candidate parameter vector."""
    if obj.kind != "warp-match":
        raise ContractError("rendering is only defined for warp tasks")
    full = embed_components(np.asarray(theta, dtype=float), obj.payload["components"])
    return warp_compose(full, obj.payload["source"])
