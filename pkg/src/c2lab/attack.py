"""Adversarial sample generation in normalized feature space.

FGSM takes a fixed step of size epsilon in the sign of the loss gradient,
then two domain restrictions are applied: only slots in the chosen attack
feature set may change, and in increase-only mode no slot may drop below
its original value (packet counts, byte counts, and durations cannot be
reduced by a traffic proxy).  Duration-multiplier baselines scale the raw
duration and renormalize.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import schema
from .detector import Model, input_gradients
from .features import (
    MALICIOUS,
    NormalizationParams,
    NormalizedVector,
    RawFeatureVector,
    normalize_values,
)

SET1_IDS = frozenset({31})
SET2_IDS = frozenset({31, 3, 17, 9, 23})
SET3_IDS = (schema.CORE_IDS - frozenset({32, 33, 36, 37}))
ALL_IDS = frozenset(schema.TSTAT_IDS)

FEATURE_SETS: dict[str, frozenset[int]] = {
    "set1": SET1_IDS,
    "set2": SET2_IDS,
    "set3": SET3_IDS,
    "all": ALL_IDS,
}

_SET_LABELS = {"set1": "Adv. Duration", "set2": "Adv. Set 2",
               "set3": "Adv. Set 3", "all": "Adv. All Features"}
_MODE_LABELS = {"plus_minus": "+/-", "plus_only": "+"}


@dataclass(frozen=True)
class AttackSpec:
    """Which slots may move, in which direction, and how far."""

    feature_set: str
    side: str = "both"          # both | client | server
    mode: str = "plus_minus"    # plus_minus | plus_only
    epsilon: float = 0.3
    steps: int = 1              # >1 = iterated FGSM in epsilon/steps increments

    def __post_init__(self):
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {self.feature_set!r}")
        if self.side not in ("both", "client", "server"):
            raise ValueError(f"unknown side {self.side!r}")
        if self.mode not in ("plus_minus", "plus_only"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def mask_ids(self) -> frozenset[int]:
        ids = FEATURE_SETS[self.feature_set]
        if self.side == "client":
            ids = frozenset(i for i in ids if schema.SIDE_OF[i] in ("c2s", "both"))
        elif self.side == "server":
            ids = frozenset(i for i in ids if schema.SIDE_OF[i] in ("s2c", "both"))
        return ids

    def mask(self) -> np.ndarray:
        return schema.ids_to_mask(self.mask_ids())

    def label(self) -> str:
        side = "" if self.side == "both" else f" {self.side}"
        return f"{_SET_LABELS[self.feature_set]}{side} {_MODE_LABELS[self.mode]}"

    def slug(self) -> str:
        parts = [self.feature_set]
        if self.side != "both":
            parts.append(self.side)
        parts.append("plus" if self.mode == "plus_only" else "plusminus")
        if self.steps != 1:
            parts.append(f"k{self.steps}")
        return "_".join(parts)


@dataclass(frozen=True)
class DurationMultiplier:
    """Scale the raw flow duration by a fixed factor; needs no gradients."""

    factor: float

    def __post_init__(self):
        if self.factor < 1:
            raise ValueError("multiplier must be >= 1")

    def label(self) -> str:
        return f"{self.factor:g}x Duration"

    def slug(self) -> str:
        return f"x{self.factor:g}"


@dataclass
class AdversarialSample:
    original: NormalizedVector
    perturbed: NormalizedVector
    spec: AttackSpec | DurationMultiplier

    @property
    def flow_id(self) -> str:
        return self.original.flow_id


def fgsm_from_gradient(x: np.ndarray, grad: np.ndarray, epsilon: float) -> np.ndarray:
    """x + epsilon * sign(grad), clipped to [0, 1]; sign(0) stays 0."""
    return np.clip(x + epsilon * np.sign(grad), 0.0, 1.0)


def fgsm_step(model: Model, x: np.ndarray, y: int, epsilon: float) -> np.ndarray:
    grad = input_gradients(model, np.atleast_2d(x), np.atleast_1d(y))
    return fgsm_from_gradient(np.atleast_2d(x), grad, epsilon)[0]


def restrict_values(original: np.ndarray, perturbed: np.ndarray,
                    spec: AttackSpec) -> np.ndarray:
    """Confine changes to the mask, then apply the increase-only floor."""
    mask = spec.mask()
    out = np.where(mask, perturbed, original)
    if spec.mode == "plus_only":
        out = np.maximum(out, original)
    return out


def apply_restrictions(original: NormalizedVector, perturbed: np.ndarray,
                       spec: AttackSpec) -> AdversarialSample:
    restricted = restrict_values(original.values, perturbed, spec)
    adv = NormalizedVector(flow_id=original.flow_id, label=original.label,
                           values=restricted, provenance="adversarial")
    return AdversarialSample(original=original, perturbed=adv, spec=spec)


def multiply_duration(raw: RawFeatureVector, factor: float,
                      params: NormalizationParams) -> NormalizedVector:
    """Scale raw slot 31 by `factor`, renormalize with clamping."""
    if factor < 1:
        raise ValueError("multiplier must be >= 1")
    scaled = raw.values.copy()
    scaled[schema.SLOT_OF[31]] *= factor
    return NormalizedVector(flow_id=raw.flow_id, label=raw.label,
                            values=normalize_values(scaled, params),
                            provenance="adversarial")


def _require_malicious(samples) -> None:
    bad = [s.flow_id for s in samples if s.label != MALICIOUS]
    if bad:
        raise ValueError(f"attack sets are built from malicious flows only; "
                         f"got {len(bad)} others (e.g. {bad[0]})")


def generate_fgsm_set(model: Model, samples: list[NormalizedVector],
                      spec: AttackSpec) -> list[AdversarialSample]:
    """One restricted FGSM sample per input, order preserved."""
    if not samples:
        return []
    _require_malicious(samples)
    X0 = np.stack([s.values for s in samples])
    y = np.ones(len(samples), dtype=np.int64)  # true label: malicious
    step = spec.epsilon / spec.steps
    X = X0
    for _ in range(spec.steps):
        grad = input_gradients(model, X, y)
        X = np.clip(X + step * np.sign(grad), 0.0, 1.0)
        X = np.where(spec.mask(), X, X0)
        if spec.mode == "plus_only":
            X = np.maximum(X, X0)
    out = []
    for i, s in enumerate(samples):
        adv = NormalizedVector(flow_id=s.flow_id, label=s.label,
                               values=X[i].copy(), provenance="adversarial")
        out.append(AdversarialSample(original=s, perturbed=adv, spec=spec))
    return out


def generate_multiplier_set(raw_samples: list[RawFeatureVector], factor: float,
                            params: NormalizationParams) -> list[AdversarialSample]:
    _require_malicious(raw_samples)
    spec = DurationMultiplier(factor)
    out = []
    for raw in raw_samples:
        original = NormalizedVector(flow_id=raw.flow_id, label=raw.label,
                                    values=normalize_values(raw.values, params),
                                    provenance="measured")
        out.append(AdversarialSample(original=original,
                                     perturbed=multiply_duration(raw, factor, params),
                                     spec=spec))
    return out


def generate_attack_set(model: Model, samples, spec,
                        params: NormalizationParams | None = None) -> list[AdversarialSample]:
    """Dispatch on spec type; multiplier attacks need raw vectors and params."""
    if isinstance(spec, AttackSpec):
        return generate_fgsm_set(model, samples, spec)
    if isinstance(spec, DurationMultiplier):
        if params is None:
            raise ValueError("multiplier attacks need normalization params")
        return generate_multiplier_set(samples, spec.factor, params)
    raise TypeError(f"unknown attack spec {spec!r}")


def full_attack_roster(epsilon: float = 0.3) -> list[AttackSpec | DurationMultiplier]:
    """The 13-entry hardening/attack roster used for the cross matrix."""
    return [
        AttackSpec("all", mode="plus_minus", epsilon=epsilon),
        AttackSpec("set1", mode="plus_minus", epsilon=epsilon),
        AttackSpec("set1", mode="plus_only", epsilon=epsilon),
        DurationMultiplier(20),
        DurationMultiplier(100),
        AttackSpec("set2", mode="plus_minus", epsilon=epsilon),
        AttackSpec("set2", mode="plus_only", epsilon=epsilon),
        AttackSpec("set2", side="server", mode="plus_only", epsilon=epsilon),
        AttackSpec("set2", side="client", mode="plus_only", epsilon=epsilon),
        AttackSpec("set3", mode="plus_minus", epsilon=epsilon),
        AttackSpec("set3", mode="plus_only", epsilon=epsilon),
        AttackSpec("set3", side="server", mode="plus_only", epsilon=epsilon),
        AttackSpec("set3", side="client", mode="plus_only", epsilon=epsilon),
    ]


def metrics_roster(epsilon: float = 0.3) -> list[AttackSpec | DurationMultiplier]:
    """Roster for the detection/evasion summary table."""
    roster: list[AttackSpec | DurationMultiplier] = [
        AttackSpec("all", mode="plus_minus", epsilon=epsilon),
        AttackSpec("set1", mode="plus_minus", epsilon=epsilon),
        AttackSpec("set1", mode="plus_only", epsilon=epsilon),
    ]
    roster += [DurationMultiplier(f) for f in (2, 5, 10, 20, 100)]
    for fs in ("set2", "set3"):
        roster += [
            AttackSpec(fs, mode="plus_minus", epsilon=epsilon),
            AttackSpec(fs, mode="plus_only", epsilon=epsilon),
            AttackSpec(fs, side="client", mode="plus_minus", epsilon=epsilon),
            AttackSpec(fs, side="client", mode="plus_only", epsilon=epsilon),
            AttackSpec(fs, side="server", mode="plus_minus", epsilon=epsilon),
            AttackSpec(fs, side="server", mode="plus_only", epsilon=epsilon),
        ]
    return roster


# ---------------------------------------------------------------------------
# Adversarial-set CSV: feature columns for the perturbed values, the spec
# descriptor, then a paired column set with the original values.

ADV_HEADER = (
    ["flow_id", "label", *schema.FEATURE_COLUMNS,
     "spec_name", "mode", "side", "epsilon_or_factor"]
    + [f"orig_{c}" for c in schema.FEATURE_COLUMNS]
)


def _spec_columns(spec) -> tuple[str, str, str, str]:
    if isinstance(spec, AttackSpec):
        name = spec.feature_set if spec.steps == 1 else f"{spec.feature_set}:k{spec.steps}"
        return name, spec.mode, spec.side, f"{spec.epsilon:g}"
    return f"x{spec.factor:g}", "plus_only", "both", f"{spec.factor:g}"


def _spec_from_columns(name: str, mode: str, side: str, value: str):
    if name.startswith("x"):
        return DurationMultiplier(float(value))
    steps = 1
    if ":k" in name:
        name, _, k = name.partition(":k")
        steps = int(k)
    return AttackSpec(name, side=side, mode=mode, epsilon=float(value), steps=steps)


def write_adversarial_csv(path, samples: list[AdversarialSample]) -> int:
    fmt = lambda v: f"{v:.6g}"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ADV_HEADER)
        for s in samples:
            name, mode, side, value = _spec_columns(s.spec)
            writer.writerow([
                s.flow_id, s.perturbed.label,
                *(fmt(v) for v in s.perturbed.values),
                name, mode, side, value,
                *(fmt(v) for v in s.original.values),
            ])
    return len(samples)


def read_adversarial_csv(path) -> list[AdversarialSample]:
    out: list[AdversarialSample] = []
    nf = schema.N_SLOTS
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ADV_HEADER:
            raise ValueError(f"{path}: not an adversarial-set CSV (unexpected header)")
        for row in reader:
            flow_id, label = row[0], row[1]
            perturbed = np.array([float(v) for v in row[2 : 2 + nf]])
            name, mode, side, value = row[2 + nf : 6 + nf]
            original = np.array([float(v) for v in row[6 + nf : 6 + 2 * nf]])
            spec = _spec_from_columns(name, mode, side, value)
            out.append(AdversarialSample(
                original=NormalizedVector(flow_id, label, original, "measured"),
                perturbed=NormalizedVector(flow_id, label, perturbed, "adversarial"),
                spec=spec,
            ))
    return out
