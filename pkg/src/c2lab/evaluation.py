"""Detection metrics, adversarial hardening, cross-attack robustness
matrices, and the iterative attack-hardening loop.

Split hygiene is enforced through flow-id provenance: hardening refuses
adversarial samples whose source flows are not in the training split.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .attack import AdversarialSample, AttackSpec, generate_attack_set
from .detector import Model, ModelConfig, TrainConfig, init_model, predict_proba, train
from .features import (
    BENIGN,
    MALICIOUS,
    NormalizationParams,
    NormalizedVector,
    RawFeatureVector,
    fit_normalizer,
    normalize,
    to_matrix,
)


class DataLeakageError(RuntimeError):
    """Adversarial training samples were derived from non-training flows."""


@dataclass(frozen=True)
class EvalMetrics:
    """Confusion counts with malicious as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def attack_success(self) -> float:
        return 1.0 - self.recall

    def row(self) -> dict:
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "attack_success": self.attack_success,
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
        }


def _predicted_malicious(model: Model, samples: list[NormalizedVector]) -> np.ndarray:
    X = np.stack([s.values for s in samples])
    return predict_proba(model, X).argmax(axis=1) == 1


def evaluate(model: Model, benign: list[NormalizedVector],
             malicious: list[NormalizedVector]) -> EvalMetrics:
    """Confusion-matrix metrics on benign originals plus (possibly
    adversarial) malicious samples."""
    if not benign or not malicious:
        raise ValueError("evaluation needs at least one sample of each class")
    ben_pred = _predicted_malicious(model, benign)
    mal_pred = _predicted_malicious(model, malicious)
    return EvalMetrics(
        tp=int(mal_pred.sum()), fn=int((~mal_pred).sum()),
        fp=int(ben_pred.sum()), tn=int((~ben_pred).sum()),
    )


def misclassified_malicious_pct(model: Model, samples: list[NormalizedVector]) -> float:
    """Percentage of malicious samples the model lets through as benign."""
    if not samples:
        raise ValueError("empty sample set")
    pred = _predicted_malicious(model, samples)
    return 100.0 * float((~pred).mean())


# ---------------------------------------------------------------------------
# Dataset construction

@dataclass
class Dataset:
    train: list[NormalizedVector]
    test: list[NormalizedVector]
    norm_params: NormalizationParams
    train_ids: frozenset[str]
    test_ids: frozenset[str]

    def train_by_label(self, label: str) -> list[NormalizedVector]:
        return [s for s in self.train if s.label == label]

    def test_by_label(self, label: str) -> list[NormalizedVector]:
        return [s for s in self.test if s.label == label]


def balanced_split(raw: list[RawFeatureVector], test_frac: float = 0.2,
                   seed: int = 0, balance: bool = True
                   ) -> tuple[list[RawFeatureVector], list[RawFeatureVector]]:
    """Keep all malicious flows, subsample benign to match, stratified split."""
    rng = np.random.default_rng(seed)
    benign = [r for r in raw if r.label == BENIGN]
    malicious = [r for r in raw if r.label == MALICIOUS]
    if not benign or not malicious:
        raise ValueError("dataset needs both classes")
    if balance and len(benign) > len(malicious):
        pick = rng.choice(len(benign), size=len(malicious), replace=False)
        benign = [benign[i] for i in pick]
    train: list[RawFeatureVector] = []
    test: list[RawFeatureVector] = []
    for group in (benign, malicious):
        order = rng.permutation(len(group))
        n_test = int(round(test_frac * len(group)))
        test.extend(group[i] for i in order[:n_test])
        train.extend(group[i] for i in order[n_test:])
    return train, test


def prepare_dataset(raw: list[RawFeatureVector], test_frac: float = 0.2,
                    seed: int = 0, balance: bool = True) -> Dataset:
    """Split, fit normalization on the training split only, normalize both."""
    train_raw, test_raw = balanced_split(raw, test_frac=test_frac, seed=seed, balance=balance)
    params = fit_normalizer(train_raw)
    return Dataset(
        train=[normalize(r, params) for r in train_raw],
        test=[normalize(r, params) for r in test_raw],
        norm_params=params,
        train_ids=frozenset(r.flow_id for r in train_raw),
        test_ids=frozenset(r.flow_id for r in test_raw),
    )


def train_model(samples: list[NormalizedVector], model_cfg: ModelConfig,
                train_cfg: TrainConfig, norm_params: NormalizationParams) -> Model:
    """Fresh init + training on the given normalized samples."""
    model = init_model(model_cfg)
    model.norm_params = norm_params
    X, y = to_matrix(samples)
    train(model, X, y, train_cfg)
    return model


def harden(base_train: list[NormalizedVector],
           adv_train: list[AdversarialSample],
           model_cfg: ModelConfig, train_cfg: TrainConfig,
           norm_params: NormalizationParams,
           train_ids: frozenset[str]) -> Model:
    """Retrain from scratch on the original training set extended with
    adversarial samples (labeled malicious); normalization is inherited."""
    leaked = sorted(s.flow_id for s in adv_train if s.flow_id not in train_ids)
    if leaked:
        raise DataLeakageError(
            f"{len(leaked)} adversarial training samples come from outside the "
            f"training split (e.g. {leaked[0]})"
        )
    extended = list(base_train)
    for s in adv_train:
        extended.append(NormalizedVector(
            flow_id=f"{s.flow_id}/adv", label=MALICIOUS,
            values=s.perturbed.values, provenance="adversarial",
        ))
    return train_model(extended, model_cfg, train_cfg, norm_params)


# ---------------------------------------------------------------------------
# Cross-attack robustness matrix

@dataclass
class EvalMatrix:
    row_ids: list[str]
    col_ids: list[str]
    cells: np.ndarray  # misclassified-malicious percentage, [0, 100]

    def cell(self, row: str, col: str) -> float:
        return float(self.cells[self.row_ids.index(row), self.col_ids.index(col)])

    def column(self, col: str) -> np.ndarray:
        return self.cells[:, self.col_ids.index(col)]

    def row(self, row: str) -> np.ndarray:
        return self.cells[self.row_ids.index(row), :]


def cross_matrix(models: list[tuple[str, Model]],
                 attack_sets: list[tuple[str, list[NormalizedVector]]]) -> EvalMatrix:
    """cells[r][c] = % of attack set c misclassified as benign by model r."""
    cells = np.zeros((len(models), len(attack_sets)))
    for r, (_, model) in enumerate(models):
        for c, (_, samples) in enumerate(attack_sets):
            cells[r, c] = misclassified_malicious_pct(model, samples)
    return EvalMatrix(
        row_ids=[name for name, _ in models],
        col_ids=[name for name, _ in attack_sets],
        cells=cells,
    )


def write_matrix_csv(path, matrix: EvalMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", *matrix.col_ids])
        for name, row in zip(matrix.row_ids, matrix.cells):
            writer.writerow([name, *(repr(float(v)) for v in row)])


def read_matrix_csv(path) -> EvalMatrix:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return EvalMatrix(
        row_ids=[r[0] for r in rows],
        col_ids=header[1:],
        cells=np.array([[float(v) for v in r[1:]] for r in rows]),
    )


# ---------------------------------------------------------------------------
# Iterative attack-hardening loop

@dataclass
class LoopConfig:
    option: str  # "A" | "B" | "C"
    iterations: int = 3
    attack: AttackSpec = field(default_factory=lambda: AttackSpec("all", mode="plus_minus", epsilon=0.3))
    model_cfg: ModelConfig = field(default_factory=ModelConfig)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    test_frac: float = 0.2
    balance: bool = True

    def __post_init__(self):
        if self.option not in ("A", "B", "C"):
            raise ValueError(f"loop option must be A, B, or C, not {self.option!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class LoopResult:
    option: str
    models: list[Model]                     # M0 .. Mn
    matrix: EvalMatrix                      # rows M0..Mn, cols Original + Adv.1..n
    train_sizes: list[int]                  # per trained model
    adv_train_sets: list[list[AdversarialSample]]
    adv_eval_sets: list[list[AdversarialSample]]


def run_loop(cfg: LoopConfig, raw_data: list[RawFeatureVector]) -> LoopResult:
    """Alternate attack and hardening for `cfg.iterations` rounds.

    Iteration 0 trains the plain model.  At iteration i >= 1 the attack set
    is generated against the previous model from training malicious flows;
    the hardening set per option: A = benign + current adversarial only,
    B = benign + malicious + current adversarial, C = benign + malicious +
    all adversarial sets so far.  Evaluation columns use test-split flows.
    """
    ds = prepare_dataset(raw_data, test_frac=cfg.test_frac, seed=cfg.seed, balance=cfg.balance)
    train_ben = ds.train_by_label(BENIGN)
    train_mal = ds.train_by_label(MALICIOUS)
    test_mal = ds.test_by_label(MALICIOUS)

    models = [train_model(ds.train, cfg.model_cfg, cfg.train_cfg, ds.norm_params)]
    train_sizes = [len(ds.train)]
    adv_train_sets: list[list[AdversarialSample]] = []
    adv_eval_sets: list[list[AdversarialSample]] = []

    def as_training(adv: list[AdversarialSample]) -> list[NormalizedVector]:
        return [NormalizedVector(f"{s.flow_id}/adv", MALICIOUS, s.perturbed.values,
                                 "adversarial") for s in adv]

    for i in range(1, cfg.iterations + 1):
        previous = models[i - 1]
        adv_train_sets.append(generate_attack_set(previous, train_mal, cfg.attack))
        adv_eval_sets.append(generate_attack_set(previous, test_mal, cfg.attack))
        adv_now = as_training(adv_train_sets[-1])
        if cfg.option == "A":
            train_set = train_ben + adv_now
        elif cfg.option == "B":
            train_set = train_ben + train_mal + adv_now
        else:  # C accumulates every prior adversarial set
            train_set = train_ben + train_mal
            for past in adv_train_sets:
                train_set = train_set + as_training(past)
        models.append(train_model(train_set, cfg.model_cfg, cfg.train_cfg, ds.norm_params))
        train_sizes.append(len(train_set))

    rows = [("Original", models[0])]
    rows += [(f"Mod. Iter {i}", m) for i, m in enumerate(models[1:], start=1)]
    cols = [("Original", test_mal)]
    cols += [(f"Adv. {i}", [s.perturbed for s in adv])
             for i, adv in enumerate(adv_eval_sets, start=1)]
    matrix = cross_matrix(rows, cols)
    return LoopResult(
        option=cfg.option, models=models, matrix=matrix,
        train_sizes=train_sizes,
        adv_train_sets=adv_train_sets, adv_eval_sets=adv_eval_sets,
    )
