"""Targeted data poisoning: adversarial feature crafting and label flipping.

Every attack only touches samples whose label is one of the configured
target classes; all other rows come out bit-identical. Crafted features
stay inside [0, 1], the only domain constraint enforced generically for
normalized traffic features.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _rng, nn
from .data import Dataset, round_half_up
from .metrics import confusion_matrix

logger = logging.getLogger(__name__)


class AttackKind(str, enum.Enum):
    NONE = "None"
    FGSM = "FGSM"
    PGD = "PGD"
    GAUSSIAN_NOISE = "GaussianNoise"
    LABEL_FLIP = "LabelFlip"

    @classmethod
    def parse(cls, value) -> AttackKind:
        if isinstance(value, cls):
            return value
        for kind in cls:
            if str(value).lower() == kind.value.lower():
                return kind
        raise ValueError(f"unknown attack kind {value!r}; choose from {[k.value for k in cls]}")

    @property
    def crafts_features(self) -> bool:
        return self in (AttackKind.FGSM, AttackKind.PGD, AttackKind.GAUSSIAN_NOISE)


@dataclass(frozen=True)
class AttackConfig:
    kind: AttackKind = AttackKind.NONE
    target_labels: tuple[int, ...] = ()
    poison_ratio: float = 0.1
    epsilon: float = 0.35
    pgd_steps: int = 10
    pgd_alpha: float | None = None
    gn_mu: float = 0.0
    gn_sigma: float = 0.1
    flip_map: dict[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind.parse(self.kind))
        object.__setattr__(self, "target_labels", tuple(int(t) for t in self.target_labels))
        if self.flip_map is not None:
            object.__setattr__(
                self, "flip_map", {int(k): int(v) for k, v in self.flip_map.items()}
            )

    @property
    def alpha(self) -> float:
        return self.epsilon / 4 if self.pgd_alpha is None else self.pgd_alpha

    def validate(self) -> list[str]:
        errors = []
        if not 0 <= self.poison_ratio <= 1:
            errors.append("poison_ratio: must lie in [0, 1]")
        if self.epsilon < 0:
            errors.append("epsilon: must be >= 0")
        if self.pgd_steps < 1:
            errors.append("pgd_steps: must be >= 1")
        if self.alpha <= 0:
            errors.append("pgd_alpha: must be > 0")
        if self.gn_sigma < 0:
            errors.append("gn_sigma: must be >= 0")
        if self.kind is not AttackKind.NONE and not self.target_labels:
            errors.append("target_labels: an attack needs at least one target class")
        if self.kind is AttackKind.LABEL_FLIP and self.flip_map is not None:
            if set(self.flip_map) != set(self.target_labels):
                errors.append("flip_map: keys must equal target_labels")
            if any(k == v for k, v in self.flip_map.items()):
                errors.append("flip_map: a class cannot flip to itself")
        return errors


# ------------------------------------------------------------- feature attacks


def fgsm(arch, params, X, y, epsilon: float) -> np.ndarray:
    """One signed-gradient step of size epsilon, clipped to [0, 1]."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    g = nn.input_gradient(arch, params, X, np.atleast_1d(y))
    return np.clip(X + epsilon * np.sign(g), 0.0, 1.0)


def pgd(arch, params, X, y, epsilon: float, alpha: float, steps: int) -> np.ndarray:
    """Iterated signed-gradient steps projected onto the eps-ball and [0, 1]."""
    if alpha <= 0 or steps < 1:
        raise ValueError("pgd needs alpha > 0 and steps >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(y)
    lo = X - epsilon
    hi = X + epsilon
    x_adv = X.copy()
    for _ in range(steps):
        g = nn.input_gradient(arch, params, x_adv, y)
        x_adv = np.clip(np.clip(x_adv + alpha * np.sign(g), lo, hi), 0.0, 1.0)
    return x_adv


def gaussian_noise(X, mu: float, sigma: float, seed) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    delta = np.random.default_rng(seed).normal(mu, sigma, size=X.shape)
    return np.clip(X + delta, 0.0, 1.0)


# ---------------------------------------------------------------- poisoning


@dataclass
class PoisonedShard:
    base: Dataset
    data: Dataset
    poisoned_indices: np.ndarray
    """Rows chosen for poisoning (crafted or flipped)."""
    replaced_indices: np.ndarray
    """Rows whose content actually changed in ``data``."""
    notes: list[str] = field(default_factory=list)

    def audit_record(self) -> dict:
        return {
            "poisoned_indices": [int(i) for i in self.poisoned_indices],
            "replaced_indices": [int(i) for i in self.replaced_indices],
            "notes": list(self.notes),
        }


def choose_poison_rows(labels, targets, ratio: float, rng) -> tuple[np.ndarray, list[str]]:
    """Per target class, pick round(ratio * count) of its rows uniformly."""
    labels = np.asarray(labels)
    chosen, notes = [], []
    for t in targets:
        idx = np.flatnonzero(labels == t)
        if idx.size == 0:
            notes.append(f"target class {t} absent from shard; nothing poisoned")
            continue
        k = min(round_half_up(ratio * idx.size), idx.size)
        chosen.append(rng.choice(idx, size=k, replace=False))
    rows = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return rows.astype(np.int64), notes


def label_flip(shard: Dataset, flip_map: dict[int, int], poison_ratio: float, seed) -> PoisonedShard:
    """Relabel a random ``poison_ratio`` share of each source class; features untouched."""
    rng = np.random.default_rng(seed)
    rows, notes = choose_poison_rows(shard.labels, sorted(flip_map), poison_ratio, rng)
    labels = shard.labels.copy()
    labels[rows] = [flip_map[int(c)] for c in shard.labels[rows]]
    poisoned = Dataset(
        shard.features, labels, shard.n_classes, shard.name, shard.class_names, shard.feature_names
    )
    return PoisonedShard(shard, poisoned, rows, rows, notes)


def most_confused_flip_map(arch, params, data: Dataset, targets) -> dict[int, int]:
    """Map each target to the class a clean model most often confuses it with.

    Ties on the confusion count go to the class with the larger mean softmax
    mass over the target's samples, so the map is defined even for a model
    that never errs on the target.
    """
    probs = nn.forward(arch, params, data.features)
    cm = confusion_matrix(data.labels, probs.argmax(axis=1), data.n_classes)
    out = {}
    for t in targets:
        rows = data.labels == t
        mass = probs[rows].mean(axis=0) if rows.any() else np.zeros(data.n_classes)
        candidates = [c for c in range(data.n_classes) if c != t]
        out[int(t)] = max(candidates, key=lambda c: (cm[t, c], mass[c], -c))
    return out


def craft_adversarial(arch, params, X, y, cfg: AttackConfig, seed) -> np.ndarray:
    if cfg.kind is AttackKind.FGSM:
        return fgsm(arch, params, X, y, cfg.epsilon)
    if cfg.kind is AttackKind.PGD:
        return pgd(arch, params, X, y, cfg.epsilon, cfg.alpha, cfg.pgd_steps)
    if cfg.kind is AttackKind.GAUSSIAN_NOISE:
        return gaussian_noise(X, cfg.gn_mu, cfg.gn_sigma, seed)
    raise ValueError(f"{cfg.kind.value} does not craft features")


def poison_with_adversarial_samples(
    arch, global_params, shard: Dataset, cfg: AttackConfig, sgd: nn.SgdSettings, seed
) -> PoisonedShard:
    """Build the compromised shard for one round.

    1. pick the target-class rows to poison;
    2. fit an interim model from the global one on the non-target rows only;
    3. craft adversarial versions of the picked rows against the interim model;
    4. keep a crafted row only if the *global* model does not predict its
       target label, and swap it in place of the clean row (label kept).
    """
    rows, notes = choose_poison_rows(
        shard.labels, cfg.target_labels, cfg.poison_ratio, _rng.rng(seed, 1)
    )
    if rows.size == 0:
        return PoisonedShard(shard, shard, rows, rows, notes)

    nontarget = ~np.isin(shard.labels, cfg.target_labels)
    if nontarget.any():
        interim = sgd.train(
            arch, global_params, shard.features[nontarget], shard.labels[nontarget],
            _rng.derive(seed, 2),
        )
    else:
        notes.append("no non-target rows; crafting against the global model")
        interim = global_params
    crafted = craft_adversarial(
        arch, interim, shard.features[rows], shard.labels[rows], cfg, _rng.derive(seed, 3)
    )
    accepted = nn.predict(arch, global_params, crafted) != shard.labels[rows]

    features = shard.features.copy()
    features[rows[accepted]] = crafted[accepted]
    poisoned = Dataset(
        features, shard.labels, shard.n_classes, shard.name, shard.class_names, shard.feature_names
    )
    return PoisonedShard(shard, poisoned, rows, rows[accepted], notes)


def adversarial_client_update(
    arch, global_params, shard: Dataset, cfg: AttackConfig, sgd: nn.SgdSettings, seed
) -> tuple[np.ndarray, PoisonedShard]:
    """Local update of a compromised client.

    ``seed`` drives the final local training exactly as it would for a benign
    client, so an attack that ends up changing nothing reproduces the benign
    update bit for bit.
    """
    if cfg.kind is AttackKind.NONE or cfg.poison_ratio == 0:
        empty = np.zeros(0, dtype=np.int64)
        return sgd.train(arch, global_params, shard.features, shard.labels, seed), PoisonedShard(
            shard, shard, empty, empty, []
        )
    if cfg.kind is AttackKind.LABEL_FLIP:
        if cfg.flip_map is None:
            raise ValueError("label flipping needs a resolved flip_map")
        poisoned = label_flip(shard, cfg.flip_map, cfg.poison_ratio, _rng.derive(seed, 1))
    else:
        poisoned = poison_with_adversarial_samples(arch, global_params, shard, cfg, sgd, seed)
    for note in poisoned.notes:
        logger.info("%s: %s", shard.name, note)
    data = poisoned.data
    return sgd.train(arch, global_params, data.features, data.labels, seed), poisoned
