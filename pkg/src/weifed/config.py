"""Declarative experiment configuration, read from TOML.

Parsing is strict: unknown sections or keys are errors, and every
cross-field constraint is checked before any training starts. Validation
collects all problems as ``"section.key: message"`` strings.

Example::

    [data]
    source = "synthetic"
    n_classes = 4
    dim = 20
    class_counts = [5000, 2500, 1500, 1000]

    [training]
    rounds = 20

    [attack]
    kind = "LabelFlip"
    target_labels = [3]
    poison_ratio = 0.5

    [defense]
    aggregator = "WeiDetect"
    top_t = 14

    [seeds]
    master = 0
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ._toml import loads
from .aggregation import AggregatorKind, AggregatorSpec
from .attacks import AttackConfig, AttackKind


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass
class DataSection:
    source: str = "synthetic"
    csv_path: str = ""
    schema_path: str = ""
    n_classes: int = 4
    dim: int = 20
    class_counts: list[int] = field(default_factory=lambda: [5000, 2500, 1500, 1000])
    separation: float = 3.0
    noise: float = 0.1
    test_fraction: float = 0.2
    server_fraction: float = 0.1
    eta: float = 0.4
    client_count: int = 20


@dataclass
class TrainingSection:
    hidden: list[int] = field(default_factory=lambda: [64, 32])
    lr: float = 0.01
    batch_size: int = 32
    local_epochs: int = 5
    rounds: int = 100
    clients_per_round: int = 0
    reference_epochs: int = 100
    init: str = "random"  # "random" (He init) or "reference" (start from the server's model)


@dataclass
class AttackSection:
    kind: str = "None"
    target_labels: list[int] = field(default_factory=list)
    poison_ratio: float = 0.1
    epsilon: float = 0.35
    pgd_steps: int = 10
    pgd_alpha: float = 0.0
    gn_mu: float = 0.0
    gn_sigma: float = 0.1
    flip_map: dict[str, int] = field(default_factory=dict)
    adversary_fraction: float = 0.15
    adversary_ids: list[int] = field(default_factory=list)
    adversary_placement: str = "random"

    def attack_config(self, flip_map=None) -> AttackConfig:
        fm = flip_map if flip_map is not None else (
            {int(k): v for k, v in self.flip_map.items()} or None
        )
        return AttackConfig(
            kind=AttackKind.parse(self.kind),
            target_labels=tuple(self.target_labels),
            poison_ratio=self.poison_ratio,
            epsilon=self.epsilon,
            pgd_steps=self.pgd_steps,
            pgd_alpha=self.pgd_alpha or None,
            gn_mu=self.gn_mu,
            gn_sigma=self.gn_sigma,
            flip_map=fm,
        )


@dataclass
class DefenseSection:
    aggregator: str = "WeiDetect"
    f: int = -1
    m_select: int = -1
    trim_k: int = -1
    top_t: int = 0
    floc: float = 0.0
    aux_threshold: float = 0.9
    aux_volume: float = 1.0

    def spec(self) -> AggregatorSpec:
        return AggregatorSpec(
            kind=AggregatorKind.parse(self.aggregator),
            f=None if self.f < 0 else self.f,
            m_select=None if self.m_select < 0 else self.m_select,
            trim_k=None if self.trim_k < 0 else self.trim_k,
        )


@dataclass
class SeedsSection:
    master: int = 0


@dataclass
class OutputSection:
    wall_time: bool = True
    dump_params: bool = False


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    attack: AttackSection = field(default_factory=AttackSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    # ---------------------------------------------------------------- build

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> ExperimentConfig:
        errors = []
        sections = {}
        for f in dataclasses.fields(cls):
            if f.name == "base_dir":
                continue
            sections[f.name] = f.default_factory  # type: ignore[misc]
        for name in raw:
            if name not in sections:
                errors.append(f"{name}: unknown section")
        built = {}
        for name, factory in sections.items():
            section = factory()
            given = raw.get(name, {})
            if not isinstance(given, dict):
                errors.append(f"{name}: must be a table")
                continue
            known = {f.name: f for f in dataclasses.fields(section)}
            for key, value in given.items():
                if key not in known:
                    errors.append(f"{name}.{key}: unknown key")
                    continue
                default = getattr(section, key)
                problem = _type_problem(default, value)
                if problem:
                    errors.append(f"{name}.{key}: {problem}")
                    continue
                setattr(section, key, _coerce(default, value))
            built[name] = section
        if len(built) == len(sections):
            # cross-field checks on whatever parsed, so one pass reports everything
            cfg = cls(**built, base_dir=Path(base_dir))
            errors += cfg.validate()
        if errors:
            raise ConfigError(errors)
        return cfg

    @classmethod
    def from_toml(cls, text: str, base_dir=".") -> ExperimentConfig:
        return cls.from_dict(loads(text), base_dir)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        return cls.from_toml(path.read_text(), path.parent)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def replace(self, dotted: dict) -> ExperimentConfig:
        """Copy with ``{"section.key": value}`` overrides applied and revalidated."""
        raw = self.to_dict()
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            raw.setdefault(section, {})[name] = copy.deepcopy(value)
        return type(self).from_dict(raw, self.base_dir)

    def resolve_path(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    # ------------------------------------------------------------- validate

    @property
    def adversary_count(self) -> int:
        if self.attack.adversary_ids:
            return len(self.attack.adversary_ids)
        if AttackKind.parse(self.attack.kind) is AttackKind.NONE:
            return 0
        return int(self.attack.adversary_fraction * self.data.client_count + 0.5)

    @property
    def clients_per_round(self) -> int:
        return self.training.clients_per_round or self.data.client_count

    def validate(self) -> list[str]:
        e = []
        d, t, a, df = self.data, self.training, self.attack, self.defense
        if d.source not in ("synthetic", "csv"):
            e.append("data.source: must be 'synthetic' or 'csv'")
        if d.source == "csv":
            if not d.csv_path:
                e.append("data.csv_path: required when source = 'csv'")
            if not d.schema_path:
                e.append("data.schema_path: required when source = 'csv'")
        else:
            if d.n_classes < 2:
                e.append("data.n_classes: must be >= 2")
            if d.dim < 1:
                e.append("data.dim: must be >= 1")
            if len(d.class_counts) != d.n_classes or any(c < 0 for c in d.class_counts):
                e.append("data.class_counts: need one non-negative count per class")
            if d.separation <= 0:
                e.append("data.separation: must be > 0")
            if d.noise <= 0:
                e.append("data.noise: must be > 0")
        if not 0 < d.test_fraction < 1:
            e.append("data.test_fraction: must lie in (0, 1)")
        if not 0 < d.server_fraction < 1:
            e.append("data.server_fraction: must lie in (0, 1)")
        if d.eta <= 0:
            e.append("data.eta: must be > 0")
        if d.client_count < 2:
            e.append("data.client_count: must be >= 2")

        if any(h < 1 for h in t.hidden):
            e.append("training.hidden: layer sizes must be >= 1")
        if t.lr <= 0:
            e.append("training.lr: must be > 0")
        if t.batch_size < 1:
            e.append("training.batch_size: must be >= 1")
        if t.local_epochs < 1:
            e.append("training.local_epochs: must be >= 1")
        if t.rounds < 0:
            e.append("training.rounds: must be >= 0")
        if t.reference_epochs < 1:
            e.append("training.reference_epochs: must be >= 1")
        if t.init not in ("random", "reference"):
            e.append("training.init: must be 'random' or 'reference'")
        if not 0 <= t.clients_per_round <= d.client_count:
            e.append("training.clients_per_round: must lie in [0, client_count] (0 = all)")

        try:
            kind = AttackKind.parse(a.kind)
        except ValueError as exc:
            e.append(f"attack.kind: {exc}")
            kind = None
        if kind is not None:
            e.extend(f"attack.{msg}" for msg in a.attack_config().validate())
        n_classes = d.n_classes if d.source == "synthetic" else None
        if n_classes is not None and any(not 0 <= c < n_classes for c in a.target_labels):
            e.append(f"attack.target_labels: must lie in [0, {n_classes})")
        if not 0 <= a.adversary_fraction <= 1:
            e.append("attack.adversary_fraction: must lie in [0, 1]")
        if a.adversary_placement not in ("random", "target_holders"):
            e.append("attack.adversary_placement: must be 'random' or 'target_holders'")
        if any(not 0 <= i < d.client_count for i in a.adversary_ids):
            e.append("attack.adversary_ids: ids must lie in [0, client_count)")
        if len(set(a.adversary_ids)) != len(a.adversary_ids):
            e.append("attack.adversary_ids: duplicate ids")
        if self.adversary_count > d.client_count // 3:
            e.append(
                f"attack.adversary_fraction: {self.adversary_count} adversaries exceed the "
                f"one-third cap floor({d.client_count}/3) = {d.client_count // 3}"
            )

        try:
            spec = df.spec()
        except ValueError as exc:
            e.append(f"defense.aggregator: {exc}")
            spec = None
        if spec is not None:
            e.extend(f"defense.{msg}" for msg in spec.validate(self.clients_per_round))
        if df.top_t < 0:
            e.append("defense.top_t: must be >= 0 (0 = n - floor(n/3))")
        if df.top_t > self.clients_per_round:
            e.append("defense.top_t: cannot exceed the clients per round")
        if not 0 < df.aux_threshold < 1:
            e.append("defense.aux_threshold: must lie in (0, 1)")
        if not 0 < df.aux_volume <= 1:
            e.append("defense.aux_volume: must lie in (0, 1]")
        return e


def _type_problem(default, value) -> str | None:
    if isinstance(default, bool):
        return None if isinstance(value, bool) else "expected true/false"
    if isinstance(default, int):
        return None if isinstance(value, int) and not isinstance(value, bool) else "expected an integer"
    if isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        return None if ok else "expected a number"
    if isinstance(default, str):
        return None if isinstance(value, str) else "expected a string"
    if isinstance(default, list):
        if not isinstance(value, list) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        ):
            return "expected a list of integers"
        return None
    if isinstance(default, dict):
        if not isinstance(value, dict) or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in value.values()
        ):
            return "expected a table of integers"
        bad = [k for k in value if not str(k).lstrip("-").isdigit()]
        return f"non-integer keys {bad}" if bad else None
    return None


def _coerce(default, value):
    if isinstance(default, float) and not isinstance(default, bool):
        return float(value)
    if isinstance(default, dict):
        return {str(k): int(v) for k, v in value.items()}
    if isinstance(default, list):
        return list(value)
    return value
