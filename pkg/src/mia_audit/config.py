"""Experiment configuration: a flat INI-style file, one key = value per line,
with one section per pipeline stage. Unset keys take the documented defaults;
two configs that resolve to the same values share the same digest.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .nn import DPConfig, TrainingConfig
from .signals import SignalKind

KNOWN_ATTACKS = ("loss", "calibration", "lira_offline", "rapid", "shortcut_lira")
DP_ROLES = ("target", "shadow", "reference")
SAMPLING_MODES = ("fixed", "random")


class ConfigError(ValueError):
    """Invalid configuration; the message names the section and key."""


@dataclass(frozen=True)
class SyntheticSource:
    """Gaussian-mixture data source; class means are placed from the seed.

    The defaults give the desk-scale overfitting benchmark: a 1000-sample
    training third drives a small MLP to ~1.0 train / ~0.84 test accuracy,
    leaving a measurable member/non-member gap.
    """

    num_classes: int = 2
    feature_dim: int = 16
    class_separation: float = 0.35
    cov_scale: float = 1.0
    n_samples: int = 6000
    seed: int | None = None  # derived from the master seed when None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("[data] num_classes: need at least 2 classes")
        if self.feature_dim < 1:
            raise ConfigError("[data] feature_dim: must be positive")
        if self.class_separation <= 0:
            raise ConfigError("[data] class_separation: must be positive")
        if self.cov_scale <= 0:
            raise ConfigError("[data] cov_scale: must be positive")
        if self.n_samples < 6:
            raise ConfigError("[data] n_samples: need at least 6 samples to split")


@dataclass(frozen=True)
class CsvSource:
    path: str

    def __post_init__(self):
        if not self.path:
            raise ConfigError("[data] path: required when source = csv")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run depends on; the digest of the resolved values
    stamps every artifact."""

    data: SyntheticSource | CsvSource = field(default_factory=SyntheticSource)
    attacker_data: SyntheticSource | CsvSource | None = None
    hidden_sizes: tuple[int, ...] = (256,)
    target_train: TrainingConfig = field(default_factory=TrainingConfig)
    shadow_train: TrainingConfig = field(default_factory=TrainingConfig)
    reference_train: TrainingConfig = field(default_factory=TrainingConfig)
    dp: DPConfig | None = None
    dp_apply_to: tuple[str, ...] = ("target",)
    signal_kind: SignalKind = SignalKind.LOSS
    logit_scaling: bool = False
    num_queries: int = 8
    augmentation_noise_std: float = 0.1
    num_reference_models: int = 4
    reference_sampling_mode: str = "fixed"
    reference_sample_fraction: float = 0.5
    attacks: tuple[str, ...] = KNOWN_ATTACKS
    fpr_levels: tuple[float, ...] = (0.001, 0.01, 0.1)
    scoring_hidden_sizes: tuple[int, ...] = (64, 64, 64)
    scoring_train: TrainingConfig = field(default_factory=lambda: TrainingConfig(
        learning_rate=0.05, momentum=0.9, weight_decay=0.0, batch_size=64,
        epochs=100, cosine_schedule=True))
    master_seed: int = 0
    split_seed: int | None = None

    def __post_init__(self):
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("[model] hidden_sizes: need positive hidden layer sizes")
        if self.num_queries < 1:
            raise ConfigError("[signal] num_queries: must be at least 1")
        if self.augmentation_noise_std < 0:
            raise ConfigError("[signal] augmentation_noise_std: must be nonnegative")
        if self.num_reference_models < 1:
            raise ConfigError("[reference] count: must be at least 1")
        if self.reference_sampling_mode not in SAMPLING_MODES:
            raise ConfigError(
                f"[reference] sampling: unknown mode {self.reference_sampling_mode!r}; "
                f"expected one of {SAMPLING_MODES}")
        if not (0.0 < self.reference_sample_fraction <= 1.0):
            raise ConfigError("[reference] sample_fraction: must lie in (0, 1]")
        if not self.attacks:
            raise ConfigError("[attacks] enabled: attack list must be nonempty")
        for name in self.attacks:
            if name not in KNOWN_ATTACKS:
                raise ConfigError(
                    f"[attacks] enabled: unknown attack {name!r}; expected from {KNOWN_ATTACKS}")
        if not self.fpr_levels:
            raise ConfigError("[eval] fpr_levels: must be nonempty")
        for level in self.fpr_levels:
            if not (0.0 < level < 1.0):
                raise ConfigError(f"[eval] fpr_levels: level {level} outside (0, 1)")
        for role in self.dp_apply_to:
            if role not in DP_ROLES:
                raise ConfigError(f"[dp] apply_to: unknown role {role!r}; expected from {DP_ROLES}")

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Replace top-level fields (used by sweeps and tests)."""
        return dataclasses.replace(self, **kw)

    def canonical_dict(self) -> dict:
        def encode(value):
            if isinstance(value, (SyntheticSource, CsvSource, TrainingConfig, DPConfig)):
                return {k: encode(v) for k, v in dataclasses.asdict(value).items()}
            if isinstance(value, SignalKind):
                return value.value
            if isinstance(value, tuple):
                return list(value)
            return value

        return {name: encode(getattr(self, name)) for name in sorted(
            f.name for f in dataclasses.fields(self))}

    def digest(self) -> str:
        text = json.dumps(self.canonical_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _convert(section: str, key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError("not a boolean")
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "float_list":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind} ({exc})") from None


class _SectionReader:
    def __init__(self, parser: configparser.ConfigParser, name: str):
        self._parser = parser
        self._name = name
        self._seen = set()

    def get(self, key: str, kind: str, default):
        self._seen.add(key)
        if not self._parser.has_option(self._name, key):
            return default
        return _convert(self._name, key, self._parser.get(self._name, key), kind)

    def check_unknown(self):
        if not self._parser.has_section(self._name):
            return
        for key in self._parser.options(self._name):
            if key not in self._seen:
                raise ConfigError(f"[{self._name}] {key}: unknown key")


def _parse_source(reader: _SectionReader, section: str):
    source = reader.get("source", "str", "synthetic")
    if source not in ("synthetic", "csv"):
        raise ConfigError(f"[{section}] source: expected 'synthetic' or 'csv', got {source!r}")
    path = reader.get("path", "str", "")
    num_classes = reader.get("num_classes", "int", 2)
    feature_dim = reader.get("feature_dim", "int", 16)
    class_separation = reader.get("class_separation", "float", 0.35)
    cov_scale = reader.get("cov_scale", "float", 1.0)
    n_samples = reader.get("n_samples", "int", 6000)
    seed = reader.get("seed", "int", None)
    reader.check_unknown()
    if source == "csv":
        return CsvSource(path=path)
    return SyntheticSource(num_classes=num_classes, feature_dim=feature_dim,
                           class_separation=class_separation, cov_scale=cov_scale,
                           n_samples=n_samples, seed=seed)


def _parse_training(reader: _SectionReader, base: TrainingConfig) -> TrainingConfig:
    cfg = TrainingConfig(
        learning_rate=reader.get("learning_rate", "float", base.learning_rate),
        momentum=reader.get("momentum", "float", base.momentum),
        weight_decay=reader.get("weight_decay", "float", base.weight_decay),
        batch_size=reader.get("batch_size", "int", base.batch_size),
        epochs=reader.get("epochs", "int", base.epochs),
        cosine_schedule=reader.get("cosine_schedule", "bool", base.cosine_schedule),
    )
    reader.check_unknown()
    return cfg


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    known_sections = {"data", "attacker_data", "model", "train.target", "train.shadow",
                      "train.reference", "dp", "signal", "reference", "attacks",
                      "scoring", "eval", "experiment"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"[{section}]: unknown section")

    data = _parse_source(_SectionReader(parser, "data"), "data")
    attacker_data = None
    if parser.has_section("attacker_data"):
        attacker_data = _parse_source(_SectionReader(parser, "attacker_data"), "attacker_data")

    model = _SectionReader(parser, "model")
    hidden_sizes = model.get("hidden_sizes", "int_list", (64,))
    model.check_unknown()

    base = TrainingConfig()
    target_train = _parse_training(_SectionReader(parser, "train.target"), base)
    shadow_train = _parse_training(_SectionReader(parser, "train.shadow"), target_train)
    reference_train = _parse_training(_SectionReader(parser, "train.reference"), target_train)

    dp = None
    dp_apply_to = ("target",)
    if parser.has_section("dp"):
        reader = _SectionReader(parser, "dp")
        clip = reader.get("clip_norm", "float", 10.0)
        sigma = reader.get("noise_multiplier", "float", 0.0)
        dp_apply_to = reader.get("apply_to", "str_list", ("target",))
        reader.check_unknown()
        try:
            dp = DPConfig(clip_norm=clip, noise_multiplier=sigma)
        except ValueError as exc:
            raise ConfigError(f"[dp]: {exc}") from None

    sig = _SectionReader(parser, "signal")
    kind_raw = sig.get("kind", "str", "loss")
    try:
        signal_kind = SignalKind(kind_raw)
    except ValueError:
        raise ConfigError(f"[signal] kind: unknown signal {kind_raw!r}; expected "
                          f"{[k.value for k in SignalKind]}") from None
    logit_scaling = sig.get("logit_scaling", "bool", False)
    num_queries = sig.get("num_queries", "int", 8)
    noise_std = sig.get("augmentation_noise_std", "float", 0.1)
    sig.check_unknown()

    ref = _SectionReader(parser, "reference")
    num_reference_models = ref.get("count", "int", 4)
    sampling_mode = ref.get("sampling", "str", "fixed")
    sample_fraction = ref.get("sample_fraction", "float", 0.5)
    ref.check_unknown()

    att = _SectionReader(parser, "attacks")
    attacks = att.get("enabled", "str_list", KNOWN_ATTACKS)
    att.check_unknown()

    scoring = _SectionReader(parser, "scoring")
    scoring_hidden = scoring.get("hidden_sizes", "int_list", (64, 64, 64))
    scoring_train = TrainingConfig(
        learning_rate=scoring.get("learning_rate", "float", 0.05),
        momentum=scoring.get("momentum", "float", 0.9),
        weight_decay=scoring.get("weight_decay", "float", 0.0),
        batch_size=scoring.get("batch_size", "int", 64),
        epochs=scoring.get("epochs", "int", 100),
        cosine_schedule=scoring.get("cosine_schedule", "bool", True),
    )
    scoring.check_unknown()

    ev = _SectionReader(parser, "eval")
    fpr_levels = ev.get("fpr_levels", "float_list", (0.001, 0.01, 0.1))
    ev.check_unknown()

    exp = _SectionReader(parser, "experiment")
    master_seed = exp.get("master_seed", "int", 0)
    split_seed = exp.get("split_seed", "int", None)
    exp.check_unknown()

    try:
        return ExperimentConfig(
            data=data,
            attacker_data=attacker_data,
            hidden_sizes=hidden_sizes,
            target_train=target_train,
            shadow_train=shadow_train,
            reference_train=reference_train,
            dp=dp,
            dp_apply_to=dp_apply_to,
            signal_kind=signal_kind,
            logit_scaling=logit_scaling,
            num_queries=num_queries,
            augmentation_noise_std=noise_std,
            num_reference_models=num_reference_models,
            reference_sampling_mode=sampling_mode,
            reference_sample_fraction=sample_fraction,
            attacks=attacks,
            fpr_levels=fpr_levels,
            scoring_hidden_sizes=scoring_hidden,
            scoring_train=scoring_train,
            master_seed=master_seed,
            split_seed=split_seed,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
