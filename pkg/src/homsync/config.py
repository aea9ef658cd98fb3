"""Experiment configuration: typed sections, defaults and YAML loading.

All times are nanoseconds except detector jitter, which is given in
picoseconds as in detector datasheets.  Defaults reproduce the reference
experiment (10 MHz, 10 ns pulses, 50 us fiber each way, 230.456 ns offset).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .core import spectral_sigma
from .errors import ConfigError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def effective_mu(mu_source: float, loss_db: float, efficiency: float) -> float:
    """Mean photon number reaching the detectors after fiber loss and detector efficiency."""
    if mu_source < 0 or loss_db < 0 or efficiency < 0:
        raise ConfigError("mu_source, loss_db and efficiency must be non-negative")
    if efficiency > 1:
        raise ConfigError(f"efficiency must not exceed 1, got {efficiency}")
    return mu_source * 10.0 ** (-loss_db / 10.0) * efficiency


def source_mu_for(mu_eff: float, loss_db: float, efficiency: float) -> float:
    """Inverse of :func:`effective_mu`."""
    transmission = effective_mu(1.0, loss_db, efficiency)
    if transmission <= 0:
        raise ConfigError("zero transmission: no source intensity reaches the target mu")
    return mu_eff / transmission


DEFAULT_LOSS_DB = 2.0
DEFAULT_EFFICIENCY = 0.85


@dataclass
class SourceConfig:
    n_pulses: int = 100_000
    rep_period: float = 100.0
    mu_source: float = source_mu_for(1.0, DEFAULT_LOSS_DB, DEFAULT_EFFICIENCY)
    temporal_width: float = 10.0
    width_convention: str = "stddev"
    wavelength_nm: float = 1550.0  # metadata only

    def __post_init__(self):
        if self.n_pulses < 0:
            raise ConfigError("n_pulses must be non-negative")
        if not self.rep_period > 0:
            raise ConfigError("rep_period must be positive")
        if not self.temporal_width > 0:
            raise ConfigError("temporal_width must be positive")
        if self.width_convention not in ("stddev", "fwhm"):
            raise ConfigError("width_convention must be 'stddev' or 'fwhm'")
        if self.mu_source < 0:
            raise ConfigError("mu_source must be non-negative")

    @property
    def width_stddev(self) -> float:
        return 0.5 / self.sigma_spec

    @property
    def sigma_spec(self) -> float:
        """Spectral width in rad/ns."""
        return spectral_sigma(self.temporal_width, self.width_convention)


@dataclass
class ChannelConfig:
    prop_delay_ab: float = 50_000.0
    prop_delay_ba: float = 50_000.0
    loss_db: float = DEFAULT_LOSS_DB
    reciprocal: bool = True

    def __post_init__(self):
        if self.prop_delay_ab < 0 or self.prop_delay_ba < 0:
            raise ConfigError("propagation delays must be non-negative")
        if self.loss_db < 0:
            raise ConfigError("loss_db must be non-negative")
        if self.reciprocal and self.prop_delay_ab != self.prop_delay_ba:
            raise ConfigError(
                "reciprocal channel requires prop_delay_ab == prop_delay_ba "
                "(set reciprocal: false to model asymmetry)"
            )


@dataclass
class DetectorConfig:
    efficiency: float = DEFAULT_EFFICIENCY
    jitter_fwhm: float = 150.0  # ps
    jitter_terms: int = 2  # independent jitter samples added per pair
    accidental_prob: float = 0.0  # per-pair accidental coincidence (dark counts)

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ConfigError("efficiency must lie in (0, 1]")
        if self.jitter_fwhm < 0:
            raise ConfigError("jitter_fwhm must be non-negative")
        if self.jitter_terms not in (1, 2):
            raise ConfigError("jitter_terms must be 1 or 2")
        if not 0 <= self.accidental_prob < 1:
            raise ConfigError("accidental_prob must lie in [0, 1)")


@dataclass
class ClockPair:
    delta_true: float = 230.456


@dataclass
class ScanConfig:
    vdl_step: float = 0.18
    vdl_span: float | None = None  # half-width; None means 5 temporal widths
    k_range: int = 10
    frames: int = 1
    # Coarse offset known before the scan, e.g. from a classical exchange.
    # None stands in for a coarse estimate equal to the true offset.
    coarse_offset: float | None = None

    def __post_init__(self):
        if not self.vdl_step > 0:
            raise ConfigError("vdl_step must be positive")
        if self.vdl_span is not None and self.vdl_span < 0:
            raise ConfigError("vdl_span must be non-negative")
        if self.k_range < 0:
            raise ConfigError("k_range must be non-negative")
        if self.frames < 1:
            raise ConfigError("frames must be at least 1")


ATTACK_KINDS = ("none", "intercept_resend")


@dataclass
class AttackConfig:
    kind: str = "none"
    eve_basis_strategy: str = "uniform_random"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack kind must be one of {ATTACK_KINDS}")
        if self.eve_basis_strategy != "uniform_random":
            raise ConfigError("only the uniform_random basis strategy is modelled")


@dataclass
class SecurityConfig:
    significance: float = 0.00135  # one-sided 3 sigma
    mc_trials: int = 20_000
    mu_values: list[float] = field(
        default_factory=lambda: [0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]
    )
    tau_span: float = 40.0
    tau_step: float = 2.0
    min_trials: int = 1000  # fewer post-selected trials triggers a warning record

    def __post_init__(self):
        if not 0 < self.significance < 0.5:
            raise ConfigError("significance must lie in (0, 0.5)")
        if self.mc_trials < 1:
            raise ConfigError("mc_trials must be positive")
        if any(m < 0 for m in self.mu_values):
            raise ConfigError("mu_values must be non-negative")


@dataclass
class CurvesConfig:
    mu_values: list[float] = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0])
    phi_values: list[float] = field(
        default_factory=lambda: [0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, math.pi / 2]
    )
    sigma_t_values: list[float] = field(default_factory=lambda: [5.0, 10.0, 20.0])
    tau_span: float = 60.0
    tau_step: float = 0.5

    def __post_init__(self):
        if not self.tau_step > 0 or self.tau_span < 0:
            raise ConfigError("tau_step must be positive and tau_span non-negative")
        if any(s <= 0 for s in self.sigma_t_values):
            raise ConfigError("sigma_t_values must be positive")


@dataclass
class OutputConfig:
    format: str = "csv"
    path: str = "results"

    def __post_init__(self):
        if self.format not in ("csv", "json"):
            raise ConfigError("output format must be 'csv' or 'json'")


@dataclass
class ExperimentConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    clocks: ClockPair = field(default_factory=ClockPair)
    scan: ScanConfig = field(default_factory=ScanConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    security: SecurityConfig = field(default_factory=SecurityConfig)
    curves: CurvesConfig = field(default_factory=CurvesConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 20250101
    workers: int = 1

    @property
    def mu_eff(self) -> float:
        return effective_mu(self.source.mu_source, self.channel.loss_db, self.detector.efficiency)

    @property
    def vdl_span(self) -> float:
        """Scan half-width, clipped so nearest-pulse pairing never wraps."""
        span = self.scan.vdl_span
        if span is None:
            span = 5.0 * self.source.width_stddev
        return min(span, 0.5 * self.source.rep_period)

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with whole sections or nested fields swapped.

        ``cfg.replace(seed=3, source={"n_pulses": 10})`` updates only the
        named fields of the ``source`` section.
        """
        changes = {}
        for name, value in sections.items():
            current = getattr(self, name)
            if isinstance(value, dict) and dataclasses.is_dataclass(current):
                value = dataclasses.replace(current, **value)
            changes[name] = value
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable hash over everything that influences results (not output)."""
        data = self.to_dict()
        data.pop("output")
        data.pop("workers")
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_SECTIONS = {
    "source": SourceConfig,
    "channel": ChannelConfig,
    "detector": DetectorConfig,
    "clocks": ClockPair,
    "scan": ScanConfig,
    "attack": AttackConfig,
    "security": SecurityConfig,
    "curves": CurvesConfig,
    "output": OutputConfig,
}


def _build_section(cls, raw: dict, name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def config_from_dict(raw: dict | None) -> ExperimentConfig:
    """Build a validated config from nested plain data (e.g. parsed YAML).

    ``source.mu_effective`` may be given instead of ``source.mu_source``;
    the source intensity is then back-computed from loss and efficiency.
    """
    raw = dict(raw or {})
    unknown = set(raw) - set(_SECTIONS) - {"seed", "workers"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    source_raw = dict(raw.get("source") or {})
    channel_raw = dict(raw.get("channel") or {})
    mu_target = source_raw.pop("mu_effective", None)
    if mu_target is not None and "mu_source" in source_raw:
        raise ConfigError("give either source.mu_effective or source.mu_source, not both")
    if "prop_delay_ab" in channel_raw and "prop_delay_ba" not in channel_raw:
        channel_raw["prop_delay_ba"] = channel_raw["prop_delay_ab"]
    if (
        "reciprocal" not in channel_raw
        and channel_raw.get("prop_delay_ab", 50_000.0) != channel_raw.get("prop_delay_ba", 50_000.0)
    ):
        channel_raw["reciprocal"] = False

    sections = {}
    for name, cls in _SECTIONS.items():
        section_raw = {"source": source_raw, "channel": channel_raw}.get(name, raw.get(name) or {})
        sections[name] = _build_section(cls, section_raw, name)

    if mu_target is not None:
        if mu_target <= 0:
            raise ConfigError("source.mu_effective must be positive")
        mu_source = source_mu_for(
            float(mu_target), sections["channel"].loss_db, sections["detector"].efficiency
        )
        log.info("mu_effective=%g -> mu_source=%.6g at the transmitter", mu_target, mu_source)
        sections["source"] = dataclasses.replace(sections["source"], mu_source=mu_source)

    try:
        seed = int(raw.get("seed", ExperimentConfig.seed))
        workers = int(raw.get("workers", 1))
    except (TypeError, ValueError):
        raise ConfigError("seed and workers must be integers") from None
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    return ExperimentConfig(**sections, seed=seed, workers=workers)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping at top level")
    return config_from_dict(raw)
