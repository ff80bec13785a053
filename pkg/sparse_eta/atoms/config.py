"""
Experiment configuration for the sparse-eta package.

A configuration file is a TOML document with top-level ``seed``, ``threads``
and ``out`` keys and one table per component:

    seed = 7
    threads = 1
    out = "runs/grid8"

    [network]
    rows = 8
    cols = 8

    [candidates]
    m = 5
    tau = 0.8

    [em]
    max_em_iters = 10
    lr = 1e-4

Command-line flags override file values through
:meth:`ExperimentConfig.with_overrides`.
"""

import dataclasses
import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from sparse_eta.atoms.error_utils import ValidationError, FileIOError
from sparse_eta.atoms.input_validator import (
    validate_file_path,
    validate_keep_ratio,
    validate_threshold,
    validate_positive_int,
)

logger = logging.getLogger(__name__)


@dataclass
class NetworkConfig:
    """Where the road network comes from: a file, or a generated grid."""
    path: Optional[str] = None
    rows: int = 8
    cols: int = 8
    spacing_m: float = 500.0
    artery_stride: int = 3
    origin_lon: float = 108.94
    origin_lat: float = 34.26
    snap_radius_m: float = 100.0


@dataclass
class SimulationConfig:
    trips: int = 2000
    keep_ratios: List[float] = field(default_factory=lambda: [0.125, 0.0625, 0.03125])
    tick_s: float = 15.0
    cv: float = 0.15
    noise_sd: float = 0.1
    primary_peak: float = 2.5
    secondary_peak: float = 2.0
    tertiary_peak: float = 1.5
    route_probs: List[float] = field(default_factory=lambda: [0.7, 0.2, 0.1])
    min_hops: int = 6
    base_date: str = "2023-10-02"
    day_start_hour: float = 6.0
    day_end_hour: float = 22.0
    weather_id: int = 0
    holiday_id: int = 0
    jitter_m: float = 0.0
    snap_to_nodes: bool = True


@dataclass
class CandidateConfig:
    m: int = 5
    tau: float = 0.8
    oversample: int = 4


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    mu_clamp: float = 3.0
    sigma_min: float = 1.0
    sigma_init: float = 60.0
    n_weather: int = 4
    n_holiday: int = 2
    init_scale: float = 0.1
    table_day_of_week: int = 0
    table_weather_id: int = 0
    table_holiday_id: int = 0


@dataclass
class EmConfig:
    max_em_iters: int = 10
    epochs: int = 20
    # Adam rate for mini-batches of dozens of pairs; batches of one or two
    # pairs oscillate from about 5e-3 upwards
    lr: float = 1e-4
    batch_size: int = 64
    delta_mu_tol: float = 1.0
    patience: Optional[int] = 3
    refresh_candidates_every_iter: bool = False
    use_nll_assignment: bool = False


@dataclass
class SplitConfig:
    val_fraction: float = 0.1
    test_fraction: float = 0.2


@dataclass
class ExperimentConfig:
    """The resolved configuration of one experiment run."""
    seed: int = 0
    threads: int = 1
    out: str = "runs/default"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    em: EmConfig = field(default_factory=EmConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """
        Check cross-field invariants.

        Raises:
            ValidationError: On the first violated constraint
        """
        validate_positive_int(self.seed, "seed", allow_zero=True)
        validate_positive_int(self.threads, "threads")
        validate_positive_int(self.network.rows, "network.rows")
        validate_positive_int(self.network.cols, "network.cols")
        if self.network.path is None and (self.network.rows < 2 or self.network.cols < 2):
            raise ValidationError(
                message="Grid networks need at least 2 rows and 2 columns",
                input_value=f"{self.network.rows}x{self.network.cols}",
                validation_type="grid_shape"
            )
        validate_positive_int(self.simulation.trips, "simulation.trips", allow_zero=True)
        for ratio in self.simulation.keep_ratios:
            validate_keep_ratio(ratio)
        validate_positive_int(self.candidates.m, "candidates.m")
        validate_positive_int(self.candidates.oversample, "candidates.oversample")
        validate_threshold(self.candidates.tau)
        validate_positive_int(self.model.hidden_dim, "model.hidden_dim")
        if self.model.sigma_init <= self.model.sigma_min:
            raise ValidationError(
                message="model.sigma_init must exceed model.sigma_min",
                input_value=str(self.model.sigma_init),
                validation_type="sigma_init"
            )
        m = self.model
        if not (
            0 <= m.table_day_of_week < 7
            and 0 <= m.table_weather_id < m.n_weather
            and 0 <= m.table_holiday_id < m.n_holiday
        ):
            raise ValidationError(
                message="model.table_* must name a day of week, weather and holiday the model embeds",
                input_value=f"{m.table_day_of_week}, {m.table_weather_id}, {m.table_holiday_id}",
                validation_type="table_context"
            )
        validate_positive_int(self.em.max_em_iters, "em.max_em_iters", allow_zero=True)
        validate_positive_int(self.em.epochs, "em.epochs", allow_zero=True)
        validate_positive_int(self.em.batch_size, "em.batch_size")
        if not self.em.lr > 0.0:
            raise ValidationError(
                message="em.lr must be positive",
                input_value=str(self.em.lr),
                validation_type="learning_rate"
            )
        fractions = self.split.val_fraction + self.split.test_fraction
        if self.split.val_fraction < 0 or self.split.test_fraction < 0 or fractions >= 1.0:
            raise ValidationError(
                message="Split fractions must be non-negative and sum below 1",
                input_value=f"val={self.split.val_fraction}, test={self.split.test_fraction}",
                validation_type="split"
            )

    def with_overrides(
        self,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        out: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Return a copy with command-line flags applied on top of file values."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if threads is not None:
            changes["threads"] = threads
        if out is not None:
            changes["out"] = str(out)
        resolved = dataclasses.replace(self, **changes)
        if changes:
            logger.info("Config overrides applied: %s", changes)
        return resolved

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build a config from a nested mapping (e.g. a parsed TOML document).

        Raises:
            ValidationError: On unknown sections or keys
        """
        sections: Dict[str, type] = {
            "network": NetworkConfig,
            "simulation": SimulationConfig,
            "candidates": CandidateConfig,
            "model": ModelConfig,
            "em": EmConfig,
            "split": SplitConfig,
        }
        scalars = {"seed", "threads", "out"}
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key in scalars:
                kwargs[key] = value
            elif key in sections:
                if not isinstance(value, dict):
                    raise ValidationError(
                        message=f"Section [{key}] must be a table",
                        input_value=str(value),
                        validation_type="config_section"
                    )
                kwargs[key] = _build_section(sections[key], key, value)
            else:
                raise ValidationError(
                    message=f"Unknown configuration key: {key}",
                    input_value=key,
                    validation_type="config_key"
                )
        return cls(**kwargs)


def _build_section(section_cls: type, name: str, values: Dict[str, Any]) -> Any:
    known = {f.name for f in dataclasses.fields(section_cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValidationError(
            message=f"Unknown keys in [{name}]: {', '.join(unknown)}",
            input_value=", ".join(unknown),
            validation_type="config_key",
            details={"section": name, "allowed": sorted(known)}
        )
    return section_cls(**values)


def load_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """
    Load an experiment configuration from a TOML file.

    Args:
        path: TOML file; ``None`` returns the defaults

    Raises:
        ValidationError: If the path is invalid or the content is not a valid config
        FileIOError: If the file cannot be parsed as TOML
    """
    if path is None:
        return ExperimentConfig()
    file_path = validate_file_path(path)
    try:
        with open(file_path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise FileIOError(
            message=f"Failed to parse config file: {str(e)}",
            file_path=str(file_path),
            operation="read"
        )
    logger.info("Loaded config from %s", file_path)
    return ExperimentConfig.from_dict(data)

