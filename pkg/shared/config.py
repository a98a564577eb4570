"""Configuration management for active generation runs.

Two layers:

* ``Settings`` - process-level knobs from the environment / ``.env``
  (output directory fallback, thread count, log level).
* ``ExperimentConfig`` - everything that determines a run's results, parsed
  from a flat ``key=value`` file with dotted section prefixes
  (``guidance.rho=200``). Guidance defaults: s=15, i=12.5, rho=200,
  N=1024, T=40, grad_window=10.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings

from shared.errors import ConfigError

load_dotenv()


class Settings(BaseSettings):
    """Process settings loaded from ACTGEN_* environment variables."""

    out: str = "runs"  # ACTGEN_OUT, fallback for --out
    threads: int = 1  # ACTGEN_THREADS
    log_level: str = "info"  # ACTGEN_LOG_LEVEL: debug|info|warning

    class Config:
        env_prefix = "ACTGEN_"
        env_file = ".env"
        case_sensitive = False
        extra = "ignore"


settings = Settings()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ShapeDatasetSpec(_Section):
    """Synthetic shapes dataset: disk, square, triangle, cross."""

    num_classes: int = Field(4, ge=2, le=4)
    image_size: int = Field(16, ge=8, le=64)
    channels: int = 1  # 1 (grayscale) or 3
    samples_per_class: int = Field(850, ge=0)
    background: Literal["mixed", "gradient", "noise", "flat"] = "mixed"
    noise_level: float = Field(0.25, ge=0.0, le=1.0)
    base_scale: float = Field(0.25, gt=0.0, le=0.5)  # shape half-extent / image size
    scale_jitter: float = Field(0.2, ge=0.0, lt=1.0)
    position_jitter: float = Field(2.0, ge=0.0)  # pixels
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.image_size % 4:
            raise ValueError("image_size must be a multiple of 4")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        return self


class DiffusionConfig(_Section):
    schedule: Literal["linear", "cosine"] = "linear"
    steps: int = Field(40, ge=1)
    # DDPM's 1e-4..2e-2 over 1000 steps, rescaled to 40 steps
    beta_min: float = Field(0.0025, gt=0.0, lt=1.0)
    beta_max: float = Field(0.5, gt=0.0, lt=1.0)
    embed_dim: int = Field(32, ge=2)
    channels: int = Field(32, ge=2)
    heads: int = Field(2, ge=1)
    time_dim: int = Field(32, ge=2)
    epochs: int = Field(40, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(2e-3, gt=0.0)
    drop_cond_prob: float = Field(0.1, ge=0.0, le=1.0)
    # weight of the foreground-mask term on the class-token attention map
    attn_weight: float = Field(1.0, ge=0.0)

    @model_validator(mode="after")
    def _check(self):
        if self.beta_min > self.beta_max:
            raise ValueError("beta_min must not exceed beta_max")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")
        return self


class ClassifierConfig(_Section):
    width1: int = Field(32, ge=1)
    width2: int = Field(64, ge=1)
    lr: float = Field(0.05, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    warmup_epochs: int = Field(1, ge=0)
    batch_size: int = Field(32, ge=1)


class GuidanceConfig(_Section):
    """All guidance knobs of a guided generation."""

    s: float = Field(15.0, ge=0.0)  # classifier-free guidance scale
    i: float = 12.5  # image-guidance strength (sigmoid centre, timestep units)
    lam: float = Field(1.0, ge=0.0, alias="lambda")
    rho: float = Field(200.0, gt=0.0)
    rho_fraction: Optional[float] = Field(None, gt=0.0)  # rho relative to mean pairwise data distance
    n_cap: int = Field(1024, ge=1)
    nu: float = Field(0.1, ge=0.0)
    grad_window: int = Field(10, ge=0)
    mask_mode: Literal["attention", "ground_truth", "none"] = "attention"
    adversarial: bool = True
    image_guidance: bool = True
    contrastive: bool = True
    sign: Literal["attract", "repel"] = "attract"
    bank_capacity: int = Field(4096, ge=1)
    strength_from_confidence: bool = False
    eta_L: float = 30.0
    eta_k: float = 10.0
    eta_p: float = 5.0
    eta_u: float = 0.5


class ExperimentSection(_Section):
    total_epochs: int = Field(20, ge=1)
    val_size: int = Field(400, ge=0)
    test_size: int = Field(1000, ge=0)
    gen_per_epoch: int = Field(20, ge=0)
    gen_stop_fraction: float = Field(0.5, ge=0.0, le=1.0)
    multiplicity: int = Field(1, ge=1)
    selection: Literal["misclassified", "confidence_below"] = "misclassified"
    threshold: Optional[float] = None
    record_wall_time: bool = False
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check(self):
        if self.selection == "confidence_below":
            if self.threshold is None or not (0.0 < self.threshold <= 1.0):
                raise ValueError("threshold must be in (0, 1] for confidence_below")
        return self


class PathsConfig(_Section):
    dataset: Optional[str] = None
    denoiser_checkpoint: Optional[str] = None
    classifier_checkpoint: Optional[str] = None


class ExperimentConfig(_Section):
    data: ShapeDatasetSpec = ShapeDatasetSpec()
    diffusion: DiffusionConfig = DiffusionConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    experiment: ExperimentSection = ExperimentSection()
    paths: PathsConfig = PathsConfig()

    @model_validator(mode="after")
    def _check(self):
        if self.guidance.grad_window > self.diffusion.steps:
            raise ValueError("guidance.grad_window must be within [0, diffusion.steps]")
        return self

    def flatten(self) -> List[Tuple[str, str]]:
        """Resolved config as ordered (dotted key, value) pairs."""
        pairs: List[Tuple[str, str]] = []
        for section, values in self.model_dump(by_alias=True).items():
            for key, value in values.items():
                pairs.append((f"{section}.{key}", _render(value)))
        return pairs

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.flatten())

    def with_overrides(self, **sections: Dict[str, Any]) -> "ExperimentConfig":
        """Copy with some section fields replaced, re-validated."""
        data = self.model_dump(by_alias=True)
        for section, values in sections.items():
            data[section].update(values)
        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as exc:
            err = exc.errors()[0]
            raise ConfigError(".".join(str(p) for p in err["loc"]) or "config", err["msg"]) from None


def _render(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_NULLS = {"", "none", "null"}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse flat ``key=value`` text into a validated ExperimentConfig."""
    nested: Dict[str, Dict[str, Union[str, None]]] = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        if key.count(".") != 1:
            raise ConfigError(key, "keys must look like section.name")
        section, name = key.split(".")
        if section not in ExperimentConfig.model_fields:
            raise ConfigError(key, f"unknown section {section!r}")
        nested.setdefault(section, {})[name] = None if value.lower() in _NULLS else value

    try:
        return ExperimentConfig.model_validate(nested)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = ".".join(str(part) for part in err["loc"])
        if err["type"] == "extra_forbidden":
            raise ConfigError(loc, "unknown key") from None
        raise ConfigError(loc or "config", err["msg"]) from None


def parse_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """Load and validate a config file; ``None`` yields all defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    return parse_config_text(text, source=str(path))
