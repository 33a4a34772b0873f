import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections.abc import Sequence
from contextvars import ContextVar
from functools import lru_cache
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from bev_adapter.raster import BevSpec
from cot.prompts import CotOptions
from losses.training import TrainSchedule
from model.transformer import ModelConfig
from planeval.geometry import EGO_DIMS

load_dotenv(override=True)


class Settings(BaseSettings):
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    JUDGE_API_KEY_ENV: str = os.getenv("JUDGE_API_KEY_ENV", "OPENAI_API_KEY")


@lru_cache
def get_settings() -> Settings:
    return Settings()


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WorldSection(_Section):
    seed: int = 0
    n_scenes: int = Field(default=256, ge=1)


class ModelSection(_Section):
    n_layers: int = Field(default=2, ge=1)
    width: int = Field(default=64, ge=1)
    n_heads: int = Field(default=4, ge=1)
    max_seq_len: int = Field(default=512, ge=2)
    init_std: float = Field(default=0.02, gt=0)
    seed: int = 0

    def resolve(self, vocab_size: int, visual_layout: tuple[int, int]) -> ModelConfig:
        """Fill in the sizes that depend on the vocabulary and the BEV adapter."""
        n_visual, dim = visual_layout
        return ModelConfig(
            **self.model_dump(), vocab_size=vocab_size, visual_token_dim=dim, n_visual_tokens=n_visual
        )


class BevSection(_Section):
    extent_m: float = Field(default=32.0, gt=0)
    resolution_m: float = Field(default=0.5, gt=0)
    grid_h: int = Field(default=8, ge=1)
    grid_w: int = Field(default=8, ge=1)
    adapter: Literal["flatten", "pool"] = "flatten"

    @property
    def spec(self) -> BevSpec:
        return BevSpec(extent_m=self.extent_m, resolution_m=self.resolution_m)


class CotSection(_Section):
    multi_turn: bool = True
    perception: bool = True
    prediction: bool = True
    decision: bool = True

    @property
    def options(self) -> CotOptions:
        return CotOptions(**self.model_dump())


class EvalSection(_Section):
    mask_gt_collisions: bool = False
    ego_length: float = Field(default=EGO_DIMS[0], gt=0)
    ego_width: float = Field(default=EGO_DIMS[1], gt=0)
    max_failure_rate: float = Field(default=0.5, ge=0, le=1)

    @property
    def ego_dims(self) -> tuple[float, float]:
        return (self.ego_length, self.ego_width)


class JudgeSection(_Section):
    kind: Literal["mock", "real"] = "mock"
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo"
    timeout_s: float = Field(default=30.0, gt=0)
    retries: int = Field(default=3, ge=0)
    backoff_s: float = Field(default=1.0, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    max_samples: int = Field(default=200, ge=1)


class AlignSection(_Section):
    k: int = Field(default=4, ge=1)
    temperature: float = Field(default=1.0, gt=0)
    seed: int = 0


class PathsSection(_Section):
    out_dir: Path = Path("runs")
    world: Path = Path("runs/world.jsonl")
    vocab: Path = Path("runs/vocab.json")
    alignment: Path = Path("runs/alignment.jsonl")
    vanilla_checkpoint: Path = Path("runs/vanilla.ckpt")
    aligned_checkpoint: Path = Path("runs/aligned.ckpt")


_TOML_PATH: ContextVar[Path | None] = ContextVar("_TOML_PATH", default=None)


class RunConfig(BaseSettings):
    """
    One run of the pipeline. Values come from, highest priority first:
    `--set section.key=value` overrides, RDA_-prefixed environment variables
    (RDA_TRAIN__LR=1e-3), then the TOML file passed with --config.
    """

    model_config = SettingsConfigDict(env_prefix="RDA_", env_nested_delimiter="__", extra="forbid")

    world: WorldSection = WorldSection()
    model: ModelSection = ModelSection()
    bev: BevSection = BevSection()
    train: TrainSchedule = TrainSchedule()
    cot: CotSection = CotSection()
    eval: EvalSection = EvalSection()
    judge: JudgeSection = JudgeSection()
    align: AlignSection = AlignSection()
    paths: PathsSection = PathsSection()

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        sources: tuple[PydanticBaseSettingsSource, ...] = (init_settings, env_settings)
        toml_path = _TOML_PATH.get()
        if toml_path is not None:
            sources += (TomlConfigSettingsSource(settings_cls, toml_file=toml_path),)
        return sources


def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def parse_overrides(overrides: Sequence[str]) -> dict[str, Any]:
    """["train.lr=1e-3", "cot.multi_turn=false"] -> {"train": {"lr": 0.001}, "cot": {...}}"""
    tree: dict[str, Any] = {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        parts = key.strip().split(".")
        if not sep or not all(parts):
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} conflicts with an earlier one")
        node[parts[-1]] = _parse_value(raw.strip())
    return tree


def load_run_config(path: Path | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    if path is not None and not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path is not None:
        try:
            tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path} is not valid TOML: {exc}") from exc
    token = _TOML_PATH.set(path)
    try:
        return RunConfig(**parse_overrides(overrides))
    finally:
        _TOML_PATH.reset(token)
