"""Run configuration: agent roster, loop settings and paths, read from TOML.

Example::

    generator = "llama"
    evaluators = ["llama", "linkbricks", "qwen"]
    strategy = "leader_based"
    leader = "phi4"
    tau = 4
    t_max = 3
    cache_dir = ".resum-cache"

    [[agents]]
    id = "llama"
    model = "meta-llama/Llama-3.1-8B-Instruct"
    endpoint = "http://localhost:8000/v1"
    api_key_env = "LLAMA_API_KEY"

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError, InvalidParameterError
from .evaluation import AggregationStrategy, Ensemble
from .llm_gateway import DEFAULT_TEMPERATURE, AgentSpec
from .loop import LoopConfig
from .prompt_kit import DIMENSIONS, LOOP_DIMENSIONS, PromptTemplates

SINGLE = "single"
_STRATEGIES = (SINGLE, "averaging", "majority_voting", "leader_based")
_PATH_KEYS = ("cache_dir", "prompt_dir", "dale_chall_path")
_TOP_LEVEL_KEYS = {
    "agents", "generator", "evaluators", "leader", "strategy", "tau", "t_max",
    "dimensions", "scale_max", "parallelism", *_PATH_KEYS,
}
_AGENT_KEYS = {"id", "model", "endpoint", "api_key_env", "temperature", "max_output_tokens", "timeout_s"}


@dataclass
class RunConfig:
    agents: dict[str, AgentSpec] = field(default_factory=dict)
    generator_id: str | None = None
    evaluator_ids: list[str] = field(default_factory=list)
    leader_id: str | None = None
    strategy: str = SINGLE
    tau: int = 4
    t_max: int = 3
    dimensions: tuple[str, ...] = LOOP_DIMENSIONS
    scale_max: int = 5
    cache_dir: Path | None = None
    prompt_dir: Path | None = None
    dale_chall_path: Path | None = None
    parallelism: int = 1

    def validate(self) -> "RunConfig":
        def known(agent_id: str | None, role: str) -> None:
            if agent_id is not None and agent_id not in self.agents:
                raise ConfigurationError(f"{role} {agent_id!r} is not defined under [[agents]]")

        known(self.generator_id, "generator")
        for eid in self.evaluator_ids:
            known(eid, "evaluator")
        known(self.leader_id, "leader")
        if self.strategy not in _STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {_STRATEGIES}, got {self.strategy!r}")
        if self.strategy == SINGLE and len(self.evaluator_ids) > 1:
            raise ConfigurationError("several evaluators need an aggregation strategy")
        if self.strategy == "leader_based" and self.leader_id is None:
            raise ConfigurationError("strategy leader_based needs a leader")
        for d in self.dimensions:
            if d not in DIMENSIONS:
                raise ConfigurationError(f"unknown dimension {d!r}")
        if self.parallelism < 1:
            raise ConfigurationError("parallelism must be >= 1")
        return self

    def generator(self) -> AgentSpec:
        if self.generator_id is None:
            raise ConfigurationError("no generator configured")
        return self.agents[self.generator_id]

    def evaluator(self) -> AgentSpec | Ensemble:
        ids = self.evaluator_ids or ([self.generator_id] if self.generator_id else [])
        if not ids:
            raise ConfigurationError("no evaluator configured")
        agents = tuple(self.agents[i] for i in ids)
        if self.strategy == SINGLE:
            return agents[0]
        leader = self.agents[self.leader_id] if self.strategy == "leader_based" else None
        try:
            return Ensemble(agents, AggregationStrategy(self.strategy, leader))
        except InvalidParameterError as exc:
            raise ConfigurationError(str(exc)) from exc

    def templates(self) -> PromptTemplates | None:
        return PromptTemplates.load(self.prompt_dir) if self.prompt_dir else None

    def loop_config(self) -> LoopConfig:
        try:
            return LoopConfig(
                generator=self.generator(),
                evaluator=self.evaluator(),
                tau=self.tau,
                t_max=self.t_max,
                dimensions=tuple(self.dimensions),
                scale_max=self.scale_max,
                templates=self.templates(),
            )
        except InvalidParameterError as exc:
            raise ConfigurationError(str(exc)) from exc

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        changes = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **changes).validate()


def _agent(raw: dict, index: int) -> AgentSpec:
    unknown = set(raw) - _AGENT_KEYS
    if unknown:
        raise ConfigurationError(f"agents[{index}]: unknown keys {sorted(unknown)}")
    for key in ("id", "model", "endpoint"):
        if not isinstance(raw.get(key), str) or not raw[key]:
            raise ConfigurationError(f"agents[{index}]: {key!r} is required")
    try:
        return AgentSpec(
            agent_id=raw["id"],
            model_name=raw["model"],
            endpoint_url=raw["endpoint"],
            api_key_ref=raw.get("api_key_env"),
            temperature=float(raw.get("temperature", DEFAULT_TEMPERATURE)),
            max_output_tokens=int(raw.get("max_output_tokens", 1024)),
            timeout_s=int(raw.get("timeout_s", 120)),
        )
    except InvalidParameterError as exc:
        raise ConfigurationError(str(exc)) from exc


def parse_run_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    agents: dict[str, AgentSpec] = {}
    for i, raw in enumerate(data.get("agents", [])):
        spec = _agent(raw, i)
        if spec.agent_id in agents:
            raise ConfigurationError(f"duplicate agent id {spec.agent_id!r}")
        agents[spec.agent_id] = spec

    def path(key: str) -> Path | None:
        value = data.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() or base_dir is None else base_dir / p

    evaluators = data.get("evaluators", [])
    if isinstance(evaluators, str):
        evaluators = [evaluators]
    strategy = data.get("strategy", SINGLE if len(evaluators) <= 1 else "averaging")
    return RunConfig(
        agents=agents,
        generator_id=data.get("generator"),
        evaluator_ids=list(evaluators),
        leader_id=data.get("leader"),
        strategy=strategy,
        tau=int(data.get("tau", 4)),
        t_max=int(data.get("t_max", 3)),
        dimensions=tuple(data.get("dimensions", LOOP_DIMENSIONS)),
        scale_max=int(data.get("scale_max", 5)),
        cache_dir=path("cache_dir"),
        prompt_dir=path("prompt_dir"),
        dale_chall_path=path("dale_chall_path"),
        parallelism=int(data.get("parallelism", 1)),
    ).validate()


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return parse_run_config(data, path.parent)
