"""Configuration file loading.

A config is a YAML (or JSON) mapping with optional sections::

    engine:     {k: 10, parallelism: 4, parse_mode: normalized, max_retries: 2,
                 max_depth: null, template_file: null}
    grouping:   {strategy: sequential, seed: 0, similarity_file: null}
    backend:    {kind: oracle, base_url: ..., model: ..., api_key_env: DCI_API_KEY,
                 timeout_s: 120, max_in_flight: 8, max_attempts: 3, temperature: null}
    oracle:     {delta: 4.595, p_none_when_absent: 1.0, p_none_when_present: 0.0,
                 latency_c0: 0.0, latency_c2: 0.0, seed: 0}
    cost_model: {c0: 2500.0, c2: 1.0}

The HTTP credential is read from the environment variable named by
``backend.api_key_env``; it is never stored in the file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .analysis import DEFAULT_C0, DEFAULT_C2
from .backends import DilutionOracleParams, HttpBackendConfig
from .label_space import Grouping
from .prompting import DEFAULT_TEMPLATE, ParsePolicy, PromptTemplate

SECTIONS = ("engine", "grouping", "backend", "oracle", "cost_model")


class ConfigError(ValueError):
    pass


@dataclass
class EngineSection:
    k: int = 10
    parallelism: int = 1
    parse_mode: str = "normalized"
    max_retries: int = 2
    max_depth: int | None = None
    template_file: str | None = None


@dataclass
class GroupingSection:
    strategy: str = "sequential"
    seed: int = 0
    similarity_file: str | None = None


@dataclass
class BackendSection:
    kind: str = "oracle"
    base_url: str = "http://localhost:8000/v1"
    model: str = "qwen3-vl-8b"
    api_key_env: str = "DCI_API_KEY"
    timeout_s: float = 120.0
    max_in_flight: int = 8
    max_attempts: int = 3
    backoff_base_s: float = 1.0
    temperature: float | None = None
    max_tokens: int = 64


@dataclass
class OracleSection:
    delta: float = math.log(99)
    p_none_when_absent: float = 1.0
    p_none_when_present: float = 0.0
    latency_c0: float = 0.0
    latency_c2: float = 0.0
    seed: int = 0


@dataclass
class CostSection:
    c0: float = DEFAULT_C0
    c2: float = DEFAULT_C2


@dataclass
class AppConfig:
    engine: EngineSection = field(default_factory=EngineSection)
    grouping: GroupingSection = field(default_factory=GroupingSection)
    backend: BackendSection = field(default_factory=BackendSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    cost_model: CostSection = field(default_factory=CostSection)

    @classmethod
    def from_mapping(cls, data: dict[str, Any] | None) -> AppConfig:
        data = dict(data or {})
        kwargs = {}
        for name, section_cls in (("engine", EngineSection), ("grouping", GroupingSection),
                                  ("backend", BackendSection), ("oracle", OracleSection),
                                  ("cost_model", CostSection)):
            kwargs[name] = _build(section_cls, data.pop(name, None) or {}, name)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, Any]:
        return {name: dict(vars(getattr(self, name))) for name in SECTIONS}

    def parse_policy(self) -> ParsePolicy:
        return ParsePolicy(self.engine.parse_mode, self.engine.max_retries)

    def template(self) -> PromptTemplate:
        if self.engine.template_file:
            return PromptTemplate.from_file(self.engine.template_file)
        return DEFAULT_TEMPLATE

    def oracle_params(self, true_label: str) -> DilutionOracleParams:
        o = self.oracle
        return DilutionOracleParams(
            true_label=true_label,
            signal_boost_delta=o.delta,
            p_none_when_absent=o.p_none_when_absent,
            latency_c0=o.latency_c0,
            latency_c2=o.latency_c2,
            seed=o.seed,
            p_none_when_present=o.p_none_when_present,
        )

    def http_config(self) -> HttpBackendConfig:
        b = self.backend
        return HttpBackendConfig(
            base_url=b.base_url, model=b.model, api_key_env=b.api_key_env,
            timeout_s=b.timeout_s, max_in_flight=b.max_in_flight,
            max_attempts=b.max_attempts, backoff_base_s=b.backoff_base_s,
            temperature=b.temperature, max_tokens=b.max_tokens,
        )

    def grouping_strategy(self, seed: int | None = None) -> Grouping:
        from .harness import load_similarity_matrix

        g = self.grouping
        sim = load_similarity_matrix(g.similarity_file) if g.similarity_file else None
        return Grouping(g.strategy, g.seed if seed is None else seed, sim)


def _build(section_cls, raw: dict[str, Any], name: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(section_cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {unknown}")
    return section_cls(**raw)


def read_document(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def load_config(path: str | Path | None) -> AppConfig:
    if path is None:
        return AppConfig()
    data = read_document(path)
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    return AppConfig.from_mapping(data)
