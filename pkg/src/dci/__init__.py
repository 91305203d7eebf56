"""Divide-and-Conquer Inference for large-label-space classification."""

from .backends import (
    BackendError,
    BackendResult,
    DilutionOracle,
    DilutionOracleParams,
    HttpBackend,
    HttpBackendConfig,
    Query,
)
from .engine import EngineConfig, RunTrace, dci_classify, flat_classify
from .label_space import Grouping, LabelSet, Partition, SimilarityMatrix
from .prompting import Invalid, Match, NoneAnswer, ParsePolicy, PromptTemplate

__version__ = "0.1.0"
