"""Relation extraction as constrained infilling over a relation-token trie."""
from .decoding import CandidateRelation, DecodeConfig, brute_force_decode, pgc_decode, score, select
from .errors import ConfigError, DataError, NumericError, RelinfillError
from .model import LogLinearModel, build_params, load_checkpoint, save_checkpoint
from .schema import RelationSchema, RelationTrie, build_trie, load_schema, verbalize
from .templating import FormattedSample, REInstance, render
from .training import LblsConfig, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CandidateRelation", "ConfigError", "DataError", "DecodeConfig", "FormattedSample",
    "LblsConfig", "LogLinearModel", "NumericError", "REInstance", "RelationSchema",
    "RelationTrie", "RelinfillError", "TrainConfig", "brute_force_decode", "build_params",
    "build_trie", "load_checkpoint", "load_schema", "pgc_decode", "render", "save_checkpoint",
    "score", "select", "train", "verbalize",
]
