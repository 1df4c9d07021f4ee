"""Offline featurizer: IE datasets -> the engine's frozen-feature files."""

from .datasets import Candidate, DatasetError, read_dataset
from .encoder import EncoderError, FrozenEncoder, candidate_vectors, load_encoder
from .extract import ExtractionJob, run_extraction
from .featfile import write_feature_file

__all__ = [
    "Candidate",
    "DatasetError",
    "EncoderError",
    "ExtractionJob",
    "FrozenEncoder",
    "candidate_vectors",
    "load_encoder",
    "read_dataset",
    "run_extraction",
    "write_feature_file",
]
