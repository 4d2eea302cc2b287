"""Table-to-text generation with hierarchical table attention and two-pass decoding."""

from .model import TasatgConfig, TasatgModel
from .table import Schema, Table, serialize
from .text import Vocab, build_vocab, detokenize, tokenize

__version__ = "0.1.0"

__all__ = ["Schema", "Table", "TasatgConfig", "TasatgModel", "Vocab", "build_vocab",
           "detokenize", "serialize", "tokenize"]
