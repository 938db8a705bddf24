"""Smart-contract vulnerability detection with adaptive feature perception.

A convolution bank scans the token sequence, keeps each kernel's strongest
windows plus a mean point, and a stack of multi-head attention blocks
classifies the resulting feature matrix.
"""

__version__ = "0.1.0"

from afpnet.fpm import ConfigError, FeatureMatrix, ModelConfig, fpm_forward
from afpnet.ingest import Corpus, CorpusError, LabeledContract, dedup_corpus, load_manifest, split_corpus
from afpnet.lexer import Vocabulary, build_vocab, encode, tokenize
from afpnet.model import AFPNet, load_checkpoint, save_checkpoint
from afpnet.rpam import Prediction, rpam_forward
from afpnet.train import TrainConfig, run_trials, train_model

__all__ = [
    "AFPNet", "ConfigError", "Corpus", "CorpusError", "FeatureMatrix", "LabeledContract",
    "ModelConfig", "Prediction", "TrainConfig", "Vocabulary", "build_vocab", "dedup_corpus",
    "encode", "fpm_forward", "load_checkpoint", "load_manifest", "rpam_forward", "run_trials",
    "save_checkpoint", "split_corpus", "tokenize", "train_model",
]
