"""Lossless random-access compression that also yields weighted training samples."""

from .bitcodec import (
    BitMatrix,
    ColumnSchema,
    EntropyProfile,
    bit_entropy,
    decode_tabular,
    encode_tabular,
    infer_schema,
    read_csv,
    write_csv,
)
from .container import ContainerReader, from_bytes, load, save, to_bytes
from .estimators import CondensedEstimator, EntropyCondenser, LinearGDRegressor, LogisticGDClassifier
from .exceptions import EGDError
from .gede import (
    CompressedDataset,
    CondensedSet,
    SearchConfig,
    compress,
    compressed_size,
    decompress,
    get_condensed,
    random_access,
)
from .imgpipe import ClasswiseArchive, SampleSpec, compress_classwise, sample_epoch
from .mltrain import TrainConfig, TrainReport, closed_form_full, closed_form_weighted, train, train_logistic

__version__ = "0.1.0"

__all__ = [
    "BitMatrix", "ClasswiseArchive", "ColumnSchema", "CompressedDataset", "CondensedEstimator", "CondensedSet",
    "ContainerReader", "EGDError", "EntropyCondenser", "EntropyProfile", "LinearGDRegressor",
    "LogisticGDClassifier", "SampleSpec", "SearchConfig", "TrainConfig", "TrainReport", "bit_entropy",
    "closed_form_full", "closed_form_weighted", "compress", "compress_classwise", "compressed_size",
    "decode_tabular", "decompress", "encode_tabular", "from_bytes", "get_condensed", "infer_schema", "load",
    "random_access", "read_csv", "sample_epoch", "save", "to_bytes", "train", "train_logistic", "write_csv",
]
