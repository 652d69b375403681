"""Python bindings for the PowerSkel C++ core."""

from ._core import (
    DecodeError,
    Error,
    Model,
    build_dictionary,
    decode_frame,
    encode_frame,
    generate,
    pck,
    read_split,
    reconstruct,
    run_cli,
    saf_filter,
    saf_gradient,
    sinkhorn,
    sparse_representation,
)

__all__ = [
    "DecodeError",
    "Error",
    "Model",
    "build_dictionary",
    "decode_frame",
    "encode_frame",
    "generate",
    "pck",
    "read_split",
    "reconstruct",
    "run_cli",
    "saf_filter",
    "saf_gradient",
    "sinkhorn",
    "sparse_representation",
]
