"""Graph Context Encoder: masked graph reconstruction, n-shot molecule
generation and encoder weight transfer."""

from ._core import (
    Checkpoint,
    ConfigError,
    ContractError,
    DataError,
    GceError,
    LoadError,
    Molecule,
    ParseError,
    TransferError,
    canonical_key,
    canonical_smiles,
    evaluate,
    generate,
    is_valid,
    load_checkpoint,
    pretrain,
    reconstruct,
    run_cli,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "ContractError",
    "DataError",
    "GceError",
    "LoadError",
    "Molecule",
    "ParseError",
    "TransferError",
    "canonical_key",
    "canonical_smiles",
    "evaluate",
    "generate",
    "is_valid",
    "load_checkpoint",
    "pretrain",
    "reconstruct",
    "run_cli",
]
