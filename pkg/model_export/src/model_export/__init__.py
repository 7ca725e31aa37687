"""Export tool: ONNX image-encoder export and prompt-embedding files."""

from .checkpoints import CheckpointSpec, available_checkpoints, get_checkpoint
from .errors import ExportError
from .export import (
    FIDELITY_TOL,
    PROMPT_TEMPLATE,
    ExportResult,
    export_fidelity,
    export_image_encoder,
    export_prompt_embeddings,
    prompt_vectors,
)

__all__ = [
    "CheckpointSpec",
    "ExportError",
    "ExportResult",
    "FIDELITY_TOL",
    "PROMPT_TEMPLATE",
    "available_checkpoints",
    "export_fidelity",
    "export_image_encoder",
    "export_prompt_embeddings",
    "get_checkpoint",
    "prompt_vectors",
]
