"""Checkpoint registry: the source models the exporter knows how to build.

The bundled checkpoint is a small seeded CNN whose weights are a pure
function of the registry entry, so exports are reproducible offline. Larger
pretrained checkpoints would slot in as further entries; none are bundled
because their weight files cannot be fetched in an offline environment, and
asking for them raises ExportError.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ExportError


@dataclass(frozen=True)
class CheckpointSpec:
    """Identity and preprocessing contract of one exportable checkpoint."""

    key: str
    identifier: str
    dim: int
    input_size: int
    channel_order: str
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    seed: int


_REGISTRY = {
    "tiny-cnn": CheckpointSpec(
        key="tiny-cnn",
        identifier="tiny-cnn-v1",
        dim=64,
        input_size=224,
        channel_order="RGB",
        mean=(0.48145466, 0.4578275, 0.40821073),
        std=(0.26862954, 0.26130258, 0.27577711),
        seed=7,
    ),
}


def available_checkpoints() -> list[str]:
    return sorted(_REGISTRY)


def get_checkpoint(key: str) -> CheckpointSpec:
    try:
        return _REGISTRY[key]
    except KeyError:
        raise ExportError(
            f"checkpoint {key!r} unavailable; bundled checkpoints: "
            + ", ".join(available_checkpoints())
        ) from None


def build_weights(spec: CheckpointSpec) -> dict[str, np.ndarray]:
    """Deterministic float32 weights for the encoder architecture."""
    rng = np.random.default_rng(spec.seed)

    def draw(shape: tuple[int, ...], scale: float) -> np.ndarray:
        return (scale * rng.standard_normal(shape)).astype(np.float32)

    return {
        "conv1.weight": draw((8, 3, 3, 3), 0.2),
        "conv1.bias": draw((8,), 0.1),
        "conv2.weight": draw((16, 8, 3, 3), 0.15),
        "conv2.bias": draw((16,), 0.1),
        "fc.weight": draw((spec.dim, 16), 0.5),
        "fc.bias": draw((spec.dim,), 0.1),
    }


class TinyImageEncoder(torch.nn.Module):
    """Source-model forward pass; the export must reproduce it."""

    def __init__(self, weights: dict[str, np.ndarray]):
        super().__init__()
        dim = weights["fc.weight"].shape[0]
        self.conv1 = torch.nn.Conv2d(3, 8, 3, stride=2, padding=1)
        self.conv2 = torch.nn.Conv2d(8, 16, 3, stride=2, padding=1)
        self.fc = torch.nn.Linear(16, dim)
        with torch.no_grad():
            for name, param in self.named_parameters():
                param.copy_(torch.from_numpy(weights[name]))
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = x.mean(dim=(2, 3))
        return self.fc(x)


def source_model(spec: CheckpointSpec) -> TinyImageEncoder:
    return TinyImageEncoder(build_weights(spec))
