"""A small configurable image-classification CNN.

Each stage is conv3x3 (pad 1) -> ReLU -> 2x2 max-pool, halving the spatial
size; a fully-connected head maps the flattened features to class logits.
Deliberately compact: at desk scale the interesting failure mode is a
classifier that overfits background noise, which the attention map is
meant to mitigate.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .serialize import read_checkpoint, write_checkpoint
from .tensor import Tensor, conv2d, flatten, linear, maxpool2x2, relu

__all__ = [
    "ClassifierModel",
    "classifier_forward",
    "predict",
    "accuracy",
    "save_classifier_checkpoint",
    "load_classifier_checkpoint",
]


class ClassifierModel:
    """Stage channel widths, head, and the parameters of both."""

    def __init__(self, in_channels: int, width: int, height: int,
                 num_classes: int, stages: Sequence[int] = (8, 16),
                 rng: np.random.Generator | None = None):
        stages = tuple(stages)
        if not stages:
            raise ConfigError("classifier needs at least one stage")
        if num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {num_classes}")
        factor = 2 ** len(stages)
        if width % factor or height % factor:
            raise ConfigError(
                f"spatial size {width}x{height} not divisible by 2^{len(stages)}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_channels = in_channels
        self.width = width
        self.height = height
        self.num_classes = num_classes
        self.stages = stages
        self.params: list[Tensor] = []
        cin = in_channels
        for cout in stages:
            fan_in = cin * 9
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(Tensor(
                rng.uniform(-bound, bound, size=(cout, cin, 3, 3)),
                requires_grad=True))
            self.params.append(Tensor(np.zeros(cout), requires_grad=True))
            cin = cout
        feat = stages[-1] * (width // factor) * (height // factor)
        bound = 1.0 / np.sqrt(feat)
        self.params.append(Tensor(
            rng.uniform(-bound, bound, size=(feat, num_classes)),
            requires_grad=True))
        self.params.append(Tensor(np.zeros(num_classes), requires_grad=True))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def config_header(self) -> dict[str, str]:
        return {
            "kind": "classifier",
            "in_channels": str(self.in_channels),
            "width": str(self.width),
            "height": str(self.height),
            "num_classes": str(self.num_classes),
            "stages": ",".join(str(s) for s in self.stages),
        }


def classifier_forward(model: ClassifierModel, weighted: Tensor) -> Tensor:
    """Logits (B, L) for a batch of (possibly attention-weighted) images."""
    if weighted.shape[1:] != (model.in_channels, model.width, model.height):
        raise ContractError(
            f"classifier built for {(model.in_channels, model.width, model.height)}"
            f" images, got {weighted.shape}")
    x = weighted
    for i in range(len(model.stages)):
        kernel, bias = model.params[2 * i], model.params[2 * i + 1]
        x = maxpool2x2(relu(conv2d(x, kernel, bias, stride=1, padding=1)))
    return linear(flatten(x), model.params[-2], model.params[-1])


def predict(logits: Tensor | np.ndarray) -> list[int]:
    """Per-row argmax; ties resolve to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return [int(i) for i in data.argmax(axis=1)]


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Percentage of matching entries: 100 * correct / total."""
    preds = np.asarray(predictions)
    truth = np.asarray(labels)
    if preds.shape != truth.shape:
        raise ContractError(
            f"{preds.size} predictions vs {truth.size} labels")
    if preds.size == 0:
        raise ContractError("accuracy of an empty prediction list")
    return 100.0 * float((preds == truth).mean())


def save_classifier_checkpoint(model: ClassifierModel, path: str | Path) -> None:
    write_checkpoint(path, model.config_header(), [p.data for p in model.params])


def load_classifier_checkpoint(path: str | Path) -> ClassifierModel:
    header, tensors = read_checkpoint(path)
    if header.get("kind") != "classifier":
        raise ConfigError(f"checkpoint {path} is not a classifier checkpoint")
    model = ClassifierModel(
        in_channels=int(header["in_channels"]),
        width=int(header["width"]),
        height=int(header["height"]),
        num_classes=int(header["num_classes"]),
        stages=tuple(int(s) for s in header["stages"].split(",")),
        rng=np.random.default_rng(0))
    if len(tensors) != len(model.params):
        raise ConfigError(
            f"checkpoint has {len(tensors)} tensors, model needs {len(model.params)}")
    for param, stored in zip(model.params, tensors):
        if param.shape != stored.shape:
            raise ConfigError(
                f"checkpoint tensor shape {stored.shape} != {param.shape}")
        param.data = stored
    return model
