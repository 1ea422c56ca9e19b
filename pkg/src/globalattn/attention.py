"""The dataset-wide attention map and the pixel classifier producing it.

Each spatial location is treated as one data point whose feature vector is
the stack of all image intensities at that location.  A small CNN scores
every location at once: the whole dataset is reshaped to a single
(1, N*C, W, H) input, and the network emits one (1, 1, W, H) weight map in
(0, 1) that is shared by every image.  Surrounding locations enter through
the hidden kernel; the last layer is 1x1 by default so each score depends
only on its own abstract features.

Three modes:

* ``pixel_cnn``   - the learned CNN map (hidden conv + ReLU stack, then a
                    final conv squashed by a sigmoid).
* ``l1_pixel_weights`` - a baseline: one raw multiplier per pixel,
                    initialized to 1, no squashing (may go negative).
* ``none``        - the identity map of all ones.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datasets import ImageBatch
from .errors import ConfigError, ContractError
from .serialize import read_checkpoint, write_checkpoint
from .tensor import (Tensor, concat_channels, conv2d, l1_mean, relu, sigmoid)

__all__ = [
    "MODES",
    "AttentionModel",
    "build_pixel_representation",
    "attention_forward",
    "attention_l1_penalty",
    "export_attention_map",
    "save_attention_checkpoint",
    "load_attention_checkpoint",
]

MODES = ("pixel_cnn", "l1_pixel_weights", "none")


def build_pixel_representation(batch: ImageBatch) -> Tensor:
    """Reshape the (N, C, W, H) dataset into one (1, N*C, W, H) input.

    Pure relabeling: element [0, n*C + c, x, y] equals images[n, c, x, y].
    """
    if batch.n < 1:
        raise ContractError("pixel representation needs a non-empty batch")
    n, c, w, h = batch.images.shape
    return Tensor(batch.images.reshape(1, n * c, w, h).copy())


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...],
                  fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class AttentionModel:
    """Pixel-classifier parameters plus architecture configuration.

    ``depth`` counts conv layers including the final one (minimum 2).  With
    ``dense_connections`` every hidden layer past the first, and the final
    layer, consume the channel concatenation of all earlier hidden outputs.
    """

    def __init__(self, mode: str, in_channels: int, width: int, height: int,
                 channels: int = 8, hidden_kernel: int = 3, depth: int = 2,
                 last_kernel: int = 1, dense_connections: bool = False,
                 rng: np.random.Generator | None = None):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if channels < 1:
            raise ConfigError(f"channels must be >= 1, got {channels}")
        if depth < 2:
            raise ConfigError(f"depth must be >= 2, got {depth}")
        for name, k in (("hidden_kernel", hidden_kernel),
                        ("last_kernel", last_kernel)):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be odd and >= 1, got {k}")
        self.mode = mode
        self.in_channels = in_channels
        self.width = width
        self.height = height
        self.channels = channels
        self.hidden_kernel = hidden_kernel
        self.depth = depth
        self.last_kernel = last_kernel
        self.dense_connections = dense_connections
        self.params: list[Tensor] = []
        if mode == "pixel_cnn":
            if rng is None:
                raise ConfigError("pixel_cnn mode needs an init rng")
            k = hidden_kernel
            cin = in_channels
            for layer in range(depth - 1):
                fan_in = cin * k * k
                kernel = Tensor(_uniform_init(rng, (channels, cin, k, k), fan_in),
                                requires_grad=True)
                bias = Tensor(np.zeros(channels), requires_grad=True)
                self.params.extend([kernel, bias])
                cin = channels * (layer + 1) if dense_connections else channels
            kl = last_kernel
            fan_in = cin * kl * kl
            kernel = Tensor(_uniform_init(rng, (1, cin, kl, kl), fan_in),
                            requires_grad=True)
            bias = Tensor(np.zeros(1), requires_grad=True)
            self.params.extend([kernel, bias])
        elif mode == "l1_pixel_weights":
            self.params = [Tensor(np.ones((1, 1, width, height)),
                                  requires_grad=True)]
        # mode "none" keeps no parameters

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params)

    def config_header(self) -> dict[str, str]:
        return {
            "kind": "attention",
            "mode": self.mode,
            "in_channels": str(self.in_channels),
            "width": str(self.width),
            "height": str(self.height),
            "channels": str(self.channels),
            "hidden_kernel": str(self.hidden_kernel),
            "depth": str(self.depth),
            "last_kernel": str(self.last_kernel),
            "dense_connections": str(int(self.dense_connections)),
        }


def attention_forward(model: AttentionModel, p: Tensor) -> Tensor:
    """Evaluate the global weight map, shape (1, 1, W, H).

    In ``pixel_cnn`` mode values are strictly inside (0, 1); the
    ``l1_pixel_weights`` baseline returns its raw multipliers; ``none``
    returns all ones.
    """
    expected = (1, model.in_channels, model.width, model.height)
    if model.mode == "pixel_cnn" and p.shape != expected:
        raise ContractError(
            f"model built for input {expected}, got {p.shape}")
    if model.mode == "none":
        return Tensor(np.ones((1, 1, model.width, model.height)))
    if model.mode == "l1_pixel_weights":
        return model.params[0]
    pad = (model.hidden_kernel - 1) // 2
    hidden: list[Tensor] = []
    x = p
    for layer in range(model.depth - 1):
        kernel, bias = model.params[2 * layer], model.params[2 * layer + 1]
        x = relu(conv2d(x, kernel, bias, stride=1, padding=pad))
        hidden.append(x)
        if model.dense_connections and layer + 1 < model.depth - 1:
            x = concat_channels(hidden)
    last_in = concat_channels(hidden) if model.dense_connections else hidden[-1]
    kernel, bias = model.params[-2], model.params[-1]
    out = conv2d(last_in, kernel, bias, stride=1,
                 padding=(model.last_kernel - 1) // 2)
    if out.shape[2:] != (model.width, model.height):
        raise ConfigError(
            f"configuration does not preserve spatial size: {out.shape}")
    return sigmoid(out)


def attention_l1_penalty(model: AttentionModel, weight_map: Tensor) -> Tensor:
    """Mean absolute map value; zero in ``none`` mode."""
    if model.mode == "none":
        return Tensor(np.asarray(0.0))
    return l1_mean(weight_map)


def export_attention_map(weight_map: Tensor | np.ndarray,
                         base_path: str | Path) -> list[Path]:
    """Write ``<base>.csv`` (raw values) and ``<base>.pgm`` (visualization).

    The CSV holds one row per y, columns ordered by x.  The PGM is 8-bit
    binary grayscale of the min-max normalized values, 255 at the maximum
    (largest values render darkest in conventional viewers of importance
    maps; raw values survive only in the CSV).  A constant map normalizes
    to all zeros instead of erroring.
    """
    data = weight_map.data if isinstance(weight_map, Tensor) else weight_map
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 4:
        if data.shape[:2] != (1, 1):
            raise ContractError(f"expected a (1, 1, W, H) map, got {data.shape}")
        data = data[0, 0]
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ContractError(f"expected a W x H map, got shape {data.shape}")
    w, h = data.shape
    base = Path(base_path)
    csv_path = base.with_name(base.name + ".csv")
    pgm_path = base.with_name(base.name + ".pgm")

    rows = [",".join(repr(float(data[x, y])) for x in range(w))
            for y in range(h)]
    csv_path.write_text("\n".join(rows) + "\n")

    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        norm = (data - lo) / (hi - lo)
    else:
        norm = np.zeros_like(data)
    pixels = np.rint(norm * 255.0).astype(np.uint8)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + pixels.T.tobytes())
    return [csv_path, pgm_path]


def save_attention_checkpoint(model: AttentionModel, path: str | Path) -> None:
    write_checkpoint(path, model.config_header(), [p.data for p in model.params])


def load_attention_checkpoint(path: str | Path) -> AttentionModel:
    header, tensors = read_checkpoint(path)
    if header.get("kind") != "attention":
        raise ConfigError(f"checkpoint {path} is not an attention checkpoint")
    mode = header["mode"]
    model = AttentionModel(
        mode=mode,
        in_channels=int(header["in_channels"]),
        width=int(header["width"]),
        height=int(header["height"]),
        channels=int(header["channels"]),
        hidden_kernel=int(header["hidden_kernel"]),
        depth=int(header["depth"]),
        last_kernel=int(header["last_kernel"]),
        dense_connections=bool(int(header["dense_connections"])),
        rng=np.random.default_rng(0) if mode == "pixel_cnn" else None)
    if len(tensors) != len(model.params):
        raise ConfigError(
            f"checkpoint has {len(tensors)} tensors, model needs {len(model.params)}")
    for param, stored in zip(model.params, tensors):
        if param.shape != stored.shape:
            raise ConfigError(
                f"checkpoint tensor shape {stored.shape} != {param.shape}")
        param.data = stored
    return model
