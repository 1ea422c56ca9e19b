"""End-to-end gradient check of the full training cost.

Builds a tiny synthetic instance, wires the pixel classifier, the broadcast
multiply, the image classifier and the L1 penalty into one cost, and
compares every parameter gradient produced by the tape against central
finite differences.  This is the user-facing oracle behind the
``gradcheck`` CLI command and the architecture-variant checks.

Central differences are only a valid oracle where the cost is smooth, so
the evaluation point is conditioned first: hidden biases are shifted until
no ReLU input sits inside the perturbation window, and instances whose
max-pool windows hold a near-tie are redrawn (deterministically) until the
margins clear.  The backward rules under test are never touched by this.
"""

from __future__ import annotations

import numpy as np

from .attention import AttentionModel, build_pixel_representation
from .classifier import ClassifierModel
from .errors import ConfigError
from .gradcheck import GradCheckResult, finite_diff_grad, grad_discrepancy
from .seeding import ATTENTION_INIT, CLASSIFIER_INIT, mix_seed, rng_for, stream_tag
from .synthetic import SyntheticSpec, generate_synthetic
from .tensor import (GradientTape, Tensor, backward, concat_channels, conv2d,
                     maxpool2x2, relu)
from .training import compute_cost

__all__ = ["full_pipeline_gradcheck"]

MAX_SIZE = 16
MAX_IMAGES = 4
_REDRAW = stream_tag("gradcheck-redraw")
_MAX_REDRAWS = 500


def _clearing_shift(preacts: np.ndarray, margin: float) -> float | None:
    """Bias shift placing every preactivation at least ``margin`` from zero."""
    vals = np.sort(preacts.ravel())
    for step in range(200):
        for sign in ((1.0,) if step == 0 else (1.0, -1.0)):
            s = sign * step * 2.5 * margin
            lo = np.searchsorted(vals, -s - margin)
            hi = np.searchsorted(vals, -s + margin)
            if lo == hi:
                return s
    return None


def _fix_conv_relu(x: Tensor, kernel: Tensor, bias: Tensor, padding: int,
                   h: float) -> Tensor | None:
    """Shift ``bias`` per channel to clear ReLU margins; return activations."""
    margin = 2.5 * h * (1.0 + float(np.abs(x.data).max()))
    pre = conv2d(x, kernel, bias, stride=1, padding=padding)
    for ch in range(pre.shape[1]):
        shift = _clearing_shift(pre.data[:, ch], margin)
        if shift is None:
            return None
        if shift:
            bias.data[ch] += shift
    return relu(conv2d(x, kernel, bias, stride=1, padding=padding))


def _pool_gaps_clear(activations: Tensor, margin: float) -> bool:
    """True when every pool window's top two entries are separated by margin.

    A window can flip under a single-coordinate perturbation only when its
    gap is below about 2h times the largest input tap, since the two
    competitors shift by at most h times their own taps.
    """
    b, c, w, hh = activations.shape
    windows = (activations.data.reshape(b, c, w // 2, 2, hh // 2, 2)
               .transpose(0, 1, 2, 4, 3, 5).reshape(b, c, -1, 4))
    top2 = np.sort(windows, axis=-1)[..., -2:]
    gap = top2[..., 1] - top2[..., 0]
    # ties among clamped zeros are harmless: those paths carry no gradient
    contested = top2[..., 0] > 0.0
    return bool((gap[contested] >= margin).all()) if contested.any() else True


def _condition_instance(attention: AttentionModel, classifier: ClassifierModel,
                        p: Tensor, images: np.ndarray, h: float) -> bool:
    """Make the evaluation point locally smooth; False if pools stay tied."""
    x = p
    hidden: list[Tensor] = []
    pad = (attention.hidden_kernel - 1) // 2
    for layer in range(attention.depth - 1):
        kernel, bias = (attention.params[2 * layer],
                        attention.params[2 * layer + 1])
        act = _fix_conv_relu(x, kernel, bias, pad, h)
        if act is None:
            return False
        hidden.append(act)
        x = (concat_channels(hidden)
             if attention.dense_connections and layer + 1 < attention.depth - 1
             else act)

    from .attention import attention_forward
    weighted = Tensor(images * attention_forward(attention, p).data)
    x = weighted
    for i in range(len(classifier.stages)):
        kernel, bias = classifier.params[2 * i], classifier.params[2 * i + 1]
        margin = 2.5 * h * (1.0 + float(np.abs(x.data).max()))
        act = _fix_conv_relu(x, kernel, bias, 1, h)
        if act is None or not _pool_gaps_clear(act, margin):
            return False
        x = maxpool2x2(act)
    return True


def full_pipeline_gradcheck(width: int = 8, height: int = 8, images: int = 2,
                            seed: int = 0, channels: int = 4,
                            hidden_kernel: int = 3, depth: int = 2,
                            last_kernel: int = 1,
                            dense_connections: bool = False,
                            l1_coeff: float = 0.05, h: float = 1e-3,
                            tolerance: float = 1e-3,
                            corrupt: bool = False) -> GradCheckResult:
    """Check d(cost)/d(param) for every parameter of both networks.

    Finite differences re-run the whole composite per element, so the
    instance must stay tiny.  ``corrupt`` deliberately damages one analytic
    gradient, as a negative control proving the check can fail.
    """
    if width > MAX_SIZE or height > MAX_SIZE:
        raise ConfigError(
            f"gradcheck instances are capped at {MAX_SIZE}x{MAX_SIZE}, "
            f"got {width}x{height}")
    if images > MAX_IMAGES:
        raise ConfigError(
            f"gradcheck instances are capped at {MAX_IMAGES} images, got {images}")
    if width < 4 or height < 4 or images < 1:
        raise ConfigError("gradcheck needs at least 4x4 images and 1 image")

    region = (1, 1, max(2, width // 2), max(2, height // 2))
    spec = SyntheticSpec(n=images, c=1, w=width, h=height,
                         relevant_region=region, num_classes=3,
                         signal_strength=1.0, noise_std=1.0, seed=seed)
    batch, _ = generate_synthetic(spec)
    p = build_pixel_representation(batch)
    stages = (4, 8) if width % 4 == 0 and height % 4 == 0 else (4,)

    # Larger instances hold more pool windows, so near-ties get ever more
    # likely at a fixed step; shrinking h shrinks the flip window while fp64
    # central differences stay far more accurate than the tolerance.
    attention = classifier = None
    h_used = None
    for h_try in (h, h * 0.1, h * 0.01):
        for attempt in range(_MAX_REDRAWS):
            sub = mix_seed(seed, _REDRAW + attempt)
            attention = AttentionModel(
                "pixel_cnn", in_channels=batch.n * batch.c, width=width,
                height=height, channels=channels, hidden_kernel=hidden_kernel,
                depth=depth, last_kernel=last_kernel,
                dense_connections=dense_connections,
                rng=rng_for(sub, ATTENTION_INIT))
            classifier = ClassifierModel(
                in_channels=1, width=width, height=height, num_classes=3,
                stages=stages, rng=rng_for(sub, CLASSIFIER_INIT))
            if _condition_instance(attention, classifier, p, batch.images,
                                   h_try):
                h_used = h_try
                break
        if h_used is not None:
            break
    if h_used is None:
        raise ConfigError(
            "could not draw a locally smooth check instance; adjust the seed")
    h = h_used

    images_t = Tensor(batch.images)

    def cost_value(_=None) -> float:
        return compute_cost(images_t, batch.labels, attention, classifier,
                            p, l1_coeff).item()

    with GradientTape() as tape:
        cost = compute_cost(images_t, batch.labels, attention, classifier,
                            p, l1_coeff)
    backward(cost, tape)

    named = [(f"attention.p{i}", t) for i, t in enumerate(attention.params)]
    named += [(f"classifier.p{i}", t) for i, t in enumerate(classifier.params)]
    analytic = {name: t.grad.copy() for name, t in named}
    if corrupt:
        bad = analytic["attention.p0"]
        bad += 0.01 * (np.abs(bad) + 1.0)

    errors: dict[str, float] = {}
    for name, param in named:
        numeric = finite_diff_grad(cost_value, param, h)
        errors[name] = grad_discrepancy(analytic[name], numeric,
                                        rel_tol=tolerance)
    return GradCheckResult(errors, tolerance, h=h)
