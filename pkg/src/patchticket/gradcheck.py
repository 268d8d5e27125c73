"""Central finite-difference verification of analytic gradients."""

import math

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, NumericalError
from .models import forward_subset


def _loss(model, batch, targets, mask):
    if mask is None:
        logits = model(batch)
    else:
        logits = forward_subset(model, batch, mask)
    return F.cross_entropy(logits, targets)


def finite_diff_check(model, batch, targets, mask=None, samples_per_tensor=4,
                      eps=1e-5, seed=0):
    """Max relative error between autograd and central differences.

    Requires a tiny double-precision model; samples a few coordinates of every
    parameter tensor rather than sweeping all of them.
    """
    if next(model.parameters()).dtype != torch.float64:
        raise ConfigurationError("finite_diff_check requires a double-precision model")
    if model.config.depth > 2 or model.config.embed_dim > 16:
        raise ConfigurationError("finite_diff_check is meant for tiny models only")
    batch = batch.double()

    loss = _loss(model, batch, targets, mask)
    if not torch.isfinite(loss):
        raise NumericalError("non-finite loss")
    model.zero_grad()
    loss.backward()

    rng = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _, param in sorted(model.named_parameters()):
        grad = param.grad
        flat = param.data.view(-1)
        n = flat.numel()
        picks = torch.randperm(n, generator=rng)[: min(samples_per_tensor, n)]
        for i in picks.tolist():
            orig = flat[i].item()
            flat[i] = orig + eps
            with torch.no_grad():
                up = _loss(model, batch, targets, mask).item()
            flat[i] = orig - eps
            with torch.no_grad():
                down = _loss(model, batch, targets, mask).item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grad.view(-1)[i].item() if grad is not None else 0.0
            if not (math.isfinite(numeric) and math.isfinite(analytic)):
                raise NumericalError("non-finite gradient sample")
            denom = max(abs(numeric), abs(analytic))
            if denom < 1e-8:
                continue
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
