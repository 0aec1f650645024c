"""
Encoders and their optimizer.

Three encoder families, all torch modules in float64:
    MLPEncoder       f(z) = W2 relu(W1 z + b1)
    LinearEncoder    f(z) = W z, optionally with ||W||_op <= bound
    AugLinearEncoder f(z) = ((W z)^T, w z^T)^T on one-hot z, with
                     max column norm of W <= bound and |w| <= sqrt(S) bound

Gradients come from torch autograd (reverse mode); Adam is torch.optim.Adam
wrapped in AdamState so the step counter and moments are inspectable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
import torch
from torch import nn

from sufflab.utils.errors import ArgumentError

logger = logging.getLogger(__name__)

DTYPE = torch.float64


def _uniform(shape, fan_in: int, generator: Optional[torch.Generator]) -> nn.Parameter:
    bound = 1.0 / np.sqrt(fan_in)
    data = torch.rand(*shape, generator=generator, dtype=DTYPE) * (2 * bound) - bound
    return nn.Parameter(data)


def as_tensor(z) -> torch.Tensor:
    if isinstance(z, torch.Tensor):
        return z.to(DTYPE)
    return torch.as_tensor(np.asarray(z, dtype=float), dtype=DTYPE)


class _EncoderBase(nn.Module):
    in_dim: int
    out_dim: int
    bound: Optional[float] = None

    def _check_input(self, z: torch.Tensor):
        if z.shape[-1] != self.in_dim:
            raise ArgumentError(
                f"{type(self).__name__} expects inputs of dimension {self.in_dim}, got {z.shape[-1]}"
            )

    def config(self) -> dict:
        raise NotImplementedError


class MLPEncoder(_EncoderBase):
    """Two-layer ReLU network R^d -> R^p (no second-layer bias)"""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.W1 = _uniform((hidden, in_dim), in_dim, generator)
        self.b1 = nn.Parameter(torch.zeros(hidden, dtype=DTYPE))
        self.W2 = _uniform((out_dim, hidden), hidden, generator)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        self._check_input(z)
        return torch.relu(z @ self.W1.T + self.b1) @ self.W2.T

    def config(self) -> dict:
        return {"in_dim": self.in_dim, "hidden": self.hidden, "out_dim": self.out_dim}


class LinearEncoder(_EncoderBase):
    """f(z) = W z with an optional operator-norm bound"""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        bound: Optional[float] = None,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.in_dim, self.out_dim, self.bound = in_dim, out_dim, bound
        self.W = _uniform((out_dim, in_dim), in_dim, generator)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        self._check_input(z)
        return z @ self.W.T

    def config(self) -> dict:
        return {"in_dim": self.in_dim, "out_dim": self.out_dim, "bound": self.bound}


class AugLinearEncoder(_EncoderBase):
    """
    One-hot encoder over [S] with output ((W z)^T, w z^T)^T of dimension M + S.

    The downstream representation is only the W part (see `representation`).
    """

    def __init__(
        self,
        vocab: int,
        topics: int,
        bound: Optional[float] = None,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.vocab, self.topics, self.bound = vocab, topics, bound
        self.in_dim, self.out_dim = vocab, topics + vocab
        self.W = _uniform((topics, vocab), vocab, generator)
        self.w = nn.Parameter(torch.rand((), generator=generator, dtype=DTYPE))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        self._check_input(z)
        return torch.cat([z @ self.W.T, self.w * z], dim=-1)

    def representation(self, z: torch.Tensor) -> torch.Tensor:
        self._check_input(z)
        return z @ self.W.T

    def config(self) -> dict:
        return {"vocab": self.vocab, "topics": self.topics, "bound": self.bound}


Encoder = Union[MLPEncoder, LinearEncoder, AugLinearEncoder]
ENCODER_TYPES = {cls.__name__: cls for cls in (MLPEncoder, LinearEncoder, AugLinearEncoder)}


def forward(encoder: Encoder, z) -> torch.Tensor:
    """Feature vector(s) of z; keeps the autograd graph"""
    return encoder(as_tensor(z))


def encode(encoder: Encoder, z, representation: bool = False) -> np.ndarray:
    """Features as a numpy array (no graph); `representation` selects W z for AugLinearEncoder"""
    with torch.no_grad():
        zt = as_tensor(z)
        if representation and isinstance(encoder, AugLinearEncoder):
            return encoder.representation(zt).numpy()
        return encoder(zt).numpy()


def parameters(encoder: Encoder) -> Dict[str, torch.nn.Parameter]:
    return dict(encoder.named_parameters())


def backward(encoder: Encoder, z, upstream) -> Dict[str, torch.Tensor]:
    """Vector-Jacobian product of the features at z with the cotangent `upstream`"""
    out = forward(encoder, z)
    upstream = as_tensor(upstream)
    if upstream.shape != out.shape:
        raise ArgumentError(f"upstream shape {tuple(upstream.shape)} != feature shape {tuple(out.shape)}")
    params = parameters(encoder)
    grads = torch.autograd.grad(out, list(params.values()), grad_outputs=upstream, allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }


@dataclass
class AdamState:
    """torch Adam plus an explicit step counter"""

    optimizer: torch.optim.Adam
    step: int = 0

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    @property
    def betas(self):
        return self.optimizer.param_groups[0]["betas"]

    @property
    def eps(self) -> float:
        return self.optimizer.param_groups[0]["eps"]

    def moments(self, param: torch.nn.Parameter):
        """(first moment, second moment) accumulators for a parameter"""
        state = self.optimizer.state.get(param, {})
        return state.get("exp_avg"), state.get("exp_avg_sq")


def make_adam(encoder: nn.Module, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    return AdamState(torch.optim.Adam(encoder.parameters(), lr=lr, betas=betas, eps=eps))


def adam_step(state: AdamState, encoder: nn.Module, grads: Union[Mapping[str, torch.Tensor], list]) -> nn.Module:
    """Apply one bias-corrected Adam update with the given gradients"""
    params = dict(encoder.named_parameters())
    if not isinstance(grads, Mapping):
        grads = dict(zip(params.keys(), grads))
    if set(grads) != set(params):
        raise ArgumentError(f"gradients for {sorted(grads)} do not match parameters {sorted(params)}")
    for name, p in params.items():
        g = as_tensor(grads[name])
        if g.shape != p.shape:
            raise ArgumentError(f"gradient for '{name}' has shape {tuple(g.shape)}, expected {tuple(p.shape)}")
        p.grad = g.detach().clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return encoder


@torch.no_grad()
def project_constraints(encoder: nn.Module) -> nn.Module:
    """
    Project onto the encoder's constraint set in place.

    LinearEncoder: singular values clipped to the bound.
    AugLinearEncoder: each word embedding (column of W) clipped to 2-norm <= bound,
    and |w| <= sqrt(S) bound.
    """
    bound = getattr(encoder, "bound", None)
    if bound is None:
        return encoder
    if isinstance(encoder, LinearEncoder):
        u, s, vh = torch.linalg.svd(encoder.W, full_matrices=False)
        if s.max() > bound:
            encoder.W.copy_(u @ torch.diag(s.clamp(max=bound)) @ vh)
    elif isinstance(encoder, AugLinearEncoder):
        norms = encoder.W.norm(dim=0)
        scale = torch.where(norms > bound, bound / norms, torch.ones_like(norms))
        encoder.W.mul_(scale)
        limit = np.sqrt(encoder.vocab) * bound
        encoder.w.clamp_(-limit, limit)
    return encoder


def clone_encoder(encoder: Encoder) -> Encoder:
    fresh = build_encoder(type(encoder).__name__, encoder.config())
    fresh.load_state_dict(encoder.state_dict())
    return fresh


def build_encoder(kind: str, config: Mapping, generator: Optional[torch.Generator] = None) -> Encoder:
    if kind not in ENCODER_TYPES:
        raise ArgumentError(f"Unknown encoder type '{kind}'")
    return ENCODER_TYPES[kind](**dict(config), generator=generator)


def encoder_to_dict(encoder: Encoder) -> dict:
    """JSON checkpoint payload: type, shapes and flat row-major data per parameter"""
    state = {k: v.detach().cpu().numpy() for k, v in encoder.state_dict().items()}
    return {
        "type": type(encoder).__name__,
        "config": encoder.config(),
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "data": {k: v.ravel().tolist() for k, v in state.items()},
    }


def encoder_from_dict(payload: Mapping) -> Encoder:
    encoder = build_encoder(payload["type"], payload["config"])
    state = {
        k: torch.tensor(np.asarray(v, dtype=float).reshape(payload["shapes"][k]), dtype=DTYPE)
        for k, v in payload["data"].items()
    }
    encoder.load_state_dict(state)
    return encoder


def save_checkpoint(path, encoder: Encoder, heads: Optional[Mapping[str, dict]] = None) -> Path:
    """Write an encoder (and optional serialized heads) as JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"encoder": encoder_to_dict(encoder), "heads": dict(heads or {})}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
    logger.info("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path):
    """Returns (encoder, heads dict)"""
    with open(path, "r") as f:
        payload = json.load(f)
    return encoder_from_dict(payload["encoder"]), payload.get("heads", {})
