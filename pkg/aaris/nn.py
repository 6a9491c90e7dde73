"""
Small float64 MLPs, Gaussian policy heads and the checkpoint blob format.

Networks are plain ``torch.nn.Module`` objects; gradients come from torch
autograd. Parameters are initialized from an explicit ``torch.Generator``
so that two agents built with the same seed are bit-identical.
"""

import io
import math
import struct
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.distributions import Normal

from .errors import CheckpointError, InvalidArgumentError, InvalidStateError

DTYPE = torch.float64
LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
TANH_EPS = 1e-6

MLP_MAGIC = b"AARN"
MLP_VERSION = 1


def param_count(layer_dims: Sequence[int]) -> int:
    """sum_l (h_l*h_{l+1} + h_{l+1}): weights plus biases."""
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


class Mlp(nn.Module):
    """tanh hidden layers, linear output (or tanh output with ``squash_output``)."""

    def __init__(self, layer_dims: Sequence[int], generator: Optional[torch.Generator] = None,
                 squash_output: bool = False):
        super().__init__()
        if len(layer_dims) < 2 or any(h < 1 for h in layer_dims):
            raise InvalidArgumentError(f"layer_dims needs >= 2 positive entries, got {list(layer_dims)}")
        self.layer_dims = [int(h) for h in layer_dims]
        self.squash_output = squash_output
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))
        self._recorded: Optional[torch.Tensor] = None
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.uniform_(-bound, bound, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.layer_dims[0]:
            raise InvalidArgumentError(f"input has {x.shape[-1]} features, network expects {self.layer_dims[0]}")
        for layer in self.layers[:-1]:
            x = torch.tanh(layer(x))
        x = self.layers[-1](x)
        return torch.tanh(x) if self.squash_output else x

    def param_count(self) -> int:
        return param_count(self.layer_dims)


def forward(mlp: Mlp, x) -> torch.Tensor:
    """Run the network and keep the graph for a later :func:`backward`."""
    out = mlp(torch.as_tensor(x, dtype=DTYPE))
    mlp._recorded = out
    return out


def backward(mlp: Mlp, grad_output) -> list[torch.Tensor]:
    """Parameter gradients of <grad_output, output> for the last recorded forward."""
    out = mlp._recorded
    if out is None:
        raise InvalidStateError("backward() without a recorded forward pass")
    mlp._recorded = None
    grad_output = torch.as_tensor(grad_output, dtype=DTYPE)
    if grad_output.shape != out.shape:
        raise InvalidArgumentError(f"upstream gradient shape {tuple(grad_output.shape)} != output {tuple(out.shape)}")
    params = list(mlp.parameters())
    grads = torch.autograd.grad(out, params, grad_outputs=grad_output, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


def make_optimizer(params: Iterable[torch.Tensor], lr: float, kind: str = "adam") -> torch.optim.Optimizer:
    if kind == "adam":
        return torch.optim.Adam(params, lr=lr, betas=(0.9, 0.999), eps=1e-8)
    if kind == "sgd":
        return torch.optim.SGD(params, lr=lr)
    raise InvalidArgumentError(f"unknown optimizer {kind!r}")


def adam_step(opt: torch.optim.Optimizer, params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor]) -> None:
    """Apply externally computed gradients through ``opt``."""
    if len(params) != len(grads):
        raise InvalidArgumentError(f"{len(params)} params but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise InvalidArgumentError(f"gradient shape {tuple(g.shape)} != parameter {tuple(p.shape)}")
        p.grad = g.detach().clone()
    opt.step()


class GaussianHead(nn.Module):
    """Shared tanh trunk with separate mean and log-std output layers."""

    def __init__(self, in_dim: int, out_dim: int, hidden: Sequence[int], generator: Optional[torch.Generator] = None):
        super().__init__()
        if not hidden:
            raise InvalidArgumentError("GaussianHead needs at least one hidden layer")
        self.trunk = Mlp([in_dim, *hidden], generator=generator, squash_output=True)
        self.mean = Mlp([hidden[-1], out_dim], generator=generator)
        self.log_std = Mlp([hidden[-1], out_dim], generator=generator)

    def forward(self, state: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(state)
        return self.mean(h), torch.clamp(self.log_std(h), LOG_STD_MIN, LOG_STD_MAX)

    def mlps(self) -> list[Mlp]:
        return [self.trunk, self.mean, self.log_std]


def sample_reparameterized(mean: torch.Tensor, log_std: torch.Tensor, generator: Optional[torch.Generator] = None,
                           tanh_correction: bool = True, noise: Optional[torch.Tensor] = None):
    """
    a = tanh(mu + eps*sigma) with eps ~ N(0, I).

    Returns ``(action, log_prob, pre_squash)``; log_prob is summed over the last axis.
    """
    std = torch.exp(log_std)
    if noise is None:
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    z = mean + noise * std
    action = torch.tanh(z)
    log_prob = Normal(mean, std).log_prob(z)
    if tanh_correction:
        log_prob = log_prob - torch.log(1.0 - action.pow(2) + TANH_EPS)
    return action, log_prob.sum(dim=-1), z


@torch.no_grad()
def soft_update(target: nn.Module, online: nn.Module, tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1], got {tau}")
    for t, o in zip(target.parameters(), online.parameters()):
        if t.shape != o.shape:
            raise InvalidArgumentError(f"target shape {tuple(t.shape)} != online {tuple(o.shape)}")
        t.mul_(1.0 - tau).add_(o, alpha=tau)


@torch.no_grad()
def copy_params(dst: nn.Module, src: nn.Module) -> None:
    for d, s in zip(dst.parameters(), src.parameters()):
        d.copy_(s)


def flat_params(modules: Iterable[nn.Module]) -> np.ndarray:
    return np.concatenate([p.detach().numpy().ravel() for m in modules for p in m.parameters()])


# checkpoint blob: magic | u16 version | u8 squash | u16 n_dims | u32 dims... | <f8 weight, bias per layer

def mlp_to_bytes(mlp: Mlp) -> bytes:
    buf = io.BytesIO()
    buf.write(MLP_MAGIC)
    buf.write(struct.pack("<HBH", MLP_VERSION, int(mlp.squash_output), len(mlp.layer_dims)))
    buf.write(struct.pack(f"<{len(mlp.layer_dims)}I", *mlp.layer_dims))
    for layer in mlp.layers:
        buf.write(layer.weight.detach().numpy().astype("<f8").tobytes())
        buf.write(layer.bias.detach().numpy().astype("<f8").tobytes())
    return buf.getvalue()


def mlp_from_bytes(blob: bytes) -> Mlp:
    if blob[:4] != MLP_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}")
    try:
        version, squash, n = struct.unpack_from("<HBH", blob, 4)
        if version != MLP_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        offset = 4 + struct.calcsize("<HBH")
        dims = list(struct.unpack_from(f"<{n}I", blob, offset))
        offset += 4 * n
        mlp = Mlp(dims, squash_output=bool(squash))
        with torch.no_grad():
            for layer in mlp.layers:
                for p in (layer.weight, layer.bias):
                    count = p.numel()
                    arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
                    p.copy_(torch.from_numpy(arr.reshape(tuple(p.shape)).astype(np.float64)))
                    offset += 8 * count
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"truncated or malformed network blob: {e}") from e
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after network blob")
    return mlp


def pack_blobs(blobs: Sequence[bytes]) -> bytes:
    return struct.pack("<I", len(blobs)) + b"".join(struct.pack("<Q", len(b)) + b for b in blobs)


def unpack_blobs(data: bytes, offset: int = 0) -> tuple[list[bytes], int]:
    try:
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        blobs = []
        for _ in range(count):
            (size,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            if offset + size > len(data):
                raise CheckpointError("blob length runs past end of file")
            blobs.append(data[offset:offset + size])
            offset += size
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from e
    return blobs, offset


def save_mlps(path, mlps: Sequence[Mlp]) -> None:
    with open(path, "wb") as f:
        f.write(pack_blobs([mlp_to_bytes(m) for m in mlps]))


def load_mlps(path) -> list[Mlp]:
    with open(path, "rb") as f:
        data = f.read()
    blobs, offset = unpack_blobs(data)
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes in {path}")
    return [mlp_from_bytes(b) for b in blobs]
