"""Network building blocks and checkpoint serialization.

Training runs in float32; gradient tests construct the same modules in
float64 for finite-difference headroom (pass dtype=torch.float64).

Checkpoints use a self-describing container: magic "ANRL1", a JSON header
(version, tensor names/shapes/dtypes/offsets, RNG state, free-form meta),
then the raw little-endian tensor blob. Round-trips are bit-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np
import torch
import torch.nn as nn

CHECKPOINT_MAGIC = b"ANRL1\n"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class CheckpointMismatch(RuntimeError):
    """Checkpoint version or tensor shapes do not match expectations."""


_ACTIVATIONS = {
    "identity": lambda x: x,
    "tanh": torch.tanh,
    "relu": torch.relu,
    "sigmoid": torch.sigmoid,
}


def fc_forward(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
               activation: str = "identity") -> torch.Tensor:
    """y = act(W x + b) with explicit shape checking."""
    if weight.shape[1] != x.shape[-1]:
        raise ShapeMismatch(f"weight {tuple(weight.shape)} vs input {tuple(x.shape)}")
    if bias is not None and bias.shape[0] != weight.shape[0]:
        raise ShapeMismatch(f"bias {tuple(bias.shape)} vs weight {tuple(weight.shape)}")
    y = x @ weight.T
    if bias is not None:
        y = y + bias
    return _ACTIVATIONS[activation](y)


class LstmCell(nn.Module):
    """Single LSTM cell with the standard gate equations (i, f, g, o order)."""

    def __init__(self, input_dim: int, hidden_dim: int = 64, dtype=torch.float32):
        super().__init__()
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_ih = nn.Parameter(torch.empty(4 * hidden_dim, input_dim, dtype=dtype))
        self.w_hh = nn.Parameter(torch.empty(4 * hidden_dim, hidden_dim, dtype=dtype))
        self.bias = nn.Parameter(torch.zeros(4 * hidden_dim, dtype=dtype))
        k = 1.0 / np.sqrt(hidden_dim)
        with torch.no_grad():
            self.w_ih.uniform_(-k, k)
            nn.init.orthogonal_(self.w_hh)

    def forward(self, x: torch.Tensor, state: tuple) -> tuple:
        h, c = state
        if x.shape[-1] != self.input_dim:
            raise ShapeMismatch(f"input dim {x.shape[-1]} != {self.input_dim}")
        gates = x @ self.w_ih.T + h @ self.w_hh.T + self.bias
        i, f, g, o = gates.chunk(4, dim=-1)
        i = torch.sigmoid(i)
        f = torch.sigmoid(f)
        g = torch.tanh(g)
        o = torch.sigmoid(o)
        c_new = f * c + i * g
        h_new = o * torch.tanh(c_new)
        return h_new, c_new

    def zero_state(self, batch: int, dtype=None):
        dtype = dtype or self.w_ih.dtype
        z = torch.zeros(batch, self.hidden_dim, dtype=dtype)
        return z, z.clone()


def lstm_step(cell: LstmCell, x: torch.Tensor, state: tuple) -> tuple:
    return cell(x, state)


def mlp(sizes, activation="tanh", out_activation="identity",
        out_gain=None, dtype=torch.float32) -> nn.Sequential:
    """Stack of Linear layers with orthogonal init and tanh hidden units."""
    acts = {"tanh": nn.Tanh, "relu": nn.ReLU, "identity": nn.Identity}
    layers = []
    for k in range(len(sizes) - 1):
        lin = nn.Linear(sizes[k], sizes[k + 1], dtype=dtype)
        last = k == len(sizes) - 2
        gain = (out_gain if last and out_gain is not None
                else nn.init.calculate_gain("tanh" if activation == "tanh" else "relu"))
        nn.init.orthogonal_(lin.weight, gain=gain)
        nn.init.zeros_(lin.bias)
        layers.append(lin)
        layers.append(acts[out_activation if last else activation]())
    return nn.Sequential(*layers)


# ---------------------------------------------------------------------------
# tanh-squashed Gaussian policy head math
# ---------------------------------------------------------------------------

_LOG_2PI = float(np.log(2.0 * np.pi))


def tanh_gaussian_sample(mean: torch.Tensor, log_std: torch.Tensor, generator=None):
    """Sample pre-squash u ~ N(mean, std) and return (action, u)."""
    std = torch.exp(log_std)
    noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    u = mean + std * noise
    return torch.tanh(u), u


def tanh_gaussian_log_prob(u: torch.Tensor, mean: torch.Tensor,
                           log_std: torch.Tensor) -> torch.Tensor:
    """log p(tanh(u)) for u drawn from N(mean, exp(log_std)), summed over dims.

    Includes the tanh change-of-variables term log(1 - tanh(u)^2), written
    in the numerically stable softplus form.
    """
    std = torch.exp(log_std)
    base = -0.5 * (((u - mean) / std) ** 2) - log_std - 0.5 * _LOG_2PI
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    squash = 2.0 * (np.log(2.0) - u - torch.nn.functional.softplus(-2.0 * u))
    return (base - squash).sum(dim=-1)


def gaussian_entropy(log_std: torch.Tensor) -> torch.Tensor:
    """Entropy of the pre-squash Gaussian (used as the exploration bonus)."""
    return (log_std + 0.5 * (1.0 + _LOG_2PI)).sum()


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

_DTYPE_TAGS = {torch.float32: "<f4", torch.float64: "<f8"}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_checkpoint(path, tensors: dict, meta: dict | None = None,
                    rng_state: dict | None = None) -> None:
    """Write named tensors plus metadata to the ANRL1 container."""
    entries = []
    blobs = []
    offset = 0
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        tag = _DTYPE_TAGS[t.dtype]
        raw = t.numpy().astype(tag, copy=False).tobytes()
        entries.append({"name": name, "shape": list(t.shape),
                        "dtype": tag, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": CHECKPOINT_VERSION,
        "tensors": entries,
        "meta": meta or {},
        "rng": rng_state or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    """Read an ANRL1 container; returns (tensors, meta, rng_state)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        if header["version"] != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"unsupported version {header['version']}")
        blob = f.read()
    tensors = {}
    for e in header["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr)
    return tensors, header["meta"], header["rng"]


def module_tensors(module: nn.Module, prefix: str = "") -> dict:
    return {prefix + name: p for name, p in module.state_dict().items()}


def load_module_tensors(module: nn.Module, tensors: dict, prefix: str = "") -> None:
    state = {}
    own = module.state_dict()
    for name, ref in own.items():
        key = prefix + name
        if key not in tensors:
            raise CheckpointMismatch(f"missing tensor {key!r}")
        t = tensors[key]
        if tuple(t.shape) != tuple(ref.shape):
            raise CheckpointMismatch(
                f"shape mismatch for {key!r}: {tuple(t.shape)} vs {tuple(ref.shape)}")
        state[name] = t.to(ref.dtype)
    module.load_state_dict(state)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def parameter_hash(module: nn.Module) -> str:
    """Order-stable hash of all parameters, for freeze-contract checks."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def make_adam(params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
    return torch.optim.Adam(params, lr=lr, betas=betas, eps=eps)
