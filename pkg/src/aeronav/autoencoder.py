"""Denoising depth autoencoder: synthetic dataset, pretraining, encoder head.

Frames are normalized depth images in [0, 1] rendered from random
pillar/panel/wall scenes by the package's own camera (standing in for an
external RGB-D corpus — the noise model matters more than dataset identity
for transfer). The per-pixel confidence proxy is 1 minus the normalized
local depth-gradient magnitude, so corruption noise concentrates at depth
discontinuities the way stereo noise does.

The trained encoder is frozen and serves as the policy's perception head.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .camera import CameraModel, DepthNoise, apply_noise, normalize_for_policy, render
from .core import DroneState, Vec3
from . import envgen

LATENT_DIM = 128
DATASET_MAGIC = b"ANRLDS1\n"


class Diverged(RuntimeError):
    pass


class DepthAutoencoder(nn.Module):
    """Conv encoder to a 128-d latent and a mirrored transposed-conv decoder.

    Channel widths are kept small so desk-scale CPU training stays fast;
    the latent dimension is fixed at 128.
    """

    def __init__(self, height: int = 108, width: int = 192,
                 channels=(4, 8, 16, 16), dtype=torch.float32):
        super().__init__()
        self.height = height
        self.width = width
        self.channels = tuple(channels)

        dims = [(height, width)]
        enc = []
        c_in = 1
        for c in channels:
            enc += [nn.Conv2d(c_in, c, 3, stride=2, padding=1, dtype=dtype), nn.ReLU()]
            h, w = dims[-1]
            dims.append(((h - 1) // 2 + 1, (w - 1) // 2 + 1))
            c_in = c
        self._dims = dims
        fh, fw = dims[-1]
        self.flat_dim = channels[-1] * fh * fw
        self.encoder_conv = nn.Sequential(*enc)
        self.encoder_fc = nn.Linear(self.flat_dim, LATENT_DIM, dtype=dtype)

        self.decoder_fc = nn.Linear(LATENT_DIM, self.flat_dim, dtype=dtype)
        dec = []
        rev = list(channels)[::-1]
        for k in range(len(rev)):
            c_out = rev[k + 1] if k + 1 < len(rev) else 1
            h_in, w_in = dims[len(dims) - 1 - k]
            h_out, w_out = dims[len(dims) - 2 - k]
            op = (h_out - (2 * h_in - 1), w_out - (2 * w_in - 1))
            dec.append(nn.ConvTranspose2d(rev[k], c_out, 3, stride=2, padding=1,
                                          output_padding=op, dtype=dtype))
            dec.append(nn.ReLU() if k + 1 < len(rev) else nn.Sigmoid())
        self.decoder_conv = nn.Sequential(*dec)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """(B, H, W) or (B, 1, H, W) in [0,1] -> (B, 128)."""
        if x.dim() == 3:
            x = x.unsqueeze(1)
        z = self.encoder_conv(x)
        return self.encoder_fc(z.flatten(1))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        fh, fw = self._dims[-1]
        x = self.decoder_fc(z).view(-1, self.channels[-1], fh, fw)
        return self.decoder_conv(x).squeeze(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def encode(ae: DepthAutoencoder, img: np.ndarray) -> np.ndarray:
    """Deterministic latent for one normalized (H, W) frame."""
    with torch.no_grad():
        t = torch.from_numpy(np.ascontiguousarray(img, dtype=np.float32))
        return ae.encode(t.unsqueeze(0)).squeeze(0).numpy()


# ---------------------------------------------------------------------------
# Synthetic dataset
# ---------------------------------------------------------------------------


@dataclass
class DepthDataset:
    frames: np.ndarray        # (N, H, W) float32 in [0, 1]
    confidence: np.ndarray    # (N, H, W) float32 in [0, 1]
    val_fraction: float = 0.1

    def __len__(self):
        return len(self.frames)

    def split(self):
        n_val = int(round(len(self.frames) * self.val_fraction))
        n_val = min(max(n_val, 1 if len(self.frames) > 1 else 0), len(self.frames))
        return self.frames[:-n_val] if n_val else self.frames, self.frames[-n_val:]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.frames.tobytes())
        h.update(self.confidence.tobytes())
        return h.hexdigest()[:16]


def confidence_proxy(frame: np.ndarray) -> np.ndarray:
    """1 - normalized gradient magnitude: low confidence at depth edges."""
    gy, gx = np.gradient(frame.astype(np.float64))
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        return np.ones_like(frame, dtype=np.float32)
    return (1.0 - mag / peak).astype(np.float32)


def _random_scene(rng):
    k = int(rng.integers(4))
    if k == 3:
        return envgen.gen_privileged_env(rng)
    specs = [envgen.region1_spec(), envgen.region2_spec(), envgen.region3_spec()]
    return envgen.gen_region(specs[k], rng)


def synthesize_dataset(n: int, rng, cam: CameraModel | None = None,
                       frames_per_scene: int = 8,
                       env_distribution=None) -> DepthDataset:
    """Render n frames from random poses in randomly generated scenes."""
    cam = cam or CameraModel()
    gen_env = env_distribution or _random_scene
    frames = np.empty((n, cam.height, cam.width), dtype=np.float32)
    confs = np.empty_like(frames)
    count = 0
    while count < n:
        env = gen_env(rng)
        (xmin, xmax), (ymin, ymax) = env.world_extent()
        for _ in range(frames_per_scene):
            if count >= n:
                break
            for _ in range(40):
                x = rng.uniform(xmin, xmax)
                y = rng.uniform(ymin, ymax)
                z = rng.uniform(1.0, 5.0)
                if env.min_distance(x, y, z) > 0.4:
                    break
            yaw = rng.uniform(-math.pi, math.pi)
            pose = DroneState(position=Vec3(x, y, z), velocity=Vec3(0, 0, 0),
                              yaw=yaw, body_rates=Vec3(0, 0, 0))
            depth = render(pose, env, cam)
            frame = normalize_for_policy(depth, cam.min_range, cam.max_range)
            frames[count] = frame
            confs[count] = confidence_proxy(frame)
            count += 1
    return DepthDataset(frames=frames, confidence=confs)


def corrupt(img: np.ndarray, confidence: np.ndarray, rng,
            sigma: float = 0.1) -> np.ndarray:
    """Add confidence-scaled Gaussian noise, clamped to [0, 1]."""
    if img.shape != confidence.shape:
        raise ValueError("image/confidence shape mismatch")
    noisy = img + sigma * (1.0 - confidence) * rng.standard_normal(img.shape)
    return np.clip(noisy, 0.0, 1.0).astype(img.dtype)


def save_dataset(ds: DepthDataset, path) -> None:
    """Single-file binary cache: magic, JSON header, f16 frame/conf blobs."""
    n, h, w = ds.frames.shape
    header = json.dumps({"n": n, "height": h, "width": w, "dtype": "<f2",
                         "val_fraction": ds.val_fraction}).encode()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(ds.frames.astype("<f2").tobytes())
        f.write(ds.confidence.astype("<f2").tobytes())


def load_dataset(path) -> DepthDataset:
    with open(path, "rb") as f:
        if f.read(len(DATASET_MAGIC)) != DATASET_MAGIC:
            raise ValueError("not a dataset cache file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        hdr = json.loads(f.read(hlen).decode())
        n, h, w = hdr["n"], hdr["height"], hdr["width"]
        count = n * h * w * 2
        frames = np.frombuffer(f.read(count), dtype="<f2").reshape(n, h, w)
        confs = np.frombuffer(f.read(count), dtype="<f2").reshape(n, h, w)
    return DepthDataset(frames=frames.astype(np.float32),
                        confidence=confs.astype(np.float32),
                        val_fraction=hdr["val_fraction"])


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def save_autoencoder(path, ae: DepthAutoencoder, meta: dict | None = None) -> None:
    from .nets import module_tensors, save_checkpoint

    m = dict(meta or {})
    m["kind"] = "autoencoder"
    m["arch"] = {"channels": list(ae.channels), "height": ae.height,
                 "width": ae.width}
    save_checkpoint(path, module_tensors(ae), meta=m)


def load_autoencoder(path) -> DepthAutoencoder:
    from .nets import load_checkpoint, load_module_tensors

    tensors, meta, _ = load_checkpoint(path)
    arch = meta["arch"]
    ae = DepthAutoencoder(height=arch["height"], width=arch["width"],
                          channels=tuple(arch["channels"]))
    load_module_tensors(ae, tensors)
    return ae


def pretrain(ae: DepthAutoencoder, ds: DepthDataset, epochs: int = 20,
             lr: float = 1e-3, batch_size: int = 32, seed: int = 0,
             noise_sigma: float = 0.1, stop_at_val: float | None = None,
             log=None) -> list:
    """Minimize reconstruction MSE against clean targets; returns val losses.

    Corruption noise is redrawn every pass. Training stops early once the
    validation MSE reaches stop_at_val (the epoch budget is an upper bound).
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    opt = torch.optim.Adam(ae.parameters(), lr=lr)
    loss_fn = nn.MSELoss()
    train_frames, val_frames = ds.split()
    train_conf = ds.confidence[:len(train_frames)]
    val_t = torch.from_numpy(np.ascontiguousarray(val_frames))
    val_losses = []

    for epoch in range(epochs):
        order = rng.permutation(len(train_frames))
        ae.train()
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            clean = train_frames[idx]
            noisy = corrupt(clean, train_conf[idx], rng, sigma=noise_sigma)
            x = torch.from_numpy(noisy)
            y = torch.from_numpy(clean)
            opt.zero_grad()
            out = ae(x)
            loss = loss_fn(out, y)
            if not torch.isfinite(loss):
                raise Diverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
        ae.eval()
        with torch.no_grad():
            vl = 0.0
            for lo in range(0, len(val_t), 256):
                chunk = val_t[lo:lo + 256]
                vl += float(loss_fn(ae(chunk), chunk)) * len(chunk)
            vl /= max(len(val_t), 1)
        if not np.isfinite(vl):
            raise Diverged(f"non-finite validation loss at epoch {epoch}")
        val_losses.append(vl)
        if log:
            log(f"epoch {epoch + 1}/{epochs}  val_mse={vl:.6f}")
        if stop_at_val is not None and vl <= stop_at_val:
            break
    return val_losses
