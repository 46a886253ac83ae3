"""Noise estimators: the analytic oracle, a small trainable U-Net, training.

An estimator predicts, for a (2N+1)-slice latent stack at time t, the
quantity the bridge objective regresses on: m_t(Y - X0) + sqrt(delta_t)*eps,
which for a latent formed by the forward bridge equals X_t - X0. The oracle
holds the ground-truth target volume and returns X_t - X0 exactly; it is the
global minimizer of the training objective and serves as exact ground truth
for sampler verification. The trainable estimator is a compact conv
encoder-decoder with a sinusoidal time embedding and an additive style-key
embedding, conditioned on the source sub-volume via extra input channels.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .schedule import ScheduleTable
from .style_key import StyleKey
from .volume import Volume, extract_subvolume

__all__ = [
    "NoiseEstimator",
    "OracleEstimator",
    "TrainableEstimator",
    "TrainingConfig",
    "TrainingExample",
    "make_training_example",
    "train",
    "predict_with_sourcecond",
    "save_checkpoint",
    "load_checkpoint",
    "gradient_check",
]

DEFAULT_HALF_WIDTH = 1

CHECKPOINT_MAGIC = b"BVCK"
CHECKPOINT_VERSION = 1


class NoiseEstimator:
    """Interface: predict the regression target for a latent stack at time t."""

    half_width: int = DEFAULT_HALF_WIDTH

    def predict(self, stack: np.ndarray, key: StyleKey, t: int, *,
                source_stack: np.ndarray | None = None,
                center_index: int | None = None) -> np.ndarray:
        out = self.predict_batch(stack[None], key, np.array([t]),
                                 source_stacks=None if source_stack is None
                                 else source_stack[None],
                                 center_indices=None if center_index is None
                                 else [center_index])
        return out[0]

    def predict_batch(self, stacks, key, ts, *, source_stacks=None,
                      center_indices=None) -> np.ndarray:
        raise NotImplementedError


def predict_with_sourcecond(estimator: NoiseEstimator, xt_stack: np.ndarray,
                            y_stack: np.ndarray, key: StyleKey, t: int,
                            center_index: int | None = None) -> np.ndarray:
    """Estimator call with the source sub-volume as conditioning channels.

    The oracle ignores the source channels; the trainable net concatenates
    them to its input.
    """
    if xt_stack.shape != y_stack.shape:
        raise ValueError(f"stack shape mismatch: {xt_stack.shape} vs {y_stack.shape}")
    return estimator.predict(xt_stack, key, t, source_stack=y_stack,
                             center_index=center_index)


class OracleEstimator(NoiseEstimator):
    """Perfectly trained estimator: returns X_t - X0 for registered volumes."""

    def __init__(self, schedule: ScheduleTable, half_width: int = DEFAULT_HALF_WIDTH):
        self.schedule = schedule
        self.half_width = half_width
        self._x0: dict[str, Volume] = {}
        self._active: str | None = None

    @classmethod
    def for_pair(cls, schedule: ScheduleTable, x0: Volume,
                 half_width: int = DEFAULT_HALF_WIDTH) -> "OracleEstimator":
        est = cls(schedule, half_width)
        est.register("default", x0)
        est.select("default")
        return est

    def register(self, volume_id: str, x0: Volume) -> None:
        self._x0[volume_id] = x0

    def select(self, volume_id: str) -> None:
        if volume_id not in self._x0:
            raise LookupError(f"unknown volume id {volume_id!r}")
        self._active = volume_id

    def predict_batch(self, stacks, key, ts, *, source_stacks=None,
                      center_indices=None):
        if self._active is None:
            raise LookupError("no ground-truth volume selected")
        if center_indices is None:
            raise ValueError("oracle prediction requires center indices")
        x0 = self._x0[self._active]
        stacks = np.asarray(stacks)
        out = np.empty_like(stacks)
        for b, i in enumerate(center_indices):
            out[b] = stacks[b] - extract_subvolume(x0, i, self.half_width).data
        return out


class _SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t):
        half = self.dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype)
                          / (half - 1))
        args = t[:, None] * freqs[None, :]
        return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class _ConvBlock(nn.Module):
    def __init__(self, c_in, c_out, emb_dim):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(8, c_out)
        self.norm2 = nn.GroupNorm(8, c_out)
        self.emb = nn.Linear(emb_dim, c_out)
        self.act = nn.SiLU()
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.act(self.norm1(self.conv1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.act(self.norm2(self.conv2(h)))
        return h + self.skip(x)


class _BridgeUNet(nn.Module):
    """3-level encoder-decoder with skips, time + style-key embedding."""

    def __init__(self, in_channels, out_channels, bins, base_width=32,
                 emb_dim=128, use_style=True):
        super().__init__()
        self.use_style = use_style
        w = base_width
        self.time_embed = nn.Sequential(_SinusoidalEmbedding(emb_dim),
                                        nn.Linear(emb_dim, emb_dim), nn.SiLU(),
                                        nn.Linear(emb_dim, emb_dim))
        if use_style:
            self.style_embed = nn.Sequential(nn.Linear(3 * bins, emb_dim),
                                             nn.SiLU(),
                                             nn.Linear(emb_dim, emb_dim))
            # hist and diff entries are O(1/B); rescale so the style input
            # has O(1) magnitude without changing the [hist|cum|diff] layout
            scale = torch.ones(3 * bins)
            scale[:bins] = bins
            scale[2 * bins:] = bins
            self.register_buffer("style_scale", scale)

        self.down1 = _ConvBlock(in_channels, w, emb_dim)
        self.pool1 = nn.Conv2d(w, w, 3, stride=2, padding=1)
        self.down2 = _ConvBlock(w, 2 * w, emb_dim)
        self.pool2 = nn.Conv2d(2 * w, 2 * w, 3, stride=2, padding=1)
        self.mid = _ConvBlock(2 * w, 4 * w, emb_dim)
        self.up2 = nn.Upsample(scale_factor=2, mode="nearest")
        self.dec2 = _ConvBlock(4 * w + 2 * w, 2 * w, emb_dim)
        self.up1 = nn.Upsample(scale_factor=2, mode="nearest")
        self.dec1 = _ConvBlock(2 * w + w, w, emb_dim)
        self.final = nn.Conv2d(w, out_channels, 1)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

    def forward(self, x, key_vec, t):
        emb = self.time_embed(t)
        if self.use_style:
            emb = emb + self.style_embed(key_vec * self.style_scale)
        h1 = self.down1(x, emb)
        h2 = self.down2(self.pool1(h1), emb)
        h3 = self.mid(self.pool2(h2), emb)
        u2 = self.dec2(torch.cat([self.up2(h3), h2], dim=1), emb)
        u1 = self.dec1(torch.cat([self.up1(u2), h1], dim=1), emb)
        return self.final(u1)


class TrainableEstimator(NoiseEstimator):
    """Small conv encoder-decoder noise estimator.

    Input channels are the latent stack concatenated with the source stack
    (2 * (2N+1) channels); output is the (2N+1)-channel prediction stack.
    Forward passes run single-threaded in torch so results are bit-identical
    regardless of any outer worker pool.
    """

    def __init__(self, bins: int = 128, half_width: int = DEFAULT_HALF_WIDTH,
                 base_width: int = 32, emb_dim: int = 128, use_style: bool = True,
                 seed: int = 0):
        torch.set_num_threads(1)
        self.bins = bins
        self.half_width = half_width
        self.base_width = base_width
        self.emb_dim = emb_dim
        self.use_style = use_style
        c = 2 * half_width + 1
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = _BridgeUNet(2 * c, c, bins, base_width, emb_dim, use_style)
        self.net.eval()

    def arch_descriptor(self) -> dict:
        return {"bins": self.bins, "half_width": self.half_width,
                "base_width": self.base_width, "emb_dim": self.emb_dim,
                "use_style": self.use_style}

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def predict_batch(self, stacks, key, ts, *, source_stacks=None,
                      center_indices=None):
        if source_stacks is None:
            raise ValueError("trainable estimator requires source conditioning stacks")
        stacks = np.asarray(stacks, dtype=np.float32)
        source_stacks = np.asarray(source_stacks, dtype=np.float32)
        if stacks.shape != source_stacks.shape:
            raise ValueError(f"stack shape mismatch: {stacks.shape} vs "
                             f"{source_stacks.shape}")
        x = torch.from_numpy(np.concatenate([stacks, source_stacks], axis=1))
        tvec = torch.as_tensor(np.asarray(ts), dtype=torch.float32)
        if self.use_style:
            kv = torch.from_numpy(
                np.broadcast_to(key.as_vector().astype(np.float32),
                                (stacks.shape[0], 3 * self.bins)).copy())
        else:
            kv = torch.zeros(stacks.shape[0], 3 * self.bins)
        with torch.no_grad():
            out = self.net(x, kv, tvec)
        return out.numpy()


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 16
    iterations: int = 2000
    lr: float = 1e-4
    seed: int = 0
    weighted_loss: bool = False  # weight each term by |c_eps[t]|
    log_every: int = 50

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0 or self.lr <= 0:
            raise ValueError("invalid training configuration")


@dataclass(frozen=True)
class TrainingExample:
    xt_stack: np.ndarray
    y_stack: np.ndarray
    key: StyleKey
    t: int
    target_stack: np.ndarray


def make_training_example(pair, key: StyleKey, schedule: ScheduleTable,
                          rng: np.random.Generator,
                          half_width: int = DEFAULT_HALF_WIDTH,
                          i: int | None = None, t: int | None = None,
                          eps: np.ndarray | None = None) -> TrainingExample:
    """One objective sample: latent stack, conditioning, regression target.

    i, t, eps may be forced for tests; otherwise i is uniform over slices,
    t uniform over {1..T}, eps standard normal.
    """
    source, target = pair
    if i is None:
        i = int(rng.integers(0, target.Z))
    if t is None:
        t = int(rng.integers(1, schedule.T + 1))
    x0 = extract_subvolume(target, i, half_width).data.astype(np.float64)
    y = extract_subvolume(source, i, half_width).data.astype(np.float64)
    if eps is None:
        eps = rng.standard_normal(x0.shape)
    m_t = schedule.m[t]
    sqrt_d = np.sqrt(schedule.delta[t])
    xt = (1.0 - m_t) * x0 + m_t * y + sqrt_d * eps
    tgt = m_t * (y - x0) + sqrt_d * eps
    return TrainingExample(xt_stack=xt.astype(np.float32),
                           y_stack=y.astype(np.float32),
                           key=key, t=t, target_stack=tgt.astype(np.float32))


def objective_value(estimator: NoiseEstimator, examples, schedule,
                    weighted: bool = False, center_indices=None) -> float:
    """Mean training objective over a list of examples (no gradients)."""
    total = 0.0
    for n, ex in enumerate(examples):
        pred = predict_with_sourcecond(
            estimator, ex.xt_stack, ex.y_stack, ex.key, ex.t,
            center_index=None if center_indices is None else center_indices[n])
        w = abs(schedule.c_eps[ex.t]) if weighted else 1.0
        total += w * float(np.mean((ex.target_stack - pred) ** 2))
    return total / len(examples)


def train(estimator: TrainableEstimator, dataset, schedule: ScheduleTable,
          config: TrainingConfig, progress=None):
    """Minimize the bridge regression objective with Adam.

    dataset: list of (source: Volume, target: Volume, key: StyleKey).
    Returns the loss curve; the estimator is updated in place. Seeded and
    single-threaded, so runs are reproducible on one machine.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    torch.manual_seed(config.seed)
    net = estimator.net
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    losses = []
    net.train()
    try:
        for step in range(config.iterations):
            batch = []
            for _ in range(config.batch_size):
                k = int(rng.integers(0, len(dataset)))
                source, target, key = dataset[k][0], dataset[k][1], dataset[k][2]
                batch.append(make_training_example(
                    (source, target), key, schedule, rng, estimator.half_width))
            x = torch.from_numpy(np.stack(
                [np.concatenate([ex.xt_stack, ex.y_stack]) for ex in batch]))
            tgt = torch.from_numpy(np.stack([ex.target_stack for ex in batch]))
            tvec = torch.tensor([float(ex.t) for ex in batch])
            if estimator.use_style:
                kv = torch.from_numpy(np.stack(
                    [ex.key.as_vector().astype(np.float32) for ex in batch]))
            else:
                kv = torch.zeros(len(batch), 3 * estimator.bins)
            if config.weighted_loss:
                w = torch.tensor([abs(schedule.c_eps[ex.t]) for ex in batch],
                                 dtype=torch.float32)
            else:
                w = torch.ones(len(batch))

            opt.zero_grad()
            pred = net(x, kv, tvec)
            loss = (w * ((pred - tgt) ** 2).mean(dim=(1, 2, 3))).mean()
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at step {step}: loss={loss.item()!r}, "
                    f"last batch t values {[ex.t for ex in batch]}")
            loss.backward()
            opt.step()
            losses.append(float(loss.item()))
            if progress is not None and step % config.log_every == 0:
                progress(step, losses[-1])
    finally:
        net.eval()
    return losses


# ---------------------------------------------------------------------------
# checkpoint format: magic "BVCK", u32 version, u32 json length, JSON
# architecture descriptor (with named tensor shapes in payload order), then
# raw little-endian float32 parameters.
# ---------------------------------------------------------------------------

def save_checkpoint(estimator: TrainableEstimator, path, meta: dict | None = None):
    state = estimator.net.state_dict()
    names = [k for k in state if state[k].dtype == torch.float32]
    desc = {"arch": estimator.arch_descriptor(),
            "tensors": [{"name": k, "shape": list(state[k].shape)} for k in names],
            "meta": meta or {}}
    blob = json.dumps(desc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for k in names:
            f.write(state[k].numpy().astype("<f4", copy=False).tobytes())


class CheckpointFormatError(ValueError):
    pass


def load_checkpoint(path) -> tuple[TrainableEstimator, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad checkpoint magic at offset 0")
    version, jlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    desc = json.loads(raw[12:12 + jlen].decode("utf-8"))
    est = TrainableEstimator(**desc["arch"])
    offset = 12 + jlen
    state = est.net.state_dict()
    for entry in desc["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        state[entry["name"]] = torch.from_numpy(arr.reshape(shape).copy())
    if offset != len(raw):
        raise CheckpointFormatError(
            f"trailing bytes: payload ends at {offset}, file has {len(raw)}")
    est.net.load_state_dict(state)
    est.net.eval()
    return est, desc["meta"]


def gradient_check(estimator: TrainableEstimator, example: TrainingExample,
                   n_params: int = 10, h: float = 1e-6, seed: int = 0) -> float:
    """Max relative error of autograd vs central finite differences.

    Runs on a float64 copy of the network; checks n_params randomly chosen
    scalar parameters.
    """
    net = TrainableEstimator(**estimator.arch_descriptor()).net
    net.load_state_dict(estimator.net.state_dict())
    net = net.double()
    net.eval()

    x = torch.from_numpy(np.concatenate(
        [example.xt_stack, example.y_stack])[None]).double()
    kv = torch.from_numpy(example.key.as_vector()[None]).double()
    tvec = torch.tensor([float(example.t)], dtype=torch.float64)
    tgt = torch.from_numpy(example.target_stack[None]).double()

    def loss_fn():
        return ((net(x, kv, tvec) - tgt) ** 2).mean()

    loss = loss_fn()
    loss.backward()
    params = [p for p in net.parameters() if p.grad is not None]
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for _ in range(n_params):
        p = params[int(rng.integers(0, len(params)))]
        flat = p.detach().reshape(-1)
        j = int(rng.integers(0, flat.numel()))
        analytic = float(p.grad.reshape(-1)[j])
        with torch.no_grad():
            orig = float(flat[j])
            flat[j] = orig + h
            lp = float(loss_fn())
            flat[j] = orig - h
            lm = float(loss_fn())
            flat[j] = orig
        numeric = (lp - lm) / (2 * h)
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
