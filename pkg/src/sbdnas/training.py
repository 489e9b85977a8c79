"""SuperNet training, candidate retraining, distillation and grafting.

The SuperNet holds one independent weight set per (block position,
option) pair plus one per attention depth; a training step samples one
path uniformly, so only the sampled options' weights (and the shared
head/similarity weights) are touched.  Candidate retraining reuses the
same loop on a standalone model.

The multi-head objective is a per-frame binary cross-entropy over the
two heads (single-middle-frame and all-transition), weighted lambda1 /
lambda2 and summed over batch and frames; the SGD step scales it by
1/(batch * frames) for stability at the documented learning rate.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as tz
from .arch import ArchCode, CodeSpace, FULL_SPACE, NUM_BLOCKS, BLOCK_GENE_TABLE, decode_arch
from .network import (
    Model,
    NetworkConfig,
    block_forward,
    build_network,
    init_block_params,
    learnable_cosine_similarity,
    max_block_out_channels,
    plan_network,
    position_max_in_channels,
    rgb_histogram_similarity,
)
from .tensor import BatchNormState, ShapeError, Tensor, backward


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


PROB_CLAMP = 1e-7


# ---------------------------------------------------------------------------
# losses


def _bce_sum(pred: Tensor, target: np.ndarray) -> Tensor:
    p = tz.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = tz.mul_const(tz.log(p), target)
    neg = tz.mul_const(tz.log(tz.const_minus(1.0, p)), 1.0 - target)
    return tz.scale(tz.reduce_sum(tz.add(pos, neg)), -1.0)


def loss_multihead(y_hat: Tensor, z_hat: Tensor, y, z,
                   lambda1: float, lambda2: float) -> Tensor:
    """Summed two-head BCE: lambda1 * BCE(y, y_hat) + lambda2 * BCE(z, z_hat)."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y_hat.shape != y.shape or z_hat.shape != z.shape:
        raise ShapeError(
            f"loss_multihead: predictions {y_hat.shape}/{z_hat.shape} vs "
            f"labels {y.shape}/{z.shape}")
    return tz.add(tz.scale(_bce_sum(y_hat, y), lambda1),
                  tz.scale(_bce_sum(z_hat, z), lambda2))


def distill_loss(student_y: Tensor, student_z: Tensor, teacher_y, teacher_z,
                 lambda1: float, lambda2: float) -> Tensor:
    """Soft-target form of the multi-head loss; teacher outputs are the
    targets.  With 0/1 teacher outputs this reduces to loss_multihead."""
    ty = np.asarray(teacher_y, dtype=np.float64)
    tzz = np.asarray(teacher_z, dtype=np.float64)
    if np.any((ty < 0) | (ty > 1)) or np.any((tzz < 0) | (tzz > 1)):
        raise ValueError("teacher outputs must be probabilities in [0, 1]")
    return loss_multihead(student_y, student_z, ty, tzz, lambda1, lambda2)


# ---------------------------------------------------------------------------
# configs and samples


@dataclass
class SGDConfig:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 12
    lambda1: float = 5.0
    lambda2: float = 0.1
    n_frames: int = 60
    seed: int = 0
    steps_per_epoch: int | None = None
    fade_prob: float = 0.3
    fade_len_range: tuple[int, int] = (4, 12)

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("lambda1 and lambda2 must be positive")


@dataclass
class GraftConfig:
    amplitude: float = 0.4     # A in the arctan coefficient
    slope: float = 1.0         # c
    bins: int = 10
    num_networks: int = 3

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("entropy bins must be >= 2")
        if self.num_networks < 2:
            raise ValueError("grafting needs at least 2 networks")


@dataclass
class TrainSample:
    """One training window: frames plus the two per-frame label tracks."""

    frames: np.ndarray  # [1, N_F, H, W, 3], values in [0, 255]
    y: np.ndarray       # [1, N_F] single-middle-frame labels
    z: np.ndarray       # [1, N_F] all-transition labels

    def __post_init__(self):
        if self.frames.ndim != 5 or self.frames.shape[0] != 1:
            raise ShapeError(f"TrainSample frames must be [1,T,H,W,3], got {self.frames.shape}")
        if self.y.shape != self.frames.shape[:2] or self.z.shape != self.y.shape:
            raise ShapeError("TrainSample labels must be [1, N_F]")
        if np.any(self.y > self.z):
            raise ValueError("TrainSample invariant violated: y <= z elementwise")


class ShotPool:
    """Shots (frame stacks) available for sample construction."""

    def __init__(self, shots: Sequence[np.ndarray]):
        self.shots = [np.asarray(s) for s in shots]
        for s in self.shots:
            if s.ndim != 4 or s.shape[-1] != 3 or len(s) < 1:
                raise ShapeError(f"each shot must be [len,H,W,3], got {s.shape}")

    def __len__(self):
        return len(self.shots)

    @classmethod
    def from_videos(cls, videos: Iterable[tuple[np.ndarray, "object"]]) -> "ShotPool":
        """Build from (frames, ShotAnnotation) pairs."""
        shots = []
        for frames, ann in videos:
            for begin, end in ann.shots:
                shots.append(frames[begin:end + 1])
        return cls(shots)


def sample_uniform_path(rng: np.random.Generator,
                        space: CodeSpace = FULL_SPACE) -> ArchCode:
    """Draw each block option and the attention depth independently and
    uniformly from the space's domains."""
    return space.sample(rng)


def make_training_sample(pool: ShotPool, rng: np.random.Generator,
                         n_frames: int = 60, fade_prob: float = 0.3,
                         fade_len_range: tuple[int, int] = (4, 12)) -> TrainSample:
    """Concatenate two random shots, optionally through a cross-fade.

    The transition span is [m-1, m-1+L] where m is the first shot's
    length and L the fade length (0 for a hard cut); z is 1 on the span,
    y is 1 at its middle frame.  The window is placed uniformly among
    positions that keep the span fully inside.
    """
    if len(pool) < 2:
        raise ValueError("make_training_sample needs a pool of >= 2 shots")
    i, j = rng.choice(len(pool), size=2, replace=False)
    a = np.asarray(pool.shots[i], dtype=np.float64)
    b = np.asarray(pool.shots[j], dtype=np.float64)
    fade = int(rng.integers(fade_len_range[0], fade_len_range[1] + 1)) \
        if rng.random() < fade_prob else 0

    blend = []
    for k in range(fade):
        w = (k + 1) / (fade + 1)
        blend.append((1.0 - w) * a[-1] + w * b[0])
    seq = np.concatenate([a] + ([np.stack(blend)] if blend else []) + [b], axis=0)

    m = len(a)
    lo, hi = m - 1, m - 1 + fade
    total = len(seq)
    if total < n_frames:
        pad = np.repeat(seq[-1:], n_frames - total, axis=0)
        seq = np.concatenate([seq, pad], axis=0)
        total = n_frames

    start_lo = max(0, hi - n_frames + 1)
    start_hi = min(lo, total - n_frames)
    if start_hi < start_lo:  # span wider than the window: center on the middle
        start = int(np.clip((lo + hi) // 2 - n_frames // 2, 0, total - n_frames))
    else:
        start = int(rng.integers(start_lo, start_hi + 1))
    window = seq[start:start + n_frames]

    y = np.zeros((1, n_frames))
    z = np.zeros((1, n_frames))
    z_lo = max(lo - start, 0)
    z_hi = min(hi - start, n_frames - 1)
    z[0, z_lo:z_hi + 1] = 1.0
    mid = int(np.clip((lo + hi) // 2 - start, z_lo, z_hi))
    y[0, mid] = 1.0
    return TrainSample(window, y, z)


def stack_samples(samples: Sequence[TrainSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    frames = np.concatenate([s.frames for s in samples], axis=0)
    y = np.concatenate([s.y for s in samples], axis=0)
    z = np.concatenate([s.z for s in samples], axis=0)
    return frames, y, z


# ---------------------------------------------------------------------------
# SGD


class SGD:
    """Plain momentum SGD over named parameters; lazily-created velocities."""

    def __init__(self, lr: float, momentum: float):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[int, np.ndarray] = {}

    def step(self, params: Iterable[Tensor]) -> None:
        for p in params:
            if p.grad is None:
                continue
            v = self.velocity.get(id(p))
            if v is None:
                v = np.zeros_like(p.data)
                self.velocity[id(p)] = v
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v


# ---------------------------------------------------------------------------
# SuperNet


class SuperNet:
    """Weight-shared container for the whole search space.

    Inputs to each block position are zero-padded to the position's
    worst-case channel count so every option's weights have fixed shapes;
    padded rows receive zero gradient and stay bitwise unchanged.
    """

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator,
                 space: CodeSpace = FULL_SPACE):
        self.cfg = cfg
        self.space = space
        self.block_params: list[dict[int, dict[str, Tensor]]] = []
        self.bn_states: list[dict[int, BatchNormState]] = []
        in_max = position_max_in_channels(cfg)
        for p in range(NUM_BLOCKS):
            opts: dict[int, dict[str, Tensor]] = {}
            states: dict[int, BatchNormState] = {}
            for o in space.block_options[p]:
                gene = BLOCK_GENE_TABLE[o]
                params, state = init_block_params(
                    gene, in_max[p], cfg.f_schedule[p], rng, prefix=f"pos{p}.opt{o}")
                opts[o] = params
                states[o] = state
            self.block_params.append(opts)
            self.bn_states.append(states)

        h, w = cfg.height, cfg.width
        for p in range(NUM_BLOCKS):
            if (p + 1) in cfg.pool_after:
                h, w = h // 2, w // 2
        self.final_h, self.final_w = h, w
        self.base_dim_max = h * w * max_block_out_channels(cfg.f_schedule[-1])
        self.block_feat_dim_max = sum(max_block_out_channels(f) for f in cfg.f_schedule)

        self.attn_params: dict[int, list[dict[str, Tensor]]] = {}
        for depth in space.attention_options:
            if depth > 0:
                self.attn_params[depth] = [
                    tz.init_attention_params(self.base_dim_max, rng,
                                             prefix=f"attn_depth{depth}.layer{j}")
                    for j in range(depth)]

        self.shared: dict[str, Tensor] = {}
        k = len(cfg.sim_offsets())
        self._add_shared("hist_embed", k, cfg.hist_embed_dim, rng)
        self._add_shared("cos_proj", self.block_feat_dim_max, cfg.cos_proj_dim, rng)
        self._add_shared("cos_embed", k, cfg.cos_embed_dim, rng)
        head_in = self.base_dim_max + cfg.hist_embed_dim + cfg.cos_embed_dim
        self._add_shared("head", head_in, cfg.head_units, rng)
        self._add_shared("y_head", cfg.head_units, 1, rng)
        self._add_shared("z_head", cfg.head_units, 1, rng)

    def _add_shared(self, name: str, din: int, dout: int, rng: np.random.Generator):
        std = math.sqrt(2.0 / din)
        self.shared[f"{name}.w"] = Tensor(rng.normal(0.0, std, size=(din, dout)),
                                          requires_grad=True, name=f"shared.{name}.w")
        self.shared[f"{name}.b"] = Tensor(np.zeros(dout), requires_grad=True,
                                          name=f"shared.{name}.b")

    def path_params(self, arch: ArchCode) -> list[Tensor]:
        """Every parameter the given path touches."""
        v = arch.to_vector()
        out: list[Tensor] = []
        for p in range(NUM_BLOCKS):
            out.extend(self.block_params[p][int(v[p])].values())
        if arch.attention_layers > 0:
            for layer in self.attn_params[arch.attention_layers]:
                out.extend(layer.values())
        out.extend(self.shared.values())
        return out

    def all_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for p in range(NUM_BLOCKS):
            for o, params in self.block_params[p].items():
                for k, t in params.items():
                    out[f"pos{p}.opt{o}.{k}"] = t
        for depth, layers in self.attn_params.items():
            for j, layer in enumerate(layers):
                for k, t in layer.items():
                    out[f"attn_depth{depth}.layer{j}.{k}"] = t
        for k, t in self.shared.items():
            out[f"shared.{k}"] = t
        return out

    def forward(self, frames: np.ndarray, arch: ArchCode, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Run the sampled path on raw frames in [0, 255]."""
        frames = np.asarray(frames, dtype=np.float64)
        cfg = self.cfg
        mode = "train" if train else "eval"
        in_max = position_max_in_channels(cfg)
        v = arch.to_vector()
        x = tz.scale(Tensor(frames), 1.0 / 255.0)
        block_feats = []
        for p in range(NUM_BLOCKS):
            o = int(v[p])
            gene = BLOCK_GENE_TABLE[o]
            x = tz.pad_channels(x, in_max[p])
            x = block_forward(gene, x, self.block_params[p][o], cfg.f_schedule[p],
                              self.bn_states[p][o], mode=mode)
            feat = tz.global_avg_spatial(x)
            block_feats.append(tz.pad_channels(
                feat, max_block_out_channels(cfg.f_schedule[p])))
            if (p + 1) in cfg.pool_after:
                x = tz.avg_pool_spatial(x)

        N, T = x.shape[0], x.shape[1]
        base = tz.reshape(x, (N, T, x.shape[2] * x.shape[3] * x.shape[4]))
        base = tz.pad_channels(base, self.base_dim_max)
        if arch.attention_layers > 0:
            for layer in self.attn_params[arch.attention_layers]:
                base = tz.self_attention_layer(base, layer)

        offsets = cfg.sim_offsets()
        hist = rgb_histogram_similarity(frames, cfg.hist_bins, offsets)
        hist_e = tz.relu(tz.linear(hist, self.shared["hist_embed.w"],
                                   self.shared["hist_embed.b"]))
        cos = learnable_cosine_similarity(block_feats, self.shared["cos_proj.w"],
                                          self.shared["cos_proj.b"], offsets)
        cos_e = tz.relu(tz.linear(cos, self.shared["cos_embed.w"],
                                  self.shared["cos_embed.b"]))
        feat = tz.concat_channels([base, hist_e, cos_e])
        hid = tz.relu(tz.linear(feat, self.shared["head.w"], self.shared["head.b"]))
        hid = tz.dropout(hid, cfg.dropout_rate, rng, training=train)
        y = tz.sigmoid(tz.reshape(tz.linear(hid, self.shared["y_head.w"],
                                            self.shared["y_head.b"]), (N, T)))
        z = tz.sigmoid(tz.reshape(tz.linear(hid, self.shared["z_head.w"],
                                            self.shared["z_head.b"]), (N, T)))
        return y, z

    def snapshot_bn(self) -> list[dict[int, BatchNormState]]:
        return [{o: s.copy() for o, s in states.items()} for states in self.bn_states]

    def restore_bn(self, snap: list[dict[int, BatchNormState]]) -> None:
        self.bn_states = [{o: s.copy() for o, s in states.items()} for states in snap]


# ---------------------------------------------------------------------------
# training loops


def _scaled_loss(y_hat, z_hat, y, z, cfg: SGDConfig) -> Tensor:
    raw = loss_multihead(y_hat, z_hat, y, z, cfg.lambda1, cfg.lambda2)
    return tz.scale(raw, 1.0 / y.size)


def _check_finite(value: float, step: int, context: str):
    if not math.isfinite(value):
        raise TrainingDiverged(f"{context}: loss became {value} at step {step}")


def train_supernet(supernet: SuperNet, pool: ShotPool, cfg: SGDConfig,
                   log_path=None) -> SuperNet:
    """Single-path uniform-sampling training over the shared weights."""
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(cfg.lr, cfg.momentum)
    steps_per_epoch = cfg.steps_per_epoch or max(1, len(pool) // cfg.batch_size)
    log = open(log_path, "w") if log_path else None
    try:
        step = 0
        for _ in range(cfg.epochs):
            for _ in range(steps_per_epoch):
                path = sample_uniform_path(rng, supernet.space)
                samples = [make_training_sample(pool, rng, cfg.n_frames, cfg.fade_prob,
                                                cfg.fade_len_range)
                           for _ in range(cfg.batch_size)]
                frames, y, z = stack_samples(samples)
                y_hat, z_hat = supernet.forward(frames, path, train=True, rng=rng)
                loss = _scaled_loss(y_hat, z_hat, y, z, cfg)
                _check_finite(float(loss.data), step, "train_supernet")
                backward(loss)
                opt.step(supernet.path_params(path))
                if log:
                    log.write(json.dumps({"step": step, "loss": float(loss.data),
                                          "lr": cfg.lr, "path": path.to_text()}) + "\n")
                step += 1
    finally:
        if log:
            log.close()
    return supernet


def probe_loss_supernet(supernet: SuperNet, batch, path: ArchCode,
                        cfg: SGDConfig) -> float:
    """Train-mode loss on a fixed batch without disturbing BN buffers."""
    frames, y, z = batch
    snap = supernet.snapshot_bn()
    try:
        y_hat, z_hat = supernet.forward(frames, path, train=True, rng=None)
        return float(_scaled_loss(y_hat, z_hat, y, z, cfg).data)
    finally:
        supernet.restore_bn(snap)


def probe_loss_model(model: Model, batch, cfg: SGDConfig) -> float:
    frames, y, z = batch
    snap = {k: s.copy() for k, s in model.bn_states.items()}
    try:
        y_hat, z_hat = model.forward(frames, train=True, rng=None)
        return float(_scaled_loss(y_hat, z_hat, y, z, cfg).data)
    finally:
        model.bn_states = snap


def retrain_candidate(arch: ArchCode, pool: ShotPool, cfg: SGDConfig,
                      net_cfg: NetworkConfig, teacher: Model | None = None,
                      log_path=None) -> Model:
    """Fresh training of one fixed architecture (Eq.-6 objective); with a
    teacher, its eval-mode outputs become soft targets (distillation)."""
    rng = np.random.default_rng(cfg.seed)
    model = build_network(arch, net_cfg, rng)
    opt = SGD(cfg.lr, cfg.momentum)
    steps_per_epoch = cfg.steps_per_epoch or max(1, len(pool) // cfg.batch_size)
    log = open(log_path, "w") if log_path else None
    try:
        step = 0
        for _ in range(cfg.epochs):
            for _ in range(steps_per_epoch):
                samples = [make_training_sample(pool, rng, cfg.n_frames, cfg.fade_prob,
                                                cfg.fade_len_range)
                           for _ in range(cfg.batch_size)]
                frames, y, z = stack_samples(samples)
                y_hat, z_hat = model.forward(frames, train=True, rng=rng)
                if teacher is not None:
                    t_y, t_z = teacher.forward(frames, train=False)
                    raw = distill_loss(y_hat, z_hat, t_y.data, t_z.data,
                                       cfg.lambda1, cfg.lambda2)
                    loss = tz.scale(raw, 1.0 / y.size)
                else:
                    loss = _scaled_loss(y_hat, z_hat, y, z, cfg)
                _check_finite(float(loss.data), step, "retrain_candidate")
                backward(loss)
                opt.step(model.params.values())
                if log:
                    log.write(json.dumps({"step": step, "loss": float(loss.data),
                                          "lr": cfg.lr, "path": arch.to_text()}) + "\n")
                step += 1
    finally:
        if log:
            log.close()
    return model


# ---------------------------------------------------------------------------
# entropy-based weight grafting


def layer_entropy(weights: np.ndarray, bins: int = 10) -> float:
    """Shannon entropy (natural log) of the weight histogram over
    [min, max] with `bins` cells; 0 for a degenerate layer."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("layer_entropy: empty layer")
    lo, hi = float(w.min()), float(w.max())
    if lo == hi:
        return 0.0
    counts, _ = np.histogram(w, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / w.size
    return float(-(p * np.log(p)).sum())


def graft_coefficient(h1: float, h2: float, amplitude: float = 0.4,
                      slope: float = 1.0) -> float:
    """alpha = clamp(A * arctan(c * (H2 - H1)) + 0.5, 0, 1)."""
    return float(np.clip(amplitude * math.atan(slope * (h2 - h1)) + 0.5, 0.0, 1.0))


def graft_networks(models: Sequence[Model], cfg: GraftConfig
                   ) -> tuple[list[Model], list[dict[str, float]]]:
    """Layerwise convex blending around the ring M1->M2->...->Mk->M1.

    Receiver weights become alpha*receiver + (1-alpha)*donor with alpha
    from the pre-round entropies; donor values are also the pre-round
    ones, so the result is a pure blend of the input states.  Returns the
    (mutated) models and one {layer: alpha} map per receiver.
    """
    models = list(models)
    if len(models) != cfg.num_networks:
        raise ValueError(f"expected {cfg.num_networks} models, got {len(models)}")
    names = models[0].parameter_names()
    for m in models[1:]:
        if m.parameter_names() != names:
            raise ValueError("graft_networks: architecture mismatch across models")
        for k in names:
            if m.params[k].shape != models[0].params[k].shape:
                raise ValueError(f"graft_networks: shape mismatch at layer {k}")

    before = [{k: m.params[k].data.copy() for k in names} for m in models]
    entropy = [{k: layer_entropy(w[k], cfg.bins) for k in names} for w in before]

    alphas: list[dict[str, float]] = [dict() for _ in models]
    k_models = len(models)
    for d in range(k_models):
        r = (d + 1) % k_models
        for layer in names:
            a = graft_coefficient(entropy[d][layer], entropy[r][layer],
                                  cfg.amplitude, cfg.slope)
            alphas[r][layer] = a
            models[r].params[layer].data = a * before[r][layer] + (1.0 - a) * before[d][layer]
    return models, alphas


# ---------------------------------------------------------------------------
# checkpoints (magic "ASCP": header JSON + little-endian float64 blobs)

CHECKPOINT_MAGIC = b"ASCP"
CHECKPOINT_VERSION = 1


def _gather_model_arrays(model: Model) -> dict[str, np.ndarray]:
    arrays = {k: v.data for k, v in model.params.items()}
    for k, s in model.bn_states.items():
        arrays[f"{k}.running_mean"] = s.mean
        arrays[f"{k}.running_var"] = s.var
    return arrays


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    names = sorted(arrays)
    header = {
        "meta": meta,
        "layers": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for layer in header["layers"]:
            shape = tuple(layer["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(8 * n)
            arrays[layer["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays


def network_config_to_dict(cfg: NetworkConfig) -> dict:
    return {
        "f_schedule": list(cfg.f_schedule), "time_steps": cfg.time_steps,
        "height": cfg.height, "width": cfg.width, "in_channels": cfg.in_channels,
        "pool_after": list(cfg.pool_after), "head_units": cfg.head_units,
        "dropout_rate": cfg.dropout_rate, "hist_bins": cfg.hist_bins,
        "sim_window": list(cfg.sim_window), "hist_embed_dim": cfg.hist_embed_dim,
        "cos_proj_dim": cfg.cos_proj_dim, "cos_embed_dim": cfg.cos_embed_dim,
    }


def network_config_from_dict(d: dict) -> NetworkConfig:
    d = dict(d)
    for key in ("f_schedule", "pool_after", "sim_window"):
        d[key] = tuple(d[key])
    return NetworkConfig(**d)


def save_model(path, model: Model) -> None:
    meta = {
        "kind": "model",
        "arch": model.arch.to_json_dict(),
        "network_config": network_config_to_dict(model.cfg),
    }
    save_checkpoint(path, _gather_model_arrays(model), meta)


def load_model(path) -> Model:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "model":
        raise ValueError(f"checkpoint holds a {meta.get('kind')!r}, not a model")
    arch = decode_arch(meta["arch"]["text"])
    cfg = network_config_from_dict(meta["network_config"])
    model = build_network(arch, cfg, np.random.default_rng(0))
    for k, p in model.params.items():
        if p.data.shape != arrays[k].shape:
            raise ValueError(f"checkpoint layer {k} has shape {arrays[k].shape}, "
                             f"model expects {p.data.shape}")
        p.data = arrays[k]
    for k, s in model.bn_states.items():
        s.mean = arrays[f"{k}.running_mean"]
        s.var = arrays[f"{k}.running_var"]
    return model


def save_supernet(path, supernet: SuperNet) -> None:
    arrays = {k: v.data for k, v in supernet.all_params().items()}
    for p in range(NUM_BLOCKS):
        for o, s in supernet.bn_states[p].items():
            arrays[f"pos{p}.opt{o}.bn.running_mean"] = s.mean
            arrays[f"pos{p}.opt{o}.bn.running_var"] = s.var
    meta = {
        "kind": "supernet",
        "network_config": network_config_to_dict(supernet.cfg),
        "space": {
            "block_options": [list(o) for o in supernet.space.block_options],
            "attention_options": list(supernet.space.attention_options),
        },
    }
    save_checkpoint(path, arrays, meta)


def load_supernet(path) -> SuperNet:
    meta, arrays = load_checkpoint(path)
    if meta.get("kind") != "supernet":
        raise ValueError(f"checkpoint holds a {meta.get('kind')!r}, not a supernet")
    cfg = network_config_from_dict(meta["network_config"])
    space = CodeSpace(tuple(tuple(o) for o in meta["space"]["block_options"]),
                      tuple(meta["space"]["attention_options"]))
    net = SuperNet(cfg, np.random.default_rng(0), space)
    for k, p in net.all_params().items():
        p.data = arrays[k]
    for p in range(NUM_BLOCKS):
        for o, s in net.bn_states[p].items():
            s.mean = arrays[f"pos{p}.opt{o}.bn.running_mean"]
            s.var = arrays[f"pos{p}.opt{o}.bn.running_var"]
    return net
