"""Search blocks, the full detection network, and MAC counting.

Four factorized 3D-conv block families make up the search space.  With F
the block's base width and n_d dilated branches (branch i uses temporal
dilation 2**(i-1)):

  V2   per-branch 2D spatial conv (ceil(n_c/n_d) channels) feeding a
       dilated temporal conv (ceil(4F/n_d) channels); branch outputs are
       concatenated.
  V2A  one shared spatial conv of n_c channels feeds all temporal
       branches; concatenated as V2.
  V2B  a 4F-channel spatial conv and the concatenated temporal branches
       (sizes summing to exactly 4F, applied to the block input) are
       added elementwise.
  V2C  as V2B but the temporal branches read the spatial conv's output.

Every family ends in ReLU(BN(.)).  The network is 6 blocks with 2x
spatial average pooling after the scheduled positions, an optional stack
of temporal self-attention layers over flattened frame features, RGB
histogram and learnable cosine similarity features, a dense layer and
two per-frame logistic heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .arch import ArchCode, ArchError, BlockGene, BLOCK_GENE_TABLE, NUM_BLOCKS
from . import tensor as tz
from .tensor import BatchNormState, ShapeError, Tensor


@dataclass(frozen=True)
class NetworkConfig:
    """Input spec, channel schedule and head sizing for one network.

    The defaults reproduce the documented complexity reference: 48x27 RGB
    inputs over 100 frames, base widths doubling per stage pair, and a
    head input of 3*6*256 + 128 + 128 = 4,864 for architectures whose
    final block emits 4F channels.
    """

    f_schedule: tuple[int, ...] = (16, 16, 32, 32, 64, 64)
    time_steps: int = 100
    height: int = 27
    width: int = 48
    in_channels: int = 3
    pool_after: tuple[int, ...] = (2, 4, 6)  # 1-based block positions
    head_units: int = 1024
    dropout_rate: float = 0.5
    hist_bins: int = 8
    sim_window: tuple[int, ...] = (1, 2)
    hist_embed_dim: int = 128
    cos_proj_dim: int = 128
    cos_embed_dim: int = 128

    def __post_init__(self):
        if len(self.f_schedule) != NUM_BLOCKS:
            raise ArchError(f"f_schedule needs {NUM_BLOCKS} entries, got {len(self.f_schedule)}")
        if any(f <= 0 for f in self.f_schedule):
            raise ArchError(f"f_schedule entries must be positive: {self.f_schedule}")

    def sim_offsets(self) -> tuple[int, ...]:
        return tuple(sorted([-d for d in self.sim_window] + list(self.sim_window)))


def default_config() -> NetworkConfig:
    return NetworkConfig()


def desk_config(f_schedule=(4, 4, 8, 8, 16, 16), time_steps=60, height=14, width=24,
                head_units=64, hist_embed_dim=16, cos_proj_dim=16, cos_embed_dim=16,
                dropout_rate=0.5) -> NetworkConfig:
    """A small configuration that trains in minutes on one CPU core."""
    return NetworkConfig(f_schedule=f_schedule, time_steps=time_steps, height=height,
                         width=width, head_units=head_units, hist_embed_dim=hist_embed_dim,
                         cos_proj_dim=cos_proj_dim, cos_embed_dim=cos_embed_dim,
                         dropout_rate=dropout_rate)


# ---------------------------------------------------------------------------
# channel bookkeeping


def balanced_split(total: int, parts: int) -> list[int]:
    """Split `total` into `parts` near-equal positive sizes (ceil first)."""
    q, r = divmod(total, parts)
    sizes = [q + 1] * r + [q] * (parts - r)
    if any(s <= 0 for s in sizes):
        raise ArchError(f"cannot split {total} channels into {parts} branches")
    return sizes


def block_out_channels(gene: BlockGene, f_base: int) -> int:
    if gene.kind in ("V2", "V2A"):
        return gene.n_d * math.ceil(4 * f_base / gene.n_d)
    return 4 * f_base


def max_block_out_channels(f_base: int) -> int:
    return max(block_out_channels(g, f_base) for g in BLOCK_GENE_TABLE)


def position_in_channels(arch: ArchCode, cfg: NetworkConfig) -> list[int]:
    """Exact input channel count at each block position for a fixed arch."""
    chans = [cfg.in_channels]
    for p in range(NUM_BLOCKS - 1):
        chans.append(block_out_channels(arch.blocks[p], cfg.f_schedule[p]))
    return chans


def position_max_in_channels(cfg: NetworkConfig) -> list[int]:
    """Worst-case input channel count per position over all genes."""
    chans = [cfg.in_channels]
    for p in range(NUM_BLOCKS - 1):
        chans.append(max_block_out_channels(cfg.f_schedule[p]))
    return chans


@dataclass(frozen=True)
class ConvSpec:
    """One convolution inside a block: kernel taps, channel map, dilation."""

    taps: int  # 9 for spatial 3x3, 3 for temporal
    in_ch: int
    out_ch: int
    dilation: int = 1


def block_conv_specs(gene: BlockGene, in_ch: int, f_base: int) -> list[ConvSpec]:
    """The convolutions a block performs, in forward order."""
    specs: list[ConvSpec] = []
    four_f = 4 * f_base
    if gene.kind == "V2":
        cs = math.ceil(gene.nc_mult * f_base / gene.n_d)
        ct = math.ceil(four_f / gene.n_d)
        for i in range(gene.n_d):
            specs.append(ConvSpec(9, in_ch, cs))
            specs.append(ConvSpec(3, cs, ct, dilation=2 ** i))
    elif gene.kind == "V2A":
        nc = gene.nc_mult * f_base
        ct = math.ceil(four_f / gene.n_d)
        specs.append(ConvSpec(9, in_ch, nc))
        for i in range(gene.n_d):
            specs.append(ConvSpec(3, nc, ct, dilation=2 ** i))
    elif gene.kind == "V2B":
        specs.append(ConvSpec(9, in_ch, four_f))
        for i, ch in enumerate(balanced_split(four_f, gene.n_d)):
            specs.append(ConvSpec(3, in_ch, ch, dilation=2 ** i))
    elif gene.kind == "V2C":
        specs.append(ConvSpec(9, in_ch, four_f))
        for i, ch in enumerate(balanced_split(four_f, gene.n_d)):
            specs.append(ConvSpec(3, four_f, ch, dilation=2 ** i))
    else:  # pragma: no cover - BlockGene already validates
        raise ArchError(f"unknown block kind {gene.kind}")
    return specs


# ---------------------------------------------------------------------------
# block parameters and forward


def _he_conv2d(rng, cin, cout):
    return rng.normal(0.0, math.sqrt(2.0 / (9 * cin)), size=(3, 3, cin, cout))


def _he_conv1d(rng, cin, cout):
    return rng.normal(0.0, math.sqrt(2.0 / (3 * cin)), size=(3, cin, cout))


def init_block_params(gene: BlockGene, in_ch: int, f_base: int,
                      rng: np.random.Generator, prefix: str = "block"
                      ) -> tuple[dict[str, Tensor], BatchNormState]:
    """Fresh He-initialized parameters and a BN state for one block."""
    p: dict[str, Tensor] = {}

    def param(name, arr):
        p[name] = Tensor(arr, requires_grad=True, name=f"{prefix}.{name}")

    four_f = 4 * f_base
    if gene.kind == "V2":
        cs = math.ceil(gene.nc_mult * f_base / gene.n_d)
        ct = math.ceil(four_f / gene.n_d)
        for i in range(gene.n_d):
            param(f"branch{i}.spatial.w", _he_conv2d(rng, in_ch, cs))
            param(f"branch{i}.spatial.b", np.zeros(cs))
            param(f"branch{i}.temporal.w", _he_conv1d(rng, cs, ct))
            param(f"branch{i}.temporal.b", np.zeros(ct))
    elif gene.kind == "V2A":
        nc = gene.nc_mult * f_base
        ct = math.ceil(four_f / gene.n_d)
        param("spatial.w", _he_conv2d(rng, in_ch, nc))
        param("spatial.b", np.zeros(nc))
        for i in range(gene.n_d):
            param(f"branch{i}.temporal.w", _he_conv1d(rng, nc, ct))
            param(f"branch{i}.temporal.b", np.zeros(ct))
    else:
        param("spatial.w", _he_conv2d(rng, in_ch, four_f))
        param("spatial.b", np.zeros(four_f))
        t_in = in_ch if gene.kind == "V2B" else four_f
        for i, ch in enumerate(balanced_split(four_f, gene.n_d)):
            param(f"branch{i}.temporal.w", _he_conv1d(rng, t_in, ch))
            param(f"branch{i}.temporal.b", np.zeros(ch))
    out_ch = block_out_channels(gene, f_base)
    param("bn.gamma", np.ones(out_ch))
    param("bn.beta", np.zeros(out_ch))
    return p, BatchNormState(out_ch)


def block_forward(gene: BlockGene, x: Tensor, weights: Mapping[str, Tensor],
                  f_base: int, bn_state: BatchNormState, mode: str = "train") -> Tensor:
    """Run one search block.  Channel bookkeeping is validated by the ops."""
    if gene.kind == "V2":
        hs = []
        for i in range(gene.n_d):
            s = tz.conv2d_spatial(x, weights[f"branch{i}.spatial.w"],
                                  weights[f"branch{i}.spatial.b"])
            hs.append(tz.conv1d_temporal(s, weights[f"branch{i}.temporal.w"],
                                         weights[f"branch{i}.temporal.b"], 2 ** i))
        h = tz.concat_channels(hs)
    elif gene.kind == "V2A":
        s = tz.conv2d_spatial(x, weights["spatial.w"], weights["spatial.b"])
        hs = [tz.conv1d_temporal(s, weights[f"branch{i}.temporal.w"],
                                 weights[f"branch{i}.temporal.b"], 2 ** i)
              for i in range(gene.n_d)]
        h = tz.concat_channels(hs)
    elif gene.kind == "V2B":
        s = tz.conv2d_spatial(x, weights["spatial.w"], weights["spatial.b"])
        ts = [tz.conv1d_temporal(x, weights[f"branch{i}.temporal.w"],
                                 weights[f"branch{i}.temporal.b"], 2 ** i)
              for i in range(gene.n_d)]
        h = tz.add(s, tz.concat_channels(ts))
    else:  # V2C
        s = tz.conv2d_spatial(x, weights["spatial.w"], weights["spatial.b"])
        ts = [tz.conv1d_temporal(s, weights[f"branch{i}.temporal.w"],
                                 weights[f"branch{i}.temporal.b"], 2 ** i)
              for i in range(gene.n_d)]
        h = tz.add(s, tz.concat_channels(ts))
    return tz.relu(tz.batch_norm(h, weights["bn.gamma"], weights["bn.beta"],
                                 bn_state, mode=mode))


# ---------------------------------------------------------------------------
# similarity features


def rgb_histogram_similarity(frames: np.ndarray, bins: int = 8,
                             offsets: Sequence[int] = (-2, -1, 1, 2)) -> Tensor:
    """Histogram-intersection similarity of each frame to its neighbours.

    frames: [N,T,H,W,3] with values in [0,255].  A joint coarse histogram
    (bins^3 cells) is computed per frame and compared against the frames
    at t+delta (indices clamped at the edges).  Returns a constant
    Tensor [N,T,len(offsets)] with values in [0,1].
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 5 or frames.shape[-1] != 3:
        raise ShapeError(f"expected [N,T,H,W,3] frames, got {frames.shape}")
    N, T, H, W, _ = frames.shape
    cells = bins ** 3
    width = 256.0 / bins
    q = np.clip((frames // width).astype(np.int64), 0, bins - 1)
    flat = (q[..., 0] * bins + q[..., 1]) * bins + q[..., 2]
    hists = np.zeros((N, T, cells))
    for n in range(N):
        for t in range(T):
            hists[n, t] = np.bincount(flat[n, t].ravel(), minlength=cells)
    hists /= float(H * W)
    out = np.empty((N, T, len(offsets)))
    base = np.arange(T)
    for k, d in enumerate(offsets):
        idx = np.clip(base + d, 0, T - 1)
        out[:, :, k] = np.minimum(hists, hists[:, idx]).sum(axis=-1)
    return Tensor(out)


def time_shift(x: Tensor, delta: int) -> Tensor:
    """y[:, t] = x[:, clamp(t + delta)]; backward scatter-adds duplicates."""
    T = x.shape[1]
    idx = np.clip(np.arange(T) + delta, 0, T - 1)

    def bw(g):
        if not x.requires_grad:
            return
        gs = np.swapaxes(g, 0, 1)
        acc = np.zeros_like(np.swapaxes(x.data, 0, 1))
        np.add.at(acc, idx, gs)
        x._accum(np.swapaxes(acc, 0, 1))

    return Tensor(x.data[:, idx], _parents=(x,), _backward=bw)


def cosine_over_window(feat: Tensor, offsets: Sequence[int],
                       eps: float = 1e-12) -> Tensor:
    """Cosine similarity of each frame's feature to its neighbours.

    feat: [N,T,P]; returns [N,T,len(offsets)] in [-1,1].  Frames whose
    feature vector is zero yield similarity 0 (the eps floor in the
    denominator).
    """
    ss = tz.reduce_sum(tz.mul(feat, feat), axis=-1, keepdims=True)
    norm = tz.sqrt(tz.add_scalar(ss, eps))
    cols = []
    for d in offsets:
        other = time_shift(feat, d)
        dot = tz.reduce_sum(tz.mul(feat, other), axis=-1, keepdims=True)
        denom = tz.mul(norm, time_shift(norm, d))
        cols.append(tz.div(dot, tz.add_scalar(denom, eps)))
    return tz.concat_channels(cols)


def learnable_cosine_similarity(block_features: Sequence[Tensor], proj_w: Tensor,
                                proj_b: Tensor, offsets: Sequence[int]) -> Tensor:
    """Project concatenated per-block frame features, then window cosine.

    block_features: list of [N,T,C_b] tensors (spatially averaged block
    outputs).  Differentiable end to end.
    """
    stacked = tz.concat_channels(list(block_features))
    proj = tz.linear(stacked, proj_w, proj_b)
    return cosine_over_window(proj, offsets)


# ---------------------------------------------------------------------------
# network plan (single source of truth for shapes and MACs)


@dataclass(frozen=True)
class BlockPlan:
    gene: BlockGene
    f_base: int
    in_ch: int
    out_ch: int
    h: int
    w: int
    pool_after: bool
    convs: tuple[ConvSpec, ...]


@dataclass(frozen=True)
class NetworkPlan:
    arch: ArchCode
    cfg: NetworkConfig
    blocks: tuple[BlockPlan, ...]
    final_h: int
    final_w: int
    base_dim: int       # flattened per-frame feature entering attention
    head_in_dim: int    # base + similarity embeddings
    block_feature_dim: int  # sum of block output channels (cosine input)


def plan_network(arch: ArchCode, cfg: NetworkConfig) -> NetworkPlan:
    """Resolve all shapes; raises ArchError on inconsistent bookkeeping."""
    h, w = cfg.height, cfg.width
    in_ch = cfg.in_channels
    blocks = []
    for p in range(NUM_BLOCKS):
        gene = arch.blocks[p]
        f_base = cfg.f_schedule[p]
        convs = tuple(block_conv_specs(gene, in_ch, f_base))
        out_ch = block_out_channels(gene, f_base)
        pool = (p + 1) in cfg.pool_after
        blocks.append(BlockPlan(gene, f_base, in_ch, out_ch, h, w, pool, convs))
        if pool:
            h, w = h // 2, w // 2
            if h == 0 or w == 0:
                raise ArchError(
                    f"pooling after block {p + 1} empties the spatial grid "
                    f"for input {cfg.height}x{cfg.width}")
        in_ch = out_ch
    base_dim = h * w * in_ch
    head_in = base_dim + cfg.hist_embed_dim + cfg.cos_embed_dim
    return NetworkPlan(arch, cfg, tuple(blocks), h, w, base_dim, head_in,
                       sum(b.out_ch for b in blocks))


# ---------------------------------------------------------------------------
# complete model


class Model:
    """A standalone detection network for one fixed architecture."""

    def __init__(self, arch: ArchCode, cfg: NetworkConfig, rng: np.random.Generator):
        self.arch = arch
        self.cfg = cfg
        self.plan = plan_network(arch, cfg)
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, BatchNormState] = {}

        for p, bp in enumerate(self.plan.blocks):
            prefix = f"block{p + 1}"
            bparams, state = init_block_params(bp.gene, bp.in_ch, bp.f_base, rng, prefix)
            for k, v in bparams.items():
                self.params[f"{prefix}.{k}"] = v
            self.bn_states[f"{prefix}.bn"] = state

        for j in range(arch.attention_layers):
            ap = tz.init_attention_params(self.plan.base_dim, rng, prefix=f"attn{j}")
            for k, v in ap.items():
                self.params[f"attn{j}.{k}"] = v

        offsets = cfg.sim_offsets()
        self._add_linear("hist_embed", len(offsets), cfg.hist_embed_dim, rng)
        self._add_linear("cos_proj", self.plan.block_feature_dim, cfg.cos_proj_dim, rng)
        self._add_linear("cos_embed", len(offsets), cfg.cos_embed_dim, rng)
        self._add_linear("head", self.plan.head_in_dim, cfg.head_units, rng)
        self._add_linear("y_head", cfg.head_units, 1, rng)
        self._add_linear("z_head", cfg.head_units, 1, rng)

    def _add_linear(self, name: str, din: int, dout: int, rng: np.random.Generator):
        std = math.sqrt(2.0 / din)
        self.params[f"{name}.w"] = Tensor(rng.normal(0.0, std, size=(din, dout)),
                                          requires_grad=True, name=f"{name}.w")
        self.params[f"{name}.b"] = Tensor(np.zeros(dout), requires_grad=True,
                                          name=f"{name}.b")

    def _block_weights(self, p: int) -> dict[str, Tensor]:
        prefix = f"block{p + 1}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def forward(self, frames: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Run the network on raw frames with values in [0, 255].

        Returns per-frame transition probabilities (y_hat, z_hat), each of
        shape [N, T]: y_hat marks the single middle frame of a transition,
        z_hat marks all transition frames.
        """
        frames = np.asarray(frames, dtype=np.float64)
        mode = "train" if train else "eval"
        x = tz.scale(Tensor(frames), 1.0 / 255.0)
        block_feats = []
        for p, bp in enumerate(self.plan.blocks):
            x = block_forward(bp.gene, x, self._block_weights(p), bp.f_base,
                              self.bn_states[f"block{p + 1}.bn"], mode=mode)
            block_feats.append(tz.global_avg_spatial(x))
            if bp.pool_after:
                x = tz.avg_pool_spatial(x)

        N, T = x.shape[0], x.shape[1]
        base = tz.reshape(x, (N, T, self.plan.base_dim))
        for j in range(self.arch.attention_layers):
            base = tz.self_attention_layer(
                base, {k: self.params[f"attn{j}.{k}"]
                       for k in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")})

        offsets = self.cfg.sim_offsets()
        hist = rgb_histogram_similarity(frames, self.cfg.hist_bins, offsets)
        hist_e = tz.relu(tz.linear(hist, self.params["hist_embed.w"],
                                   self.params["hist_embed.b"]))
        cos = learnable_cosine_similarity(block_feats, self.params["cos_proj.w"],
                                          self.params["cos_proj.b"], offsets)
        cos_e = tz.relu(tz.linear(cos, self.params["cos_embed.w"],
                                  self.params["cos_embed.b"]))

        feat = tz.concat_channels([base, hist_e, cos_e])
        hid = tz.relu(tz.linear(feat, self.params["head.w"], self.params["head.b"]))
        hid = tz.dropout(hid, self.cfg.dropout_rate, rng, training=train)
        y = tz.sigmoid(tz.reshape(tz.linear(hid, self.params["y_head.w"],
                                            self.params["y_head.b"]), (N, T)))
        z = tz.sigmoid(tz.reshape(tz.linear(hid, self.params["z_head.w"],
                                            self.params["z_head.b"]), (N, T)))
        return y, z

    def parameter_names(self) -> list[str]:
        return sorted(self.params)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())


def build_network(arch: ArchCode, cfg: NetworkConfig,
                  rng: np.random.Generator | None = None) -> Model:
    """Construct a model; rejects inconsistent arch/config combinations."""
    return Model(arch, cfg, rng if rng is not None else np.random.default_rng(0))


# ---------------------------------------------------------------------------
# MAC counting


def conv_macs(spec: ConvSpec, t: int, h: int, w: int) -> int:
    return spec.taps * spec.in_ch * spec.out_ch * t * h * w


@dataclass
class FlopsReport:
    total_macs: int
    breakdown: dict[str, int]

    @property
    def gmacs(self) -> float:
        return self.total_macs / 1e9

    def to_json_dict(self) -> dict:
        return {"total_macs": self.total_macs, "gmacs": self.gmacs,
                "breakdown": dict(self.breakdown)}


def count_flops(arch: ArchCode, cfg: NetworkConfig | None = None) -> FlopsReport:
    """Multiply-accumulate count for one forward pass at the config's
    input spec (batch 1).  Counts conv, linear and attention matmuls;
    BN, ReLU and the raw histogram are excluded.
    """
    cfg = cfg if cfg is not None else default_config()
    plan = plan_network(arch, cfg)
    t = cfg.time_steps
    breakdown: dict[str, int] = {}
    for p, bp in enumerate(plan.blocks):
        breakdown[f"block{p + 1}"] = sum(conv_macs(c, t, bp.h, bp.w) for c in bp.convs)

    d = plan.base_dim
    attn = 0
    for _ in range(arch.attention_layers):
        attn += 4 * t * d * d  # q, k, v and output projections
        attn += 2 * t * t * d  # scores and context matmuls
    if attn:
        breakdown["attention"] = attn

    k = len(cfg.sim_offsets())
    sim = t * plan.block_feature_dim * cfg.cos_proj_dim
    sim += t * k * cfg.cos_embed_dim
    sim += t * k * cfg.hist_embed_dim
    breakdown["similarity"] = sim

    head = t * plan.head_in_dim * cfg.head_units
    head += 2 * t * cfg.head_units  # the two logistic heads
    breakdown["head"] = head

    return FlopsReport(sum(breakdown.values()), breakdown)
