"""The two classification branches, their fused training loop, and persistence.

A trajectory enters the model twice:

* as a rasterized feature image (see :mod:`trajmode.mapping`) consumed by a
  small residual CNN, and
* as a per-point delta sequence with period-injected timestamps (see
  :mod:`trajmode.stl`) consumed by a dilated causal TCN.

The branches are trained jointly on an accuracy-weighted sum of their
cross-entropy losses: the weights come from a softmax over the branches'
validation accuracies of the previous epoch, starting at 0.5/0.5.
Prediction fuses the branch probability vectors with the same weights.

Reproducibility: every random draw comes from one of five purpose-keyed
streams derived from the run seed (CNN init, TCN init, epoch shuffling,
dropout, train/validation split), so disabling one branch never perturbs
the draws of the other.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .data import Trajectory
from .errors import CheckpointError, ConfigError, DataError
from .mapping import ChannelStats, GridConfig, TrajectoryImage, build_image, normalize_channels
from .stl import InjectionConfig, StlConfig, inject_period

CHECKPOINT_MAGIC = b"ESTM"
CHECKPOINT_VERSION = 1

# purpose keys for the per-run random streams
_STREAM_CNN_INIT = 0
_STREAM_TCN_INIT = 1
_STREAM_SHUFFLE = 2
_STREAM_DROPOUT = 3
_STREAM_SPLIT = 4


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one purpose; streams never overlap."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


# ---------------------------------------------------------------------------
# branch configuration


@dataclass(frozen=True)
class CnnConfig:
    cells_x: int = 40
    cells_y: int = 40
    in_channels: int = 3
    blocks: int = 3
    channels: Tuple[int, ...] = (16, 32, 64)
    classes: int = 7

    def __post_init__(self):
        if self.blocks < 1 or len(self.channels) != self.blocks:
            raise ConfigError("cnn: need one channel count per block")
        if any(c < 1 for c in self.channels):
            raise ConfigError("cnn: channel counts must be positive")


@dataclass(frozen=True)
class TcnConfig:
    in_channels: int = 3
    hidden_units: int = 25
    kernel: int = 3
    dilation_base: int = 2
    levels: int = 4
    dropout: float = 0.05
    seq_len: int = 300
    classes: int = 7

    def __post_init__(self):
        if self.levels < 1 or self.hidden_units < 1 or self.kernel < 1:
            raise ConfigError("tcn: levels, hidden_units and kernel must be positive")
        if self.dilation_base < 1:
            raise ConfigError("tcn: dilation_base must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("tcn: dropout must be in [0, 1)")

    @property
    def dilations(self) -> Tuple[int, ...]:
        return tuple(self.dilation_base ** i for i in range(self.levels))


# ---------------------------------------------------------------------------
# branches


class CnnBranch:
    """Residual CNN over feature images: stem conv, `blocks` residual blocks
    (stride-2 downsampling and a 1x1 projection whenever the shape changes),
    global average pooling, dense head."""

    def __init__(self, cfg: CnnConfig, rng: Optional[np.random.Generator]):
        self.cfg = cfg
        self.params: List[ad.Parameter] = []

        def make(shape, fan_in, name):
            data = ad.he_uniform(shape, fan_in, rng) if rng is not None else np.zeros(shape, np.float32)
            p = ad.Parameter(data, name)
            self.params.append(p)
            return p

        def zeros(shape, name):
            p = ad.Parameter(np.zeros(shape, np.float32), name)
            self.params.append(p)
            return p

        c0 = cfg.channels[0]
        self.stem_w = make((c0, cfg.in_channels, 3, 3), cfg.in_channels * 9, "cnn.stem.w")
        self.stem_b = zeros((c0,), "cnn.stem.b")
        self.blocks = []
        c_in = c0
        for i, c_out in enumerate(cfg.channels):
            stride = 1 if i == 0 else 2
            blk = {
                "stride": stride,
                "w1": make((c_out, c_in, 3, 3), c_in * 9, f"cnn.block{i}.conv1.w"),
                "b1": zeros((c_out,), f"cnn.block{i}.conv1.b"),
                "w2": make((c_out, c_out, 3, 3), c_out * 9, f"cnn.block{i}.conv2.w"),
                "b2": zeros((c_out,), f"cnn.block{i}.conv2.b"),
            }
            if stride != 1 or c_in != c_out:
                blk["wp"] = make((c_out, c_in, 1, 1), c_in, f"cnn.block{i}.proj.w")
                blk["bp"] = zeros((c_out,), f"cnn.block{i}.proj.b")
            self.blocks.append(blk)
            c_in = c_out
        self.head_w = make((c_in, cfg.classes), c_in, "cnn.head.w")
        self.head_b = zeros((cfg.classes,), "cnn.head.b")

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        if x.data.ndim != 4 or x.data.shape[1:] != (self.cfg.in_channels, self.cfg.cells_x, self.cfg.cells_y):
            raise ConfigError(
                f"cnn input shape {x.data.shape} does not match configured "
                f"(N, {self.cfg.in_channels}, {self.cfg.cells_x}, {self.cfg.cells_y})"
            )
        h = ad.relu(ad.conv2d(x, self.stem_w, self.stem_b, stride=1, pad=1))
        for blk in self.blocks:
            main = ad.conv2d(h, blk["w1"], blk["b1"], stride=blk["stride"], pad=1)
            main = ad.conv2d(ad.relu(main), blk["w2"], blk["b2"], stride=1, pad=1)
            if "wp" in blk:
                short = ad.conv2d(h, blk["wp"], blk["bp"], stride=blk["stride"], pad=0)
            else:
                short = h
            h = ad.relu(ad.add(main, short))
        pooled = ad.global_avg_pool(h)
        return ad.dense(pooled, self.head_w, self.head_b)


class TcnBranch:
    """Temporal convolutional network: `levels` residual blocks of two
    dilated causal convolutions each (dilation b^i), relu + dropout after
    every conv, 1x1 shortcut where channel counts differ; the hidden state
    at the last true position feeds the dense head."""

    def __init__(self, cfg: TcnConfig, rng: Optional[np.random.Generator]):
        self.cfg = cfg
        self.params: List[ad.Parameter] = []

        def make(shape, fan_in, name):
            data = ad.he_uniform(shape, fan_in, rng) if rng is not None else np.zeros(shape, np.float32)
            p = ad.Parameter(data, name)
            self.params.append(p)
            return p

        def zeros(shape, name):
            p = ad.Parameter(np.zeros(shape, np.float32), name)
            self.params.append(p)
            return p

        h = cfg.hidden_units
        k = cfg.kernel
        self.blocks = []
        c_in = cfg.in_channels
        for i, d in enumerate(cfg.dilations):
            blk = {
                "dilation": d,
                "w1": make((h, c_in, k), c_in * k, f"tcn.block{i}.conv1.w"),
                "b1": zeros((h,), f"tcn.block{i}.conv1.b"),
                "w2": make((h, h, k), h * k, f"tcn.block{i}.conv2.w"),
                "b2": zeros((h,), f"tcn.block{i}.conv2.b"),
            }
            if c_in != h:
                blk["wp"] = make((h, c_in, 1), c_in, f"tcn.block{i}.proj.w")
                blk["bp"] = zeros((h,), f"tcn.block{i}.proj.b")
            self.blocks.append(blk)
            c_in = h
        self.head_w = make((h, cfg.classes), h, "tcn.head.w")
        self.head_b = zeros((cfg.classes,), "tcn.head.b")

    def forward(
        self,
        x: ad.Tensor,
        lengths: np.ndarray,
        training: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> ad.Tensor:
        if x.data.ndim != 3 or x.data.shape[1] != self.cfg.in_channels or x.data.shape[2] != self.cfg.seq_len:
            raise ConfigError(
                f"tcn input shape {x.data.shape} does not match configured "
                f"(N, {self.cfg.in_channels}, {self.cfg.seq_len})"
            )
        p = self.cfg.dropout
        h = x
        for blk in self.blocks:
            main = ad.conv1d_dilated_causal(h, blk["w1"], blk["b1"], dilation=blk["dilation"])
            main = ad.dropout(ad.relu(main), p, rng, training)
            main = ad.conv1d_dilated_causal(main, blk["w2"], blk["b2"], dilation=blk["dilation"])
            main = ad.dropout(ad.relu(main), p, rng, training)
            if "wp" in blk:
                short = ad.conv1d_dilated_causal(h, blk["wp"], blk["bp"], dilation=1)
            else:
                short = h
            h = ad.relu(ad.add(main, short))
        last = ad.gather_last(h, lengths)
        return ad.dense(last, self.head_w, self.head_b)

    def conv_plan(self) -> List[Tuple[int, int]]:
        """(kernel, dilation) of each causal conv on the main path, in order;
        used by receptive-field analysis."""
        plan = []
        for blk in self.blocks:
            plan.append((self.cfg.kernel, blk["dilation"]))
            plan.append((self.cfg.kernel, blk["dilation"]))
        return plan


# ---------------------------------------------------------------------------
# fusion


@dataclass(frozen=True)
class FusionState:
    r1: float = 0.0
    r2: float = 0.0
    alpha: float = 0.5
    beta: float = 0.5


def update_fusion(r1: float, r2: float) -> FusionState:
    """Softmax over the two branch accuracies; weights are constants in
    backward (no gradient flows into the accuracies)."""
    if not (0.0 <= r1 <= 1.0 and 0.0 <= r2 <= 1.0):
        raise DataError(f"accuracies must lie in [0,1], got {r1}, {r2}")
    m = max(r1, r2)
    e1 = math.exp(r1 - m)
    e2 = math.exp(r2 - m)
    alpha = e1 / (e1 + e2)
    return FusionState(r1=r1, r2=r2, alpha=alpha, beta=1.0 - alpha)


def combined_loss(
    cnn_logits: ad.Tensor,
    tcn_logits: ad.Tensor,
    labels: np.ndarray,
    fusion: FusionState,
    return_parts: bool = False,
):
    """alpha*CE(cnn) + beta*CE(tcn); the weights scale each branch's gradient."""
    lc, _ = ad.softmax_cross_entropy(cnn_logits, labels)
    lt, _ = ad.softmax_cross_entropy(tcn_logits, labels)
    total = ad.add(ad.scale(lc, fusion.alpha), ad.scale(lt, fusion.beta))
    if return_parts:
        return total, lc, lt
    return total


# ---------------------------------------------------------------------------
# feature preparation


@dataclass
class SeqStats:
    """Per-channel mean/std of the true (non-padding) sequence entries."""

    mean: Tuple[float, float, float]
    std: Tuple[float, float, float]


def prepare_tcn_input(traj: Trajectory, seq_len: int) -> Tuple[np.ndarray, int]:
    """Raw (3, seq_len) delta channels [dlon, dlat, dts] plus the true length.

    The first point's deltas are zero; long trajectories keep their first
    ``seq_len`` points, short ones are right-padded with zeros.
    """
    if not traj.points:
        raise DataError("cannot encode an empty trajectory")
    lat, lon, ts = traj.arrays()
    n = min(len(lat), seq_len)
    out = np.zeros((3, seq_len), dtype=np.float64)
    out[0, :n] = np.diff(lon[:n], prepend=lon[0])
    out[1, :n] = np.diff(lat[:n], prepend=lat[0])
    out[2, :n] = np.diff(ts[:n], prepend=ts[0])
    return out, n


@dataclass
class PreparedFeatures:
    images: List[TrajectoryImage]      # raw physical units
    seqs: np.ndarray                   # (N, 3, seq_len) float64, raw deltas
    lengths: np.ndarray                # (N,) int64


def prepare_features(
    trajs: Sequence[Trajectory],
    grid: GridConfig,
    stl_cfg: StlConfig,
    inject: InjectionConfig,
    seq_len: int,
) -> PreparedFeatures:
    """Shared preprocessing for training and prediction.

    Images are built from the raw trajectory; the sequence branch sees the
    period-injected timestamps.
    """
    images = []
    seqs = np.zeros((len(trajs), 3, seq_len), dtype=np.float64)
    lengths = np.zeros(len(trajs), dtype=np.int64)
    for i, t in enumerate(trajs):
        images.append(build_image(t, grid))
        adjusted = inject_period(t, stl_cfg, inject)
        seqs[i], lengths[i] = prepare_tcn_input(adjusted, seq_len)
    return PreparedFeatures(images=images, seqs=seqs, lengths=lengths)


def seq_statistics(seqs: np.ndarray, lengths: np.ndarray) -> SeqStats:
    """Population mean/std per channel over true entries only (padding excluded)."""
    total = int(lengths.sum())
    if total == 0:
        raise DataError("cannot compute sequence statistics from empty data")
    mask = np.arange(seqs.shape[2])[None, :] < lengths[:, None]     # (N, L)
    sums = np.zeros(3)
    sqs = np.zeros(3)
    for c in range(3):
        vals = seqs[:, c, :][mask]
        sums[c] = vals.sum(dtype=np.float64)
        sqs[c] = np.sum(vals * vals, dtype=np.float64)
    mean = sums / total
    var = np.maximum(sqs / total - mean * mean, 0.0)
    std = np.sqrt(var)
    std[std < 1e-12] = 1.0
    return SeqStats(mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std))


def standardize_seqs(seqs: np.ndarray, lengths: np.ndarray, stats: SeqStats) -> np.ndarray:
    """(x - mean)/std on true entries; padding stays exactly zero."""
    mean = np.asarray(stats.mean)[None, :, None]
    std = np.asarray(stats.std)[None, :, None]
    out = (seqs - mean) / std
    mask = np.arange(seqs.shape[2])[None, :] >= lengths[:, None]
    out[np.broadcast_to(mask[:, None, :], out.shape)] = 0.0
    return out.astype(np.float32)


def stack_images(images: Sequence[TrajectoryImage]) -> np.ndarray:
    """Normalized images to a channel-first float32 batch (N, 3, gx, gy)."""
    return np.stack([im.channels.transpose(2, 0, 1) for im in images]).astype(np.float32)


# ---------------------------------------------------------------------------
# the trained model


class ModeClassifier:
    """Trained branches plus everything needed to reproduce their inputs."""

    def __init__(
        self,
        pipeline: dict,
        classes: Sequence[str],
        branches: str,
        cnn: Optional[CnnBranch],
        tcn: Optional[TcnBranch],
        fusion: FusionState,
        image_stats: ChannelStats,
        seq_stats: SeqStats,
    ):
        if branches not in ("both", "cnn", "tcn"):
            raise ConfigError(f"unknown branches mode {branches!r}")
        self.pipeline = pipeline
        self.classes = list(classes)
        self.branches = branches
        self.cnn = cnn
        self.tcn = tcn
        self.fusion = fusion
        self.image_stats = image_stats
        self.seq_stats = seq_stats

    def parameters(self) -> List[ad.Parameter]:
        out: List[ad.Parameter] = []
        if self.cnn is not None:
            out.extend(self.cnn.params)
        if self.tcn is not None:
            out.extend(self.tcn.params)
        return out

    # -- inference ---------------------------------------------------------

    def _grid(self) -> GridConfig:
        g = self.pipeline["grid"]
        return GridConfig(g["cells_x"], g["cells_y"])

    def _stl(self) -> StlConfig:
        s = self.pipeline["stl"]
        return StlConfig(
            period=s["period"],
            inner_iterations=s["inner_iterations"],
            seasonal_loess_span=s["seasonal_loess_span"],
            trend_loess_span=s["trend_loess_span"],
            lowpass_loess_span=s["lowpass_loess_span"],
        )

    def predict_probs(self, trajs: Sequence[Trajectory], chunk: int = 256) -> np.ndarray:
        """Fused class probabilities, (N, K)."""
        feats = prepare_features(
            trajs, self._grid(), self._stl(), InjectionConfig(self.pipeline["inject_weight"]),
            self.pipeline["seq_len"],
        )
        images, _ = normalize_channels(feats.images, self.image_stats)
        x_img = stack_images(images)
        x_seq = standardize_seqs(feats.seqs, feats.lengths, self.seq_stats)
        return self._probs_from_arrays(x_img, x_seq, feats.lengths, chunk)

    def _probs_from_arrays(self, x_img, x_seq, lengths, chunk: int = 256) -> np.ndarray:
        n = x_img.shape[0]
        out = np.zeros((n, len(self.classes)), dtype=np.float64)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            out[lo:hi] = self._fused_chunk(x_img[lo:hi], x_seq[lo:hi], lengths[lo:hi])
        return out

    def _fused_chunk(self, x_img, x_seq, lengths) -> np.ndarray:
        probs = None
        if self.cnn is not None:
            logits = self.cnn.forward(ad.Tensor(x_img))
            pc = _softmax(logits.data)
            w = self.fusion.alpha if self.branches == "both" else 1.0
            probs = w * pc
        if self.tcn is not None:
            logits = self.tcn.forward(ad.Tensor(x_seq), lengths, training=False)
            pt = _softmax(logits.data)
            w = self.fusion.beta if self.branches == "both" else 1.0
            probs = w * pt if probs is None else probs + w * pt
        return probs

    def predict(self, trajs: Sequence[Trajectory]) -> List[str]:
        """Fused prediction; ties resolve to the smaller class index."""
        probs = self.predict_probs(trajs)
        return [self.classes[i] for i in np.argmax(probs, axis=1)]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_fused(cnn_probs: Optional[np.ndarray], tcn_probs: Optional[np.ndarray], fusion: FusionState) -> np.ndarray:
    """Label indices from branch probabilities: argmax of the weighted sum."""
    if cnn_probs is None and tcn_probs is None:
        raise DataError("need at least one branch's probabilities")
    if cnn_probs is None:
        mix = tcn_probs
    elif tcn_probs is None:
        mix = cnn_probs
    else:
        mix = fusion.alpha * cnn_probs + fusion.beta * tcn_probs
    return np.argmax(mix, axis=1)


# ---------------------------------------------------------------------------
# training


def stratified_split(labels: np.ndarray, frac: float, rng: np.random.Generator):
    """Per-class shuffled split; every class keeps at least one training
    sample, and classes with two or more samples contribute to validation."""
    train: List[int] = []
    val: List[int] = []
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        perm = idx[rng.permutation(len(idx))]
        k = max(1, int(frac * len(idx)))
        if k == len(idx) and len(idx) > 1:
            k -= 1
        train.extend(perm[:k].tolist())
        val.extend(perm[k:].tolist())
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(val, dtype=np.int64))


def _accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean(pred == truth)) if len(truth) else 0.0


def train(
    trajectories: Sequence[Trajectory],
    cfg,
    seed: Optional[int] = None,
    branches: str = "both",
    forced_alpha: Optional[float] = None,
) -> Tuple[ModeClassifier, List[dict]]:
    """Train on labeled trajectories; returns the model and a per-epoch log.

    ``cfg`` is a :class:`trajmode.config.PipelineConfig`.  ``branches``
    restricts training to one branch ("cnn"/"tcn"); ``forced_alpha`` pins
    the fusion weight instead of updating it from validation accuracies.
    """
    if branches not in ("both", "cnn", "tcn"):
        raise ConfigError(f"unknown branches mode {branches!r}")
    if any(t.mode is None for t in trajectories):
        raise DataError("training requires every trajectory to be labeled")
    if len(trajectories) < 2:
        raise DataError("training requires at least two trajectories")
    labels = np.array([t.mode.index for t in trajectories], dtype=np.int64)
    if len(set(labels.tolist())) < 2:
        raise DataError("training requires at least two classes present")
    seed = cfg.seed if seed is None else seed
    classes = list(cfg.classes)
    # The stored pipeline describes how to reproduce THIS model: the seed it
    # actually trained with, minus run-orchestration keys that do not affect
    # the parameters.
    pipeline = cfg.to_dict()
    pipeline.pop("partition_file", None)
    pipeline.pop("parallel", None)
    pipeline["seed"] = seed

    feats = prepare_features(trajectories, cfg.grid, cfg.stl, InjectionConfig(cfg.inject_weight), cfg.seq_len)

    train_idx, val_idx = stratified_split(labels, cfg.split, rng_stream(seed, _STREAM_SPLIT))
    if len(val_idx) == 0:
        raise DataError("validation fold is empty; need at least one class with two samples")

    train_images = [feats.images[i] for i in train_idx]
    norm_train, image_stats = normalize_channels(train_images)
    seq_stats = seq_statistics(feats.seqs[train_idx], feats.lengths[train_idx])

    all_norm, _ = normalize_channels(feats.images, image_stats)
    x_img = stack_images(all_norm)
    x_seq = standardize_seqs(feats.seqs, feats.lengths, seq_stats)
    lengths = feats.lengths

    use_cnn = branches in ("both", "cnn")
    use_tcn = branches in ("both", "tcn")
    cnn = None
    tcn = None
    if use_cnn:
        cnn_cfg = CnnConfig(
            cells_x=cfg.grid.cells_x, cells_y=cfg.grid.cells_y, in_channels=3,
            blocks=cfg.cnn_blocks, channels=tuple(cfg.cnn_channels), classes=len(classes),
        )
        cnn = CnnBranch(cnn_cfg, rng_stream(seed, _STREAM_CNN_INIT))
    if use_tcn:
        tcn_cfg = TcnConfig(
            in_channels=3, hidden_units=cfg.tcn_hidden_units, kernel=cfg.tcn_kernel,
            dilation_base=cfg.tcn_dilation_base, levels=cfg.tcn_levels,
            dropout=cfg.tcn_dropout, seq_len=cfg.seq_len, classes=len(classes),
        )
        tcn = TcnBranch(tcn_cfg, rng_stream(seed, _STREAM_TCN_INIT))

    params: List[ad.Parameter] = (cnn.params if cnn else []) + (tcn.params if tcn else [])
    opt = ad.AdamState(lr=cfg.lr)
    rng_shuffle = rng_stream(seed, _STREAM_SHUFFLE)
    rng_dropout = rng_stream(seed, _STREAM_DROPOUT)

    if forced_alpha is not None:
        if branches != "both":
            raise ConfigError("forced_alpha only applies when both branches train")
        fusion = FusionState(r1=0.0, r2=0.0, alpha=float(forced_alpha), beta=1.0 - float(forced_alpha))
    else:
        fusion = FusionState()

    y_train = labels[train_idx]
    y_val = labels[val_idx]
    n_train = len(train_idx)
    bs = cfg.batch_size
    log: List[dict] = []

    for epoch in range(1, cfg.epochs + 1):
        perm = rng_shuffle.permutation(n_train)
        tot = tot_c = tot_t = 0.0
        for lo in range(0, n_train, bs):
            sel = train_idx[perm[lo : lo + bs]]
            yb = labels[sel]
            k = len(sel)
            if use_cnn and use_tcn:
                lc_logits = cnn.forward(ad.Tensor(x_img[sel]))
                lt_logits = tcn.forward(ad.Tensor(x_seq[sel]), lengths[sel], training=True, rng=rng_dropout)
                loss, lc, lt = combined_loss(lc_logits, lt_logits, yb, fusion, return_parts=True)
                tot_c += float(lc.data) * k
                tot_t += float(lt.data) * k
            elif use_cnn:
                logits = cnn.forward(ad.Tensor(x_img[sel]))
                loss, _ = ad.softmax_cross_entropy(logits, yb)
                tot_c += float(loss.data) * k
            else:
                logits = tcn.forward(ad.Tensor(x_seq[sel]), lengths[sel], training=True, rng=rng_dropout)
                loss, _ = ad.softmax_cross_entropy(logits, yb)
                tot_t += float(loss.data) * k
            loss.backward()
            ad.adam_step(params, [p.grad for p in params], opt)
            tot += float(loss.data) * k

        r1 = r2 = None
        if use_cnn:
            pred = _eval_argmax(lambda s: cnn.forward(ad.Tensor(x_img[s])), val_idx, bs)
            r1 = _accuracy(pred, y_val)
        if use_tcn:
            pred = _eval_argmax(lambda s: tcn.forward(ad.Tensor(x_seq[s]), lengths[s], training=False), val_idx, bs)
            r2 = _accuracy(pred, y_val)
        log.append({
            "epoch": epoch,
            "loss": tot / n_train,
            "cnn_loss": tot_c / n_train if use_cnn else None,
            "tcn_loss": tot_t / n_train if use_tcn else None,
            "r1": r1,
            "r2": r2,
            "alpha": fusion.alpha,
            "beta": fusion.beta,
        })
        if branches == "both" and forced_alpha is None:
            fusion = update_fusion(r1, r2)

    model = ModeClassifier(
        pipeline=pipeline, classes=classes, branches=branches, cnn=cnn, tcn=tcn,
        fusion=fusion, image_stats=image_stats, seq_stats=seq_stats,
    )
    return model, log


def _eval_argmax(forward, idx: np.ndarray, bs: int) -> np.ndarray:
    preds = []
    for lo in range(0, len(idx), bs):
        sel = idx[lo : lo + bs]
        logits = forward(sel)
        preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# checkpoints


def _config_blob(model: ModeClassifier) -> dict:
    return {
        "pipeline": model.pipeline,
        "classes": model.classes,
        "branches": model.branches,
        "fusion": {
            "r1": model.fusion.r1, "r2": model.fusion.r2,
            "alpha": model.fusion.alpha, "beta": model.fusion.beta,
        },
        "image_stats": {"cmin": list(model.image_stats.cmin), "cmax": list(model.image_stats.cmax)},
        "seq_stats": {"mean": list(model.seq_stats.mean), "std": list(model.seq_stats.std)},
    }


def save_checkpoint(model: ModeClassifier, path) -> None:
    """Binary checkpoint: magic, version, JSON config blob, then the named
    parameter tensors sorted by name as little-endian float32."""
    blob = json.dumps(_config_blob(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    params = sorted(model.parameters(), key=lambda p: p.name)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", p.data.ndim))
            for dim in p.data.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> ModeClassifier:
    """Rebuild a model from a checkpoint; bitwise-exact parameters."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError("bad magic: not a model checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            blob = json.loads(_read_exact(fh, blob_len, "config").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"bad config blob: {e}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            size = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 4 * size, f"tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")

    for key in ("pipeline", "classes", "branches", "fusion", "image_stats", "seq_stats"):
        if key not in blob:
            raise CheckpointError(f"config blob missing {key!r}")
    pipeline = blob["pipeline"]
    classes = blob["classes"]
    branches = blob["branches"]
    fusion = FusionState(**blob["fusion"])
    image_stats = ChannelStats(tuple(blob["image_stats"]["cmin"]), tuple(blob["image_stats"]["cmax"]))
    seq_stats = SeqStats(tuple(blob["seq_stats"]["mean"]), tuple(blob["seq_stats"]["std"]))

    cnn = None
    tcn = None
    if branches in ("both", "cnn"):
        cnn_cfg = CnnConfig(
            cells_x=pipeline["grid"]["cells_x"], cells_y=pipeline["grid"]["cells_y"], in_channels=3,
            blocks=pipeline["cnn"]["blocks"], channels=tuple(pipeline["cnn"]["channels"]),
            classes=len(classes),
        )
        cnn = CnnBranch(cnn_cfg, rng=None)
    if branches in ("both", "tcn"):
        tcn_cfg = TcnConfig(
            in_channels=3, hidden_units=pipeline["tcn"]["hidden_units"], kernel=pipeline["tcn"]["kernel"],
            dilation_base=pipeline["tcn"]["dilation_base"], levels=pipeline["tcn"]["levels"],
            dropout=pipeline["tcn"]["dropout"], seq_len=pipeline["seq_len"], classes=len(classes),
        )
        tcn = TcnBranch(tcn_cfg, rng=None)

    model = ModeClassifier(
        pipeline=pipeline, classes=classes, branches=branches, cnn=cnn, tcn=tcn,
        fusion=fusion, image_stats=image_stats, seq_stats=seq_stats,
    )
    expected = {p.name: p for p in model.parameters()}
    if set(expected) != set(tensors):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise CheckpointError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, p in expected.items():
        if tensors[name].shape != p.data.shape:
            raise CheckpointError(
                f"parameter {name} shape {tensors[name].shape} != expected {p.data.shape}"
            )
        p.data = np.ascontiguousarray(tensors[name], dtype=np.float32)
    return model
