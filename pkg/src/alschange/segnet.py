"""Single- and dual-stream U-Net segmentation models.

Three encoder levels of double-conv blocks (conv3x3 -> batchnorm ->
relu, twice) with 2x2 max pooling, a double-conv bottleneck, and a
transpose-convolution decoder with skip concatenation.  Dual-stream
models run one encoder per input stream and concatenate both streams'
features at the bottleneck and at every skip connection.  The head is
a 1x1 convolution followed by a sigmoid, giving one building
probability per pixel.

The graph is hand-wired: forward records per-layer caches and
backward walks them in reverse.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor_nn as nn
from . import patches as patches_mod
from .errors import (BadConfig, BadMagic, ChecksumMismatch, EmptyDataset,
                     ShapeMismatch, SpecMismatch, VersionMismatch)
from .raster import NormStats

WEIGHTS_MAGIC = b"ALSW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    streams: int = 1
    in_channels: int = 3                     # per stream
    encoder_widths: tuple = (16, 32, 64)
    bottleneck_width: int = 128
    patch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.streams not in (1, 2):
            raise BadConfig("streams must be 1 or 2")
        if len(self.encoder_widths) != 3:
            raise BadConfig("exactly 3 encoder levels are required")
        if self.patch_size % 8 != 0:
            raise BadConfig("patch_size must be divisible by 8 (3 pooling levels)")


@dataclass
class Model:
    config: ModelConfig
    params: dict                  # name -> ndarray (learnable)
    bn_stats: dict                # name -> ndarray (running mean/var)
    norm_stats: list              # one NormStats per stream (may be empty pre-training)
    dtype: type = np.float32

    def copy(self) -> "Model":
        return Model(self.config,
                     {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.bn_stats.items()},
                     list(self.norm_stats), self.dtype)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_iou: float
    lr: float


# ---------------------------------------------------------------------------
# construction

def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _add_conv(params, rng, name, cin, cout, k, dtype):
    params[f"{name}.w"] = _he_uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
    params[f"{name}.b"] = np.zeros(cout, dtype=dtype)


def _add_bn(params, stats, name, c, dtype):
    params[f"{name}.gamma"] = np.ones(c, dtype=dtype)
    params[f"{name}.beta"] = np.zeros(c, dtype=dtype)
    stats[f"{name}.running_mean"] = np.zeros(c, dtype=dtype)
    stats[f"{name}.running_var"] = np.ones(c, dtype=dtype)


def _add_block(params, stats, rng, name, cin, cout, dtype):
    _add_conv(params, rng, f"{name}.conv1", cin, cout, 3, dtype)
    _add_bn(params, stats, f"{name}.bn1", cout, dtype)
    _add_conv(params, rng, f"{name}.conv2", cout, cout, 3, dtype)
    _add_bn(params, stats, f"{name}.bn2", cout, dtype)


def build_model(config: ModelConfig, dtype=np.float32) -> Model:
    """He-uniform conv kernels, zero biases, gamma=1, beta=0; seeded."""
    rng = np.random.default_rng(config.seed)
    params, stats = {}, {}
    w = config.encoder_widths
    for s in range(config.streams):
        cin = config.in_channels
        for i in range(3):
            _add_block(params, stats, rng, f"enc{i}.s{s}", cin, w[i], dtype)
            cin = w[i]
    _add_block(params, stats, rng, "bott",
               config.streams * w[2], config.bottleneck_width, dtype)
    cur = config.bottleneck_width
    for i in (2, 1, 0):
        params[f"dec{i}.up.w"] = _he_uniform(
            rng, (cur, w[i], 2, 2), cur * 4, dtype)
        _add_block(params, stats, rng, f"dec{i}.block",
                   w[i] + config.streams * w[i], w[i], dtype)
        cur = w[i]
    _add_conv(params, rng, "head", w[0], 1, 1, dtype)
    return Model(config, params, stats, [], dtype)


def expected_param_count(config: ModelConfig) -> int:
    """Closed-form learnable parameter count for the architecture."""
    w = config.encoder_widths

    def conv(cin, cout, k):
        return cout * cin * k * k + cout

    def block(cin, cout):
        return conv(cin, cout, 3) + conv(cout, cout, 3) + 4 * cout  # 2 convs + 2 bn

    total = 0
    for _ in range(config.streams):
        cin = config.in_channels
        for i in range(3):
            total += block(cin, w[i])
            cin = w[i]
    total += block(config.streams * w[2], config.bottleneck_width)
    cur = config.bottleneck_width
    for i in (2, 1, 0):
        total += cur * w[i] * 4                      # transpose kernel, no bias
        total += block(w[i] + config.streams * w[i], w[i])
        cur = w[i]
    total += conv(w[0], 1, 1)
    return total


# ---------------------------------------------------------------------------
# forward / backward

def _block_forward(model, name, x, mode, tape):
    p, s = model.params, model.bn_stats
    for j in (1, 2):
        y, cc = nn.conv2d_forward(x, p[f"{name}.conv{j}.w"], p[f"{name}.conv{j}.b"], pad=1)
        bn = f"{name}.bn{j}"
        y, cb, rm, rv = nn.batchnorm_forward(
            y, p[f"{bn}.gamma"], p[f"{bn}.beta"],
            s[f"{bn}.running_mean"], s[f"{bn}.running_var"], mode=mode)
        if mode == "train":
            s[f"{bn}.running_mean"], s[f"{bn}.running_var"] = rm, rv
        y, cr = nn.relu_forward(y)
        tape.append((name, j, cc, cb, cr))
        x = y
    return x


def _block_backward(model, grad, tape_entry, grads):
    name, j, cc, cb, cr = tape_entry
    grad = nn.relu_backward(grad, cr)
    grad, dg, db = nn.batchnorm_backward(grad, cb)
    bn = f"{name}.bn{j}"
    grads[f"{bn}.gamma"] = grads.get(f"{bn}.gamma", 0) + dg
    grads[f"{bn}.beta"] = grads.get(f"{bn}.beta", 0) + db
    grad, dw, dbias = nn.conv2d_backward(grad, cc)
    grads[f"{name}.conv{j}.w"] = grads.get(f"{name}.conv{j}.w", 0) + dw
    grads[f"{name}.conv{j}.b"] = grads.get(f"{name}.conv{j}.b", 0) + dbias
    return grad


def forward(model: Model, batch: np.ndarray, mode: str = "infer"):
    """batch: N x (streams*in_channels) x H x W -> (prob maps N x 1 x H x W, tape).

    H and W must be divisible by 8.
    """
    cfg = model.config
    n, c, h, w = batch.shape
    if c != cfg.streams * cfg.in_channels:
        raise ShapeMismatch(f"expected {cfg.streams * cfg.in_channels} channels, got {c}")
    if h % 8 or w % 8:
        raise ShapeMismatch("spatial size must be divisible by 8")
    batch = batch.astype(model.dtype, copy=False)

    tape = {"mode": mode, "blocks": {}, "pools": {}, "skips": {}}
    skips = {i: [] for i in range(3)}
    stream_outs = []
    for s in range(cfg.streams):
        x = batch[:, s * cfg.in_channels:(s + 1) * cfg.in_channels]
        for i in range(3):
            blk = []
            x = _block_forward(model, f"enc{i}.s{s}", x, mode, blk)
            tape["blocks"][f"enc{i}.s{s}"] = blk
            skips[i].append(x)
            x, cp = nn.maxpool2_forward(x)
            tape["pools"][(i, s)] = cp
        stream_outs.append(x)

    x = stream_outs[0] if cfg.streams == 1 else nn.concat_channels(*stream_outs)
    blk = []
    x = _block_forward(model, "bott", x, mode, blk)
    tape["blocks"]["bott"] = blk

    for i in (2, 1, 0):
        x, cu = nn.conv_transpose2d_forward(x, model.params[f"dec{i}.up.w"])
        tape[f"dec{i}.up"] = cu
        skip = skips[i][0] if cfg.streams == 1 else nn.concat_channels(*skips[i])
        tape["skips"][i] = skip.shape[1]
        x = nn.concat_channels(x, skip)
        blk = []
        x = _block_forward(model, f"dec{i}.block", x, mode, blk)
        tape["blocks"][f"dec{i}.block"] = blk

    x, cc = nn.conv2d_forward(x, model.params["head.w"], model.params["head.b"], pad=0)
    tape["head"] = cc
    prob, cs = nn.sigmoid_forward(x)
    tape["sigmoid"] = cs
    return prob, tape


def backward(model: Model, grad_prob: np.ndarray, tape) -> dict:
    """Gradients of the scalar loss w.r.t. every parameter (dict by name)."""
    cfg = model.config
    grads = {}
    grad = nn.sigmoid_backward(grad_prob, tape["sigmoid"])
    grad, dw, db = nn.conv2d_backward(grad, tape["head"])
    grads["head.w"], grads["head.b"] = dw, db

    skip_grads = {i: None for i in range(3)}
    up_width = {2: cfg.encoder_widths[2], 1: cfg.encoder_widths[1], 0: cfg.encoder_widths[0]}
    for i in (0, 1, 2):
        for entry in reversed(tape["blocks"][f"dec{i}.block"]):
            grad = _block_backward(model, grad, entry, grads)
        gup, gskip = nn.split_channels(grad, up_width[i])
        skip_grads[i] = gskip
        grad, dwu = nn.conv_transpose2d_backward(gup, tape[f"dec{i}.up"])
        grads[f"dec{i}.up.w"] = dwu

    for entry in reversed(tape["blocks"]["bott"]):
        grad = _block_backward(model, grad, entry, grads)

    if cfg.streams == 1:
        stream_grads = [grad]
    else:
        stream_grads = list(nn.split_channels(grad, grad.shape[1] // 2))

    for s in range(cfg.streams):
        g = stream_grads[s]
        for i in (2, 1, 0):
            g = nn.maxpool2_backward(g, tape["pools"][(i, s)])
            gs = skip_grads[i]
            if cfg.streams == 2:
                halves = nn.split_channels(gs, gs.shape[1] // 2)
                gs = halves[s]
            g = g + gs
            for entry in reversed(tape["blocks"][f"enc{i}.s{s}"]):
                g = _block_backward(model, g, entry, grads)
    return grads


# ---------------------------------------------------------------------------
# training

def _batch_iou(prob, target, threshold=0.5):
    pred = prob >= threshold
    t = target >= 0.5
    tp = np.count_nonzero(pred & t)
    fp = np.count_nonzero(pred & ~t)
    fn = np.count_nonzero(~pred & t)
    if tp + fp + fn == 0:
        return 1.0
    return tp / (tp + fp + fn)


def evaluate(model: Model, dataset, batch_size: int = 4):
    """(mean BCE loss, micro-averaged IOU) over a list of (data, mask)."""
    losses = []
    tp = fp = fn = 0
    for k in range(0, len(dataset), batch_size):
        chunk = dataset[k:k + batch_size]
        xb = np.stack([d for d, _ in chunk]).astype(model.dtype)
        yb = np.stack([m for _, m in chunk]).astype(model.dtype)[:, None]
        prob, _ = forward(model, xb, mode="infer")
        loss, _ = nn.bce_loss(prob, yb)
        losses.append(loss * len(chunk))
        pred = prob >= 0.5
        t = yb >= 0.5
        tp += np.count_nonzero(pred & t)
        fp += np.count_nonzero(pred & ~t)
        fn += np.count_nonzero(~pred & t)
    iou = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    return float(np.sum(losses) / len(dataset)), float(iou)


def train(model: Model, train_set, val_set, hyper: nn.Hyperparams, seed: int = 0,
          stop_iou: float | None = None, augment: bool = True, log=None):
    """Train with seeded shuffling/augmentation, Adam, and lr plateau decay.

    train_set/val_set: lists of (data CxHxW, mask HxW).  Returns
    (best model, history); "best" is the epoch with highest validation
    IOU.  With ``stop_iou`` set, training stops once validation IOU
    reaches it.
    """
    if hyper.epochs > 0 and (not train_set or not val_set):
        raise EmptyDataset("train and validation sets must be non-empty")
    model = model.copy()
    state = nn.AdamState()
    rng = np.random.default_rng(seed)
    lr = hyper.lr
    history = []
    best = (model.copy(), -1.0)
    best_val_loss = np.inf
    stale = 0

    for epoch in range(hyper.epochs):
        aug_rng = np.random.default_rng((seed, epoch))
        prepared = []
        for data, mask in train_set:
            size = data.shape[-1]
            p = patches_mod.Patch(data, mask, 0, 0, data.shape[-2], size)
            if augment:
                ops = patches_mod.sample_augments(
                    aug_rng, max_shift=max(1, size // 16),
                    crop_range=(size * 3 // 4, size))
                for op in ops:
                    p = patches_mod.augment(p, op)
            prepared.append((p.data, p.mask))

        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        for k in range(0, len(order), hyper.batch_size):
            sel = order[k:k + hyper.batch_size]
            xb = np.stack([prepared[i][0] for i in sel]).astype(model.dtype)
            yb = np.stack([prepared[i][1] for i in sel]).astype(model.dtype)[:, None]
            prob, tape = forward(model, xb, mode="train")
            loss, grad = nn.bce_loss(prob, yb)
            grads = backward(model, grad, tape)
            nn.adam_step(model.params, grads, state, hyper, lr=lr)
            epoch_loss += loss * len(sel)
        epoch_loss /= len(order)

        val_loss, val_iou = evaluate(model, val_set, hyper.batch_size)
        history.append(EpochStats(epoch + 1, epoch_loss, val_loss, val_iou, lr))
        if log is not None:
            log(history[-1])

        if val_iou > best[1]:
            best = (model.copy(), val_iou)
        if val_loss < best_val_loss - 1e-4:
            best_val_loss = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= hyper.plateau_patience:
                lr *= hyper.lr_decay
                stale = 0
        if stop_iou is not None and val_iou >= stop_iou:
            break

    out = best[0] if history else model
    out.norm_stats = list(model.norm_stats)
    return out, history


# ---------------------------------------------------------------------------
# weights file

def _header_text(model: Model) -> str:
    cfg = model.config
    lines = [
        f"streams={cfg.streams}",
        f"in_channels={cfg.in_channels}",
        f"encoder_widths={','.join(str(v) for v in cfg.encoder_widths)}",
        f"bottleneck_width={cfg.bottleneck_width}",
        f"patch_size={cfg.patch_size}",
        f"seed={cfg.seed}",
    ]
    for i, ns in enumerate(model.norm_stats):
        lines.append(f"norm{i}_min={','.join(repr(v) for v in ns.mins)}")
        lines.append(f"norm{i}_max={','.join(repr(v) for v in ns.maxs)}")
    return "\n".join(lines) + "\n"


def save_weights(model: Model, path) -> None:
    """Little-endian container: magic, version, header, tensors, CRC32."""
    header = _header_text(model).encode("utf-8")
    tensors = list(model.params.items()) + list(model.bn_stats.items())
    buf = bytearray()
    buf += WEIGHTS_MAGIC
    buf += struct.pack("<I", WEIGHTS_VERSION)
    buf += struct.pack("<I", len(header))
    buf += header
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_weights(path, dtype=np.float32) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != WEIGHTS_MAGIC:
        raise BadMagic(f"not a weights file: {data[:4]!r}")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != WEIGHTS_VERSION:
        raise VersionMismatch(f"weights version {version}, expected {WEIGHTS_VERSION}")
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumMismatch("weights file CRC check failed")

    hlen = struct.unpack_from("<I", data, 8)[0]
    header = data[12:12 + hlen].decode("utf-8")
    kv = {}
    for line in header.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k] = v
    config = ModelConfig(
        streams=int(kv["streams"]),
        in_channels=int(kv["in_channels"]),
        encoder_widths=tuple(int(v) for v in kv["encoder_widths"].split(",")),
        bottleneck_width=int(kv["bottleneck_width"]),
        patch_size=int(kv["patch_size"]),
        seed=int(kv["seed"]),
    )
    norm_stats = []
    for i in range(config.streams):
        if f"norm{i}_min" in kv:
            mins = tuple(float(v) for v in kv[f"norm{i}_min"].split(","))
            maxs = tuple(float(v) for v in kv[f"norm{i}_max"].split(","))
            norm_stats.append(NormStats(mins, maxs))

    off = 12 + hlen
    count = struct.unpack_from("<I", data, off)[0]
    off += 4
    tensors = {}
    for _ in range(count):
        nlen = struct.unpack_from("<H", data, off)[0]
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        rank = data[off]
        off += 1
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
        off += 4 * size
        tensors[name] = arr.astype(dtype)

    reference = build_model(config, dtype=dtype)
    for store in (reference.params, reference.bn_stats):
        for name, arr in store.items():
            if name not in tensors:
                raise ShapeMismatch(f"missing tensor {name}")
            if tensors[name].shape != arr.shape:
                raise ShapeMismatch(
                    f"tensor {name}: stored {tensors[name].shape}, expected {arr.shape}")
            store[name] = tensors[name]
    reference.norm_stats = norm_stats
    return reference


# ---------------------------------------------------------------------------
# full-raster inference

@dataclass
class SegMap:
    prob: np.ndarray     # H x W in (0,1)
    binary: np.ndarray   # H x W bool


def segment_raster(model: Model, inputs: np.ndarray, valid=None,
                   stride: int | None = None) -> SegMap:
    """Tile a full-size channel stack, run inference, stitch, threshold.

    inputs: (streams*in_channels) x H x W unit-range stack; ``valid``
    masks cells forced to background.
    """
    cfg = model.config
    if inputs.shape[0] != cfg.streams * cfg.in_channels:
        raise SpecMismatch(
            f"expected {cfg.streams * cfg.in_channels} input channels, got {inputs.shape[0]}")
    size = cfg.patch_size
    stride = size if stride is None else stride
    tiles = patches_mod.tile(inputs, None, size, stride)
    for p in tiles:
        prob, _ = forward(model, p.data[None], mode="infer")
        p.data = prob[0]
    full = patches_mod.stitch(tiles, inputs.shape[1:], channels=1)[0]
    binary = full >= 0.5
    if valid is not None:
        binary &= valid
        full = np.where(valid, full, 0.0)
    return SegMap(full, binary)
