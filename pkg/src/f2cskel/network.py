"""Fine-to-coarse slice-fusion network: forward, backward, params, shapes.

A skeleton image is cut into ``m x n`` slices (m temporal bands x n body-part
bands). Three fusion stages each mosaic pairs of slices 2x2 - consecutive
temporal segments stacked vertically, a spatial pair side by side - and push
every fused slice through its own two conv3/ReLU/maxpool rounds (no weight
sharing anywhere). The spatial pairing hierarchy is fixed: each limb joins
the torso, then arm-group joins arm-group and leg-group joins leg-group,
then upper joins lower. Four input streams (WB/BP x position/velocity) run
independent parameter sets; their flattened features concatenate into a
two-layer softmax classifier head.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import configfile
from .encoding import STREAMS, SkeletonImage
from .errors import ConfigError, FormatError
from .layers import (
    conv3_backward,
    conv3_forward,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    softmax,
)
from .runio import atomic_write_bytes

BODY_PART_BANDS = 5

# Spatial pairing per fusion stage, as (left, right) indices into the
# previous stage's spatial axis. Stage 1 starts from the five body-part
# bands ordered left arm, right arm, torso, left leg, right leg.
SPATIAL_PAIRS = {
    1: ((0, 2), (1, 2), (3, 2), (4, 2)),
    2: ((0, 1), (2, 3)),
    3: ((0, 1),),
}

CHECKPOINT_MAGIC = b"F2CP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Geometry and capacity of one network instance."""

    name: str
    temporal_segments: int
    image_h: int
    image_w: int
    filters: tuple[int, int, int]
    head_hidden: int
    in_channels: int = 3

    def __post_init__(self):
        m = self.temporal_segments
        if m < 3:
            raise ConfigError(
                f"temporal_segments={m} breaks the three-stage pairing chain: each fusion "
                "stage pairs consecutive segments (k -> k-1), so at least 3 segments are "
                "needed to reach stage 3 (a lone final segment pairs with itself)"
            )
        if self.image_h % m != 0:
            raise ConfigError(f"image height {self.image_h} not divisible by m={m}")
        if self.image_w < BODY_PART_BANDS:
            raise ConfigError(f"image width {self.image_w} too small for {BODY_PART_BANDS} bands")
        if len(self.filters) != 3 or any(f < 1 for f in self.filters):
            raise ConfigError(f"filters must be three positive counts, got {self.filters}")
        if self.head_hidden < 1:
            raise ConfigError("head_hidden must be positive")
        self.ledger()  # raises if any pooled dimension collapses

    @property
    def slice_h(self) -> int:
        return self.image_h // self.temporal_segments

    @property
    def slice_w(self) -> int:
        return self.image_w // BODY_PART_BANDS

    @property
    def used_w(self) -> int:
        """Columns actually consumed; the rightmost remainder is cropped."""
        return self.slice_w * BODY_PART_BANDS

    def temporal_counts(self) -> tuple[int, int, int, int]:
        """Temporal slice counts at stage 0 and after each fusion stage."""
        counts = [self.temporal_segments]
        for _ in range(3):
            counts.append(counts[-1] - 1 if counts[-1] >= 2 else 1)
        return tuple(counts)

    def spatial_counts(self) -> tuple[int, int, int, int]:
        return (BODY_PART_BANDS, 4, 2, 1)

    def ledger(self) -> list[tuple[str, int, tuple[int, ...]]]:
        """Slice counts and dims at every point of the cascade.

        Raises ConfigError when a maxpool would shrink a dimension below 1.
        """
        t_counts = self.temporal_counts()
        s_counts = self.spatial_counts()
        rows: list[tuple[str, int, tuple[int, ...]]] = [
            ("input", 1, (self.in_channels, self.image_h, self.image_w)),
            ("stage0", t_counts[0] * s_counts[0], (self.in_channels, self.slice_h, self.slice_w)),
        ]
        c, h, w = self.in_channels, self.slice_h, self.slice_w
        for stage in (1, 2, 3):
            h, w = 2 * h, 2 * w
            count = t_counts[stage] * s_counts[stage]
            rows.append((f"stage{stage}_fused", count, (c, h, w)))
            c = self.filters[stage - 1]
            for _ in range(2):  # two conv+pool rounds per block
                if h < 2 or w < 2:
                    raise ConfigError(
                        f"stage {stage}: cannot maxpool a {h}x{w} slice; "
                        "shrink filters/stages or enlarge the input image"
                    )
                h, w = h // 2, w // 2
            rows.append((f"stage{stage}_conv", count, (c, h, w)))
        rows.append(("flatten", t_counts[3] * s_counts[3], (c * h * w,)))
        return rows

    def stream_feature_dim(self) -> int:
        name, count, dims = self.ledger()[-1]
        return count * dims[0]


def temporal_pairs(count: int) -> tuple[tuple[int, int], ...]:
    """Consecutive overlapping pairs; a lone segment pairs with itself."""
    if count >= 2:
        return tuple((t, t + 1) for t in range(count - 1))
    return ((0, 0),)


# --------------------------------------------------------------------------
# Arch config files


def arch_to_config(arch: ArchConfig) -> dict[str, str]:
    return {
        "schema": "arch",
        "schema_version": "1",
        "name": arch.name,
        "temporal_segments": str(arch.temporal_segments),
        "image_h": str(arch.image_h),
        "image_w": str(arch.image_w),
        "filters": ",".join(str(f) for f in arch.filters),
        "head_hidden": str(arch.head_hidden),
        "in_channels": str(arch.in_channels),
        "crop_columns": "right",
    }


def arch_from_config(cfg: dict[str, str], source: str = "<config>") -> ArchConfig:
    if cfg.get("crop_columns", "right") != "right":
        raise ConfigError(f"{source}: only crop_columns = right is supported")
    return ArchConfig(
        name=cfg.get("name", "custom"),
        temporal_segments=configfile.get_int(cfg, "temporal_segments", source),
        image_h=configfile.get_int(cfg, "image_h", source),
        image_w=configfile.get_int(cfg, "image_w", source),
        filters=tuple(configfile.get_int_list(cfg, "filters", source)),
        head_hidden=configfile.get_int(cfg, "head_hidden", source),
        in_channels=configfile.get_int(cfg, "in_channels", source),
    )


def load_arch_config(path: str | Path) -> ArchConfig:
    cfg = configfile.load_config(path, schema="arch", version=1)
    return arch_from_config(cfg, source=str(path))


def arch_digest(arch: ArchConfig) -> str:
    return configfile.config_digest(arch_to_config(arch))


def _load_bundled_arch(name: str) -> ArchConfig:
    with resources.as_file(resources.files("f2cskel").joinpath("data", name)) as path:
        return load_arch_config(path)


def default_arch() -> ArchConfig:
    return _load_bundled_arch("arch_default.cfg")


def mini_arch() -> ArchConfig:
    """Desk-scale architecture used by the verification harnesses."""
    return _load_bundled_arch("arch_mini.cfg")


def named_arch(name: str) -> ArchConfig:
    if name == "default":
        return default_arch()
    if name == "mini":
        return mini_arch()
    raise ConfigError(f"unknown architecture {name!r} (expected default or mini)")


# --------------------------------------------------------------------------
# Slice partition and fusion


def partition_slices(x: np.ndarray, arch: ArchConfig) -> list[list[np.ndarray]]:
    """Cut (N, C, H, W) into an m x n grid of (N, C, slice_h, slice_w) slices.

    Rows split into m temporal bands; columns are cropped on the right to a
    multiple of the band width, then split into n body-part bands.
    """
    n, c, h, w = x.shape
    if h != arch.image_h or w != arch.image_w or c != arch.in_channels:
        raise ValueError(
            f"input {c}x{h}x{w} does not match arch {arch.in_channels}x{arch.image_h}x{arch.image_w}"
        )
    sh, sw = arch.slice_h, arch.slice_w
    grid = []
    for t in range(arch.temporal_segments):
        row = []
        for s in range(BODY_PART_BANDS):
            row.append(x[:, :, t * sh:(t + 1) * sh, s * sw:(s + 1) * sw])
        grid.append(row)
    return grid


def partition_backward(dgrid: list[list[np.ndarray]], arch: ArchConfig, like: np.ndarray):
    """Scatter slice gradients back into image coordinates; cropped columns get zero."""
    dx = np.zeros_like(like)
    sh, sw = arch.slice_h, arch.slice_w
    for t, row in enumerate(dgrid):
        for s, d in enumerate(row):
            dx[:, :, t * sh:(t + 1) * sh, s * sw:(s + 1) * sw] = d
    return dx


def fuse(grid: list[list[np.ndarray]], stage: int) -> list[list[np.ndarray]]:
    """One fusion step: 2x2 mosaics of (temporal pair) x (spatial pair).

    Output slice (t, s) is [[A_t, B_t], [A_t+1, B_t+1]] with (A, B) the
    stage's spatial pair; channel count is unchanged, height and width double.
    """
    if stage not in SPATIAL_PAIRS:
        raise ValueError(f"stage must be 1..3, got {stage}")
    pairs_s = SPATIAL_PAIRS[stage]
    needed = max(i for pair in pairs_s for i in pair) + 1
    if any(len(row) < needed for row in grid):
        raise ValueError(f"stage {stage} needs {needed} spatial slices per temporal row")
    out = []
    for ta, tb in temporal_pairs(len(grid)):
        row = []
        for sa, sb in pairs_s:
            top = np.concatenate([grid[ta][sa], grid[ta][sb]], axis=3)
            bottom = np.concatenate([grid[tb][sa], grid[tb][sb]], axis=3)
            row.append(np.concatenate([top, bottom], axis=2))
        out.append(row)
    return out


def fuse_backward(
    dout: list[list[np.ndarray]], stage: int, in_grid_shape: tuple[int, int],
    slice_shape: tuple[int, ...], dtype,
) -> list[list[np.ndarray]]:
    """Un-mosaic gradients, accumulating where a slice fed several mosaics."""
    k_t, k_s = in_grid_shape
    din = [[np.zeros(slice_shape, dtype=dtype) for _ in range(k_s)] for _ in range(k_t)]
    h, w = slice_shape[2], slice_shape[3]
    for ti, (ta, tb) in enumerate(temporal_pairs(k_t)):
        for si, (sa, sb) in enumerate(SPATIAL_PAIRS[stage]):
            d = dout[ti][si]
            din[ta][sa] += d[:, :, :h, :w]
            din[ta][sb] += d[:, :, :h, w:]
            din[tb][sa] += d[:, :, h:, :w]
            din[tb][sb] += d[:, :, h:, w:]
    return din


# --------------------------------------------------------------------------
# Parameters


def param_spec(arch: ArchConfig, num_classes: int) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every tensor, in the canonical order."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    specs: list[tuple[str, tuple[int, ...], int]] = []
    t_counts = arch.temporal_counts()
    s_counts = arch.spatial_counts()
    for stream in STREAMS:
        c_in = arch.in_channels
        for stage in (1, 2, 3):
            f = arch.filters[stage - 1]
            for t in range(t_counts[stage]):
                for s in range(s_counts[stage]):
                    prefix = f"{stream}/s{stage}/t{t}s{s}"
                    specs.append((f"{prefix}/conv1/w", (f, c_in, 3, 3), c_in * 9))
                    specs.append((f"{prefix}/conv1/b", (f,), 0))
                    specs.append((f"{prefix}/conv2/w", (f, f, 3, 3), f * 9))
                    specs.append((f"{prefix}/conv2/b", (f,), 0))
            c_in = f
    d_in = len(STREAMS) * arch.stream_feature_dim()
    specs.append(("head/fc1/w", (d_in, arch.head_hidden), d_in))
    specs.append(("head/fc1/b", (arch.head_hidden,), 0))
    specs.append(("head/fc2/w", (arch.head_hidden, num_classes), arch.head_hidden))
    specs.append(("head/fc2/b", (num_classes,), 0))
    return specs


def init_params(
    seed: int, arch: ArchConfig, num_classes: int, dtype=np.float64
) -> dict[str, np.ndarray]:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, per-seed deterministic."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape, fan_in in param_spec(arch, num_classes):
        if name.endswith("/b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def param_count_table(arch: ArchConfig, num_classes: int) -> list[tuple[str, int]]:
    """Scalar counts per network section, computed from shapes only."""
    groups: dict[str, int] = {}
    for name, shape, _ in param_spec(arch, num_classes):
        if name.startswith("head/"):
            key = "head"
        else:
            stream, stage = name.split("/")[:2]
            key = f"{stream}/{stage}"
        size = 1
        for d in shape:
            size *= d
        groups[key] = groups.get(key, 0) + size
    rows = sorted(groups.items())
    rows.append(("total", sum(groups.values())))
    return rows


# --------------------------------------------------------------------------
# Forward / backward


def _block_forward(x, params, prefix, train):
    y, c1 = conv3_forward(x, params[f"{prefix}/conv1/w"], params[f"{prefix}/conv1/b"])
    y, m1 = relu_forward(y)
    y, p1 = maxpool2_forward(y)
    y, c2 = conv3_forward(y, params[f"{prefix}/conv2/w"], params[f"{prefix}/conv2/b"])
    y, m2 = relu_forward(y)
    y, p2 = maxpool2_forward(y)
    return y, ((c1, m1, p1, c2, m2, p2) if train else None)


def _block_backward(dy, cache, grads, prefix):
    c1, m1, p1, c2, m2, p2 = cache
    dy = maxpool2_backward(dy, p2)
    dy = relu_backward(dy, m2)
    dy, grads[f"{prefix}/conv2/w"], grads[f"{prefix}/conv2/b"] = conv3_backward(dy, c2)
    dy = maxpool2_backward(dy, p1)
    dy = relu_backward(dy, m1)
    dy, grads[f"{prefix}/conv1/w"], grads[f"{prefix}/conv1/b"] = conv3_backward(dy, c1)
    return dy


def conv_block_forward(x: np.ndarray, params: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    """Public single-slice block: conv3/ReLU/pool twice, per-slice parameters."""
    y, _ = _block_forward(x, params, prefix, train=False)
    return y


def stream_forward(x: np.ndarray, params, stream: str, arch: ArchConfig, train: bool = False):
    """(N, C, H, W) image tensor -> (N, D) flattened cascade features."""
    grid = partition_slices(x, arch)
    stage_caches = []
    for stage in (1, 2, 3):
        grid = fuse(grid, stage)
        caches = []
        for t, row in enumerate(grid):
            for s in range(len(row)):
                prefix = f"{stream}/s{stage}/t{t}s{s}"
                row[s], cache = _block_forward(row[s], params, prefix, train)
                caches.append(cache)
        stage_caches.append(caches)
    n = x.shape[0]
    cells = [cell for row in grid for cell in row]
    feats = np.concatenate([cell.reshape(n, -1) for cell in cells], axis=1)
    cache = None
    if train:
        cache = {
            "stage_caches": stage_caches,
            "cell_shapes": [cell.shape for cell in cells],
            "input_shape": x.shape,
            "dtype": x.dtype,
        }
    return feats, cache


def stream_backward(dfeats: np.ndarray, cache, params, stream: str, arch: ArchConfig, grads):
    """Gradients for one stream; returns the input-image gradient."""
    t_counts = arch.temporal_counts()
    s_counts = arch.spatial_counts()
    n = dfeats.shape[0]
    dtype = cache["dtype"]

    # Rebuild the stage-3 output grid gradients from the flat feature slab.
    dgrid: list[list[np.ndarray]] = []
    offset = 0
    idx = 0
    for t in range(t_counts[3]):
        row = []
        for s in range(s_counts[3]):
            shape = cache["cell_shapes"][idx]
            size = shape[1] * shape[2] * shape[3]
            row.append(dfeats[:, offset:offset + size].reshape(shape).astype(dtype, copy=False))
            offset += size
            idx += 1
        dgrid.append(row)

    for stage in (3, 2, 1):
        caches = cache["stage_caches"][stage - 1]
        i = 0
        for t, row in enumerate(dgrid):
            for s in range(len(row)):
                prefix = f"{stream}/s{stage}/t{t}s{s}"
                row[s] = _block_backward(row[s], caches[i], grads, prefix)
                i += 1
        # Shape of the slices that entered this stage's fuse step.
        if stage == 1:
            in_c, in_h, in_w = arch.in_channels, arch.slice_h, arch.slice_w
        else:
            fused = dgrid[0][0].shape
            in_c, in_h, in_w = fused[1], fused[2] // 2, fused[3] // 2
        dgrid = fuse_backward(
            dgrid, stage, (t_counts[stage - 1], s_counts[stage - 1]),
            (n, in_c, in_h, in_w), dtype,
        )
    return partition_backward(dgrid, arch, np.zeros(cache["input_shape"], dtype=dtype))


def network_forward(xs: dict[str, np.ndarray], params, arch: ArchConfig, train: bool = False):
    """Four stream tensors -> logits (N, C); caches everything when training."""
    feats = []
    stream_caches = {}
    for stream in STREAMS:
        f, c = stream_forward(xs[stream], params, stream, arch, train)
        feats.append(f)
        stream_caches[stream] = c
    concat = np.concatenate(feats, axis=1)
    h1, d1 = dense_forward(concat, params["head/fc1/w"], params["head/fc1/b"])
    a1, m1 = relu_forward(h1)
    logits, d2 = dense_forward(a1, params["head/fc2/w"], params["head/fc2/b"])
    cache = None
    if train:
        cache = {
            "streams": stream_caches,
            "head": (d1, m1, d2),
            "feat_dim": feats[0].shape[1],
        }
    return logits, cache


def network_backward(dlogits: np.ndarray, cache, params, arch: ArchConfig):
    """Exact reverse-mode gradients for every parameter plus input gradients."""
    if cache is None:
        raise ValueError("backward needs the cache of a train-mode forward pass")
    grads: dict[str, np.ndarray] = {}
    d1, m1, d2 = cache["head"]
    da1, grads["head/fc2/w"], grads["head/fc2/b"] = dense_backward(dlogits, d2)
    dh1 = relu_backward(da1, m1)
    dconcat, grads["head/fc1/w"], grads["head/fc1/b"] = dense_backward(dh1, d1)
    dim = cache["feat_dim"]
    dxs = {}
    for i, stream in enumerate(STREAMS):
        dfeats = dconcat[:, i * dim:(i + 1) * dim]
        dxs[stream] = stream_backward(
            dfeats, cache["streams"][stream], params, stream, arch, grads
        )
    return grads, dxs


def images_to_inputs(
    quads: np.ndarray | list, arch: ArchConfig, dtype=np.float64
) -> dict[str, np.ndarray]:
    """Byte image quadruples -> per-stream (N, C, H, W) tensors scaled to 0..1."""
    arr = np.asarray(quads)
    if arr.ndim == 4:  # single quadruple
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[1] != 4 or arr.shape[4] != 3:
        raise ValueError(f"expected (N, 4, H, W, 3) byte images, got {arr.shape}")
    xs = {}
    for i, stream in enumerate(STREAMS):
        xs[stream] = np.ascontiguousarray(arr[:, i].transpose(0, 3, 1, 2)).astype(dtype) / 255.0
    return xs


def classify_forward(
    images: tuple[SkeletonImage, ...], params, arch: ArchConfig
) -> np.ndarray:
    """Probability vector for one sample's four skeleton images."""
    quad = np.stack([np.asarray(img.pixels) for img in images])
    xs = images_to_inputs(quad[None], arch)
    logits, _ = network_forward(xs, params, arch, train=False)
    return softmax(logits)[0]


# --------------------------------------------------------------------------
# Checkpoints: magic 'F2CP', version u16, config digest, tensor records
# (name, dims, float64 little-endian).

_CKPT_HEAD = struct.Struct("<4sHB")


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], digest: str) -> None:
    buf = io.BytesIO()
    digest_b = digest.encode("ascii")
    buf.write(_CKPT_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(digest_b)))
    buf.write(digest_b)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        tensor = np.ascontiguousarray(params[name], dtype="<f8")
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", tensor.ndim))
        for d in tensor.shape:
            buf.write(struct.pack("<I", d))
        buf.write(tensor.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], str]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, digest_len = _CKPT_HEAD.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = _CKPT_HEAD.size
    digest = raw[offset:offset + digest_len].decode("ascii")
    offset += digest_len
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(dims)) if dims else 1
        tensor = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(dims)
        offset += size * 8
        params[name] = tensor.copy()
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, digest
