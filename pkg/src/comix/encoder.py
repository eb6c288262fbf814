"""Video encoder: clip featurizer followed by a similarity-graph GCN.

A clip batch (n clips) is flattened and mapped clip-wise through a small MLP
(affine -> tanh -> affine) to per-clip features. The graph encoder treats the
n clip features as nodes of a fully connected graph whose edge weights are a
learned pairwise affinity

    F(z_i, z_j) = (w z_i)^T (w' z_j)

row-normalized with a softmax to form the adjacency. Each of the three GCN
layers recomputes that adjacency from its own input features, then propagates

    H_next = act(A_sim @ H @ W)

with ReLU between layers and no nonlinearity on the last layer, so the
column-mean of the final node features is a logit vector over the classes.
The fast (base) and slow (auxiliary) branches share this single parameter set.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import BadMagicError, FileFormatError, TruncatedFileError
from .synthvideo import ClipBatch


@dataclass
class FeaturizerParams:
    w1: object  # (clip_dim, hidden)
    b1: object  # (hidden,)
    w2: object  # (hidden, feature_dim)
    b2: object  # (feature_dim,)


@dataclass
class GcnLayerParams:
    weight: object  # (d_in, d_out) node transform
    sim_w: object  # (d_in, d_in) affinity transform, left side
    sim_wp: object  # (d_in, d_in) affinity transform, right side


@dataclass
class EncoderParams:
    featurizer: FeaturizerParams
    layers: list

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def clip_dim(self) -> int:
        return self.featurizer.w1.shape[0]


def init_encoder_params(
    clip_dim: int,
    hidden_dim: int,
    feature_dim: int,
    gcn_dims,
    num_classes: int,
    rng,
) -> EncoderParams:
    """Random init, scaled by 1/sqrt(fan_in); biases start at zero."""

    def mat(n_in, n_out):
        return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

    featurizer = FeaturizerParams(
        w1=mat(clip_dim, hidden_dim),
        b1=np.zeros(hidden_dim),
        w2=mat(hidden_dim, feature_dim),
        b2=np.zeros(feature_dim),
    )
    dims = [feature_dim, *gcn_dims, num_classes]
    layers = [
        GcnLayerParams(
            weight=mat(dims[i], dims[i + 1]),
            sim_w=mat(dims[i], dims[i]),
            sim_wp=mat(dims[i], dims[i]),
        )
        for i in range(len(dims) - 1)
    ]
    return EncoderParams(featurizer=featurizer, layers=layers)


def zero_encoder_params(clip_dim, hidden_dim, feature_dim, gcn_dims, num_classes) -> EncoderParams:
    rng = np.random.default_rng(0)
    params = init_encoder_params(clip_dim, hidden_dim, feature_dim, gcn_dims, num_classes, rng)
    for name, arr in named_params(params).items():
        arr[...] = 0.0
    return params


def named_params(params: EncoderParams) -> dict:
    """Flat name -> array view of every parameter, in a fixed order."""
    out = {
        "featurizer.w1": params.featurizer.w1,
        "featurizer.b1": params.featurizer.b1,
        "featurizer.w2": params.featurizer.w2,
        "featurizer.b2": params.featurizer.b2,
    }
    for i, layer in enumerate(params.layers):
        out[f"gcn.{i}.weight"] = layer.weight
        out[f"gcn.{i}.sim_w"] = layer.sim_w
        out[f"gcn.{i}.sim_wp"] = layer.sim_wp
    return out


def leaf_params(params: EncoderParams) -> tuple[EncoderParams, dict]:
    """Wrap every parameter array as an autodiff leaf for one training step.

    Returns the leaf-valued parameter structure plus a name -> leaf map used to
    collect gradients after backward.
    """
    fz = params.featurizer
    featurizer = FeaturizerParams(
        w1=ad.leaf(fz.w1, "featurizer.w1"),
        b1=ad.leaf(fz.b1, "featurizer.b1"),
        w2=ad.leaf(fz.w2, "featurizer.w2"),
        b2=ad.leaf(fz.b2, "featurizer.b2"),
    )
    layers = [
        GcnLayerParams(
            weight=ad.leaf(layer.weight, f"gcn.{i}.weight"),
            sim_w=ad.leaf(layer.sim_w, f"gcn.{i}.sim_w"),
            sim_wp=ad.leaf(layer.sim_wp, f"gcn.{i}.sim_wp"),
        )
        for i, layer in enumerate(params.layers)
    ]
    leaves = EncoderParams(featurizer=featurizer, layers=layers)
    by_name = {
        "featurizer.w1": featurizer.w1,
        "featurizer.b1": featurizer.b1,
        "featurizer.w2": featurizer.w2,
        "featurizer.b2": featurizer.b2,
    }
    for i, layer in enumerate(layers):
        by_name[f"gcn.{i}.weight"] = layer.weight
        by_name[f"gcn.{i}.sim_w"] = layer.sim_w
        by_name[f"gcn.{i}.sim_wp"] = layer.sim_wp
    return leaves, by_name


def clone_params(params: EncoderParams) -> EncoderParams:
    fz = params.featurizer
    return EncoderParams(
        featurizer=FeaturizerParams(fz.w1.copy(), fz.b1.copy(), fz.w2.copy(), fz.b2.copy()),
        layers=[
            GcnLayerParams(l.weight.copy(), l.sim_w.copy(), l.sim_wp.copy())
            for l in params.layers
        ],
    )


# ---------------------------------------------------------------------------
# forward pieces


def _as_node(x) -> ad.Tensor:
    # params arrive either leaf-wrapped (training) or as raw arrays (inference)
    return x if isinstance(x, ad.Tensor) else ad.constant(x)


def featurize_clips(clips: ClipBatch, featurizer: FeaturizerParams) -> ad.Tensor:
    """Map each clip independently: flatten -> affine -> tanh -> affine."""
    n = clips.num_clips
    flat = clips.clips.reshape(n, -1)
    x = ad.constant(flat, "clips")
    hidden = ad.tanh(ad.add(ad.matmul(x, _as_node(featurizer.w1)), _as_node(featurizer.b1)))
    return ad.add(ad.matmul(hidden, _as_node(featurizer.w2)), _as_node(featurizer.b2))


def similarity_adjacency(features: ad.Tensor, sim_w, sim_wp) -> ad.Tensor:
    """Row-stochastic adjacency from pairwise affinities of node features."""
    left = ad.matmul(features, ad.transpose(_as_node(sim_w)))
    right = ad.matmul(features, ad.transpose(_as_node(sim_wp)))
    return ad.softmax(ad.matmul(left, ad.transpose(right)))


def gcn_forward(features: ad.Tensor, layers) -> ad.Tensor:
    """Three similarity-graph convolutions, then column-mean pooling to logits.

    The adjacency is recomputed at every layer from that layer's input
    features; pooling over nodes makes the output order-independent.
    """
    h = _as_node(features)
    for i, layer in enumerate(layers):
        adj = similarity_adjacency(h, layer.sim_w, layer.sim_wp)
        h = ad.matmul(ad.matmul(adj, h), _as_node(layer.weight))
        if i < len(layers) - 1:
            h = ad.relu(h)
    return ad.mean_rows(h)


def encode(clips: ClipBatch, params: EncoderParams) -> ad.Tensor:
    """Logit vector for one clip batch. Pass leaf-wrapped params to train."""
    return gcn_forward(featurize_clips(clips, params.featurizer), params.layers)


# ---------------------------------------------------------------------------
# CMX1 checkpoint format
#
# little-endian: magic "CMX1"; u32 version=1; u32 num_tensors; then per tensor
# (sorted by name): u32 name_len; name bytes (utf-8); u32 rank; u32 extents;
# f64 payload, row-major.

_MAGIC = b"CMX1"


def checkpoint_to_bytes(params: EncoderParams) -> bytes:
    table = named_params(params)
    out = [_MAGIC, struct.pack("<II", 1, len(table))]
    for name in sorted(table):
        arr = np.ascontiguousarray(table[name], dtype="<f8")
        encoded = name.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, params: EncoderParams):
    with open(path, "wb") as f:
        f.write(checkpoint_to_bytes(params))


def checkpoint_from_bytes(buf: bytes) -> EncoderParams:
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(buf):
            raise TruncatedFileError("unexpected EOF")
        chunk = buf[off : off + n]
        off += n
        return chunk

    if take(4) != _MAGIC:
        raise BadMagicError("bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != 1:
        raise FileFormatError(f"unsupported version {version}")
    table = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        extents = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(extents)) if rank else 1
        arr = np.frombuffer(take(size * 8), dtype="<f8").reshape(extents).copy()
        table[name] = arr
    if off != len(buf):
        raise FileFormatError(f"{len(buf) - off} trailing bytes after last tensor")
    return _params_from_table(table)


def _params_from_table(table: dict) -> EncoderParams:
    for key in ("featurizer.w1", "featurizer.b1", "featurizer.w2", "featurizer.b2"):
        if key not in table:
            raise FileFormatError(f"checkpoint is missing tensor '{key}'")
    featurizer = FeaturizerParams(
        w1=table["featurizer.w1"],
        b1=table["featurizer.b1"],
        w2=table["featurizer.w2"],
        b2=table["featurizer.b2"],
    )
    layers = []
    i = 0
    while f"gcn.{i}.weight" in table:
        for part in ("sim_w", "sim_wp"):
            if f"gcn.{i}.{part}" not in table:
                raise FileFormatError(f"checkpoint is missing tensor 'gcn.{i}.{part}'")
        layers.append(
            GcnLayerParams(
                weight=table[f"gcn.{i}.weight"],
                sim_w=table[f"gcn.{i}.sim_w"],
                sim_wp=table[f"gcn.{i}.sim_wp"],
            )
        )
        i += 1
    if not layers:
        raise FileFormatError("checkpoint has no GCN layers")
    expected = 4 + 3 * len(layers)
    if len(table) != expected:
        raise FileFormatError(f"checkpoint has {len(table)} tensors, expected {expected}")
    return EncoderParams(featurizer=featurizer, layers=layers)


def load_checkpoint(path) -> EncoderParams:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())
