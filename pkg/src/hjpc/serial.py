"""On-disk formats.

Checkpoint (.hjpc): magic "HJPC", version u16, model-kind tag, layer-shape
table, parameters as little-endian float32 in declaration order (w0, b0, w1,
b1, ...).

Dataset (.hjpd): magic "HJPD", version u16, record-type tag (state-pairs |
embedding-pairs), dims table, trajectory count, then per-trajectory records as
little-endian float32.

Plus: deterministic CSV emission (17 significant digits) and plain-text run
manifests with recomputable sha256 hashes.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import Mlp

CHECKPOINT_MAGIC = b"HJPC"
DATASET_MAGIC = b"HJPD"
CHECKPOINT_VERSION = 1
DATASET_VERSION = 1

RECORD_STATE_PAIRS = 0
RECORD_EMBEDDING_PAIRS = 1

_ACT_CODE = {"linear": 0, "relu": 1, "unit": 2}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, net: Mlp, kind: str) -> None:
    kind_b = kind.encode("ascii")
    if len(kind_b) > 255:
        raise ValueError("model kind tag too long")
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION)]
    parts.append(struct.pack("<B", len(kind_b)))
    parts.append(kind_b)
    parts.append(struct.pack("<H", net.n_layers))
    for w, act, res in zip(net.weights, net.activations, net.residual):
        parts.append(struct.pack("<IIBB", w.shape[1], w.shape[0], _ACT_CODE[act], int(res)))
    for _, tensor in net.param_items():
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> tuple:
    """Returns (Mlp with float64 params, kind tag)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def take(n):
        nonlocal off
        chunk = raw[off : off + n]
        if len(chunk) != n:
            raise ValueError(f"truncated checkpoint {path}")
        off += n
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack("<H", take(2))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (kind_len,) = struct.unpack("<B", take(1))
    kind = take(kind_len).decode("ascii")
    (n_layers,) = struct.unpack("<H", take(2))
    shapes, acts, residual = [], [], []
    for _ in range(n_layers):
        in_dim, out_dim, act, res = struct.unpack("<IIBB", take(10))
        shapes.append((out_dim, in_dim))
        acts.append(_ACT_NAME[act])
        residual.append(bool(res))
    weights, biases = [], []
    for out_dim, in_dim in shapes:
        w = np.frombuffer(take(4 * out_dim * in_dim), dtype="<f4").reshape(out_dim, in_dim)
        b = np.frombuffer(take(4 * out_dim), dtype="<f4")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(raw):
        raise ValueError(f"trailing bytes in checkpoint {path}")
    return Mlp(weights, biases, tuple(acts), tuple(residual)), kind


# ------------------------------------------------------------------- datasets


@dataclass
class StateTrajectory:
    """Plant-state record: states (T+1, 4), applied + oracle actions (T,) each."""

    seed: int
    attempt: int
    states: np.ndarray
    actions_applied: np.ndarray
    actions_oracle: np.ndarray


@dataclass
class EmbeddingTrajectory:
    """Embedding record at a fixed stride: embeddings (n_grid, d_z), actions (T,)."""

    seed: int
    attempt: int
    stride: int
    embeddings: np.ndarray
    actions_applied: np.ndarray
    actions_oracle: np.ndarray


def _pack_actions(traj) -> bytes:
    actions = np.stack([traj.actions_applied, traj.actions_oracle], axis=1)
    return np.ascontiguousarray(actions, dtype="<f4").tobytes()


def save_state_dataset(path, trajectories: Sequence[StateTrajectory]) -> None:
    first = trajectories[0]
    n_states, state_dim = first.states.shape
    n_actions = first.actions_applied.shape[0]
    parts = [
        DATASET_MAGIC,
        struct.pack("<H", DATASET_VERSION),
        struct.pack("<B", RECORD_STATE_PAIRS),
        struct.pack("<H", 4),
        struct.pack("<IIII", n_states, state_dim, n_actions, 2),
        struct.pack("<I", len(trajectories)),
    ]
    for traj in trajectories:
        if traj.states.shape != (n_states, state_dim) or traj.actions_applied.shape[0] != n_actions:
            raise ValueError("inhomogeneous trajectory shapes")
        parts.append(struct.pack("<QI", traj.seed, traj.attempt))
        parts.append(np.ascontiguousarray(traj.states, dtype="<f4").tobytes())
        parts.append(_pack_actions(traj))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def save_embedding_dataset(path, trajectories: Sequence[EmbeddingTrajectory]) -> None:
    first = trajectories[0]
    n_grid, embed_dim = first.embeddings.shape
    n_actions = first.actions_applied.shape[0]
    parts = [
        DATASET_MAGIC,
        struct.pack("<H", DATASET_VERSION),
        struct.pack("<B", RECORD_EMBEDDING_PAIRS),
        struct.pack("<H", 5),
        struct.pack("<IIIII", n_grid, embed_dim, first.stride, n_actions, 2),
        struct.pack("<I", len(trajectories)),
    ]
    for traj in trajectories:
        if traj.embeddings.shape != (n_grid, embed_dim) or traj.stride != first.stride:
            raise ValueError("inhomogeneous trajectory shapes")
        parts.append(struct.pack("<QI", traj.seed, traj.attempt))
        parts.append(np.ascontiguousarray(traj.embeddings, dtype="<f4").tobytes())
        parts.append(_pack_actions(traj))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _read_header(raw, path):
    off = 0
    if raw[:4] != DATASET_MAGIC:
        raise ValueError(f"{path} is not a dataset file")
    off = 4
    (version,) = struct.unpack_from("<H", raw, off)
    off += 2
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    (record_type,) = struct.unpack_from("<B", raw, off)
    off += 1
    (n_dims,) = struct.unpack_from("<H", raw, off)
    off += 2
    dims = struct.unpack_from(f"<{n_dims}I", raw, off)
    off += 4 * n_dims
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    return record_type, dims, count, off


def load_dataset(path):
    """Returns (record_type, list of trajectories)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    record_type, dims, count, off = _read_header(raw, path)
    out = []
    if record_type == RECORD_STATE_PAIRS:
        n_states, state_dim, n_actions, action_cols = dims
        for _ in range(count):
            seed, attempt = struct.unpack_from("<QI", raw, off)
            off += 12
            states = np.frombuffer(raw, dtype="<f4", count=n_states * state_dim, offset=off)
            off += 4 * n_states * state_dim
            actions = np.frombuffer(raw, dtype="<f4", count=n_actions * action_cols, offset=off)
            off += 4 * n_actions * action_cols
            states = states.astype(np.float64).reshape(n_states, state_dim)
            actions = actions.astype(np.float64).reshape(n_actions, action_cols)
            out.append(StateTrajectory(seed, attempt, states, actions[:, 0].copy(), actions[:, 1].copy()))
    elif record_type == RECORD_EMBEDDING_PAIRS:
        n_grid, embed_dim, stride, n_actions, action_cols = dims
        for _ in range(count):
            seed, attempt = struct.unpack_from("<QI", raw, off)
            off += 12
            emb = np.frombuffer(raw, dtype="<f4", count=n_grid * embed_dim, offset=off)
            off += 4 * n_grid * embed_dim
            actions = np.frombuffer(raw, dtype="<f4", count=n_actions * action_cols, offset=off)
            off += 4 * n_actions * action_cols
            emb = emb.astype(np.float64).reshape(n_grid, embed_dim)
            actions = actions.astype(np.float64).reshape(n_actions, action_cols)
            out.append(
                EmbeddingTrajectory(seed, attempt, stride, emb, actions[:, 0].copy(), actions[:, 1].copy())
            )
    else:
        raise ValueError(f"unknown record type {record_type}")
    if off != len(raw):
        raise ValueError(f"trailing bytes in dataset {path}")
    return record_type, out


# ------------------------------------------------------------------ CSV + misc


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def emit_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row width does not match header")
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def save_model_dir(path, components: dict, meta: dict) -> list:
    """Write one checkpoint per component plus a meta.txt of key=value lines.

    Returns (relative name, absolute path) pairs for manifest hashing.
    """
    os.makedirs(path, exist_ok=True)
    written = []
    for name in sorted(components):
        file_path = os.path.join(path, f"{name}.hjpc")
        save_checkpoint(file_path, components[name], name)
        written.append((f"{os.path.basename(path)}/{name}.hjpc", file_path))
    meta_path = os.path.join(path, "meta.txt")
    with open(meta_path, "w") as fh:
        for key in sorted(meta):
            fh.write(f"{key}={meta[key]}\n")
    written.append((f"{os.path.basename(path)}/meta.txt", meta_path))
    return written


def load_model_dir(path) -> tuple:
    """Returns ({component: Mlp}, {meta key: str value})."""
    meta_path = os.path.join(path, "meta.txt")
    if not os.path.isfile(meta_path):
        raise FileNotFoundError(f"no model bundle at {path}")
    meta = {}
    with open(meta_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, _, value = line.partition("=")
                meta[key] = value
    components = {}
    for entry in sorted(os.listdir(path)):
        if entry.endswith(".hjpc"):
            net, kind = load_checkpoint(os.path.join(path, entry))
            components[kind] = net
    return components, meta


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    path,
    command: str,
    version: str,
    git: str,
    seed: int,
    jobs: int,
    config_text: str,
    artifacts: Sequence[tuple],
    timings: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> None:
    """Plain-text run manifest; artifact hashes are recomputable with sha256."""
    lines = [
        f"command={command}",
        f"version={version}",
        f"git={git}",
        f"seed={seed}",
        f"jobs={jobs}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    for name, file_path in artifacts:
        lines.append(f"artifact={name} sha256={sha256_file(file_path)} bytes={os.path.getsize(file_path)}")
    for key, value in (timings or {}).items():
        lines.append(f"timing.{key}_s={value:.3f}")
    for cfg_line in config_text.strip().splitlines():
        lines.append(f"config.{cfg_line}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
