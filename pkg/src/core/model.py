"""
Audio-visual highlight network with cross-modal hallucination heads.

Dataflow for one video (V: n×d_v visual, A: n×d_a audio):

    v^v = SA_v(V)            a^a = SA_a(A)                    shared
    â   = Hal_v2a(v^v)       v̂   = Hal_a2v(a^a)               aux
    v^a = BMA_va(v^v, a^a)   a^v = BMA_av(a^a, v^v)           primary
    h   = sigmoid(FC2(relu(FC1(Σ_k softmax(logits)_k · stream_k))))

Single-head attention, no normalisation and no positional encoding, so every stage is
equivariant to a permutation of the clips.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.dataset import FeatureSequence
from src.core.exceptions import ContractError, DimensionError
from src.core.numerics import (
    Array,
    backward,
    detach,
    graph_leaves,
    matmul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
)
from src.core.schemas import ModelConfig
from src.core.utils import calculate_content_hash

logger = logging.getLogger(__name__)

SHARED, PRIMARY, AUX = "shared", "primary", "aux"
PARTITIONS = (SHARED, PRIMARY, AUX)
_PARTITION_CODES = {SHARED: 0, PRIMARY: 1, AUX: 2}

CHECKPOINT_MAGIC = b"MTTA"
CHECKPOINT_VERSION = 1


def parameter_layout(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...], str]]:
    """
    (name, shape, partition) of every learnable array, in initialisation order.
    """
    d, d_h = cfg.d, cfg.d_h
    layout: List[Tuple[str, Tuple[int, ...], str]] = []
    for stream, d_in in (("sa_v", cfg.d_v), ("sa_a", cfg.d_a)):
        for proj in ("w_q", "w_k", "w_v", "w_skip"):
            layout.append((f"{stream}.{proj}", (d_in, d), SHARED))
    for head in ("hal_v2a", "hal_a2v"):
        layout += [
            (f"{head}.fc1.w", (d, d_h), AUX),
            (f"{head}.fc1.b", (d_h,), AUX),
            (f"{head}.sa.w_q", (d_h, d_h), AUX),
            (f"{head}.sa.w_k", (d_h, d_h), AUX),
            (f"{head}.sa.w_v", (d_h, d_h), AUX),
            (f"{head}.fc2.w", (d_h, d), AUX),
            (f"{head}.fc2.b", (d,), AUX),
        ]
    for block in ("bma_va", "bma_av"):
        for proj in ("w_q", "w_k", "w_v"):
            layout.append((f"{block}.{proj}", (d, d), PRIMARY))
    layout += [
        ("score.logits", (4,), PRIMARY),
        ("score.fc1.w", (d, d), PRIMARY),
        ("score.fc1.b", (d,), PRIMARY),
        ("score.fc2.w", (d, 1), PRIMARY),
        ("score.fc2.b", (1,), PRIMARY),
    ]
    return layout


class ParamStore:
    """
    Named learnable arrays, each tagged with exactly one partition (shared/primary/aux).

    Values are immutable Arrays; updates replace them through `assign`, which is the only
    mutation path and can be audited by setting `audit` to a list.
    """

    def __init__(self, config: ModelConfig, values: Mapping[str, np.ndarray], partitions: Mapping[str, str]) -> None:
        if set(values) != set(partitions):
            raise ContractError("Every parameter needs exactly one partition tag")
        unknown = set(partitions.values()) - set(PARTITIONS)
        if unknown:
            raise ContractError(f"Unknown partition tags: {sorted(unknown)}")
        self.config = config
        self._partitions: Dict[str, str] = dict(partitions)
        self._values: Dict[str, Array] = {name: Array(values[name], requires_grad=True) for name in sorted(values)}
        self.audit: Optional[List[Tuple[str, str]]] = None
        self.stage = "init"

    def __getitem__(self, name: str) -> Array:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self, *partitions: str) -> List[str]:
        """Sorted parameter names, optionally restricted to some partitions."""
        wanted = set(partitions or PARTITIONS)
        return [name for name in self._values if self._partitions[name] in wanted]

    def partition(self, name: str) -> str:
        return self._partitions[name]

    def census(self) -> Dict[str, int]:
        counts = {p: 0 for p in PARTITIONS}
        for name in self._values:
            counts[self._partitions[name]] += 1
        return counts

    def scope(self, prefix: str) -> Dict[str, Array]:
        """Parameters under `prefix.` keyed by the remainder of their name."""
        cut = len(prefix) + 1
        return {name[cut:]: value for name, value in self._values.items() if name.startswith(prefix + ".")}

    def has_scope(self, prefix: str) -> bool:
        return any(name.startswith(prefix + ".") for name in self._values)

    def snapshot(self, names: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
        return {name: self._values[name].numpy() for name in (names if names is not None else self._values)}

    def restore(self, snapshot: Mapping[str, np.ndarray]) -> None:
        self.assign(snapshot, source="restore")

    def assign(self, updates: Mapping[str, np.ndarray], source: str) -> None:
        """
        Replaces parameter values.

        Args:
            updates (Mapping[str, np.ndarray]): New values for existing parameters.
            source (str): Which rule wrote them (recorded when auditing).
        """
        for name, values in updates.items():
            if name not in self._values:
                raise ContractError(f"Unknown parameter '{name}'")
            if np.shape(values) != self._values[name].shape:
                raise DimensionError(
                    f"Parameter '{name}' has shape {self._values[name].shape}, update has {np.shape(values)}"
                )
            self._values[name] = Array(values, requires_grad=True)
            if self.audit is not None:
                self.audit.append((name, source))

    def copy(self) -> "ParamStore":
        clone = ParamStore.__new__(ParamStore)
        clone.config = self.config
        clone._partitions = dict(self._partitions)
        clone._values = dict(self._values)
        clone.audit = None
        clone.stage = self.stage
        return clone

    def with_arrays(self, arrays: Mapping[str, Array]) -> "ParamStore":
        """Copy whose named parameters are the given Arrays (used by gradient checks)."""
        clone = self.copy()
        for name, value in arrays.items():
            if name not in clone._values:
                raise ContractError(f"Unknown parameter '{name}'")
            clone._values[name] = value
        return clone

    def content_hash(self, *partitions: str) -> str:
        return calculate_content_hash({name: self._values[name].data for name in self.names(*partitions)})

    def gradients(self, loss: Array, names: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
        """
        Backpropagates `loss` and returns one gradient per requested parameter.
        Parameters the loss does not depend on get an exact zero array.
        """
        grads = backward(loss)
        wanted = names if names is not None else list(self._values)
        return {
            name: grads.get(self._values[name], np.zeros(self._values[name].shape))
            for name in wanted
        }

    def same_as(self, other: "ParamStore") -> bool:
        if list(self._values) != list(other._values) or self._partitions != other._partitions:
            return False
        return all(self._values[n].data.tobytes() == other._values[n].data.tobytes() for n in self._values)


def init_params(cfg: ModelConfig) -> ParamStore:
    """
    Deterministic initialisation: weights ~ U(-s, s) with s = sqrt(6 / (fan_in + fan_out)),
    biases and combination logits zero.
    """
    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    values, partitions = {}, {}
    for name, shape, partition in parameter_layout(cfg):
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            values[name] = rng.uniform(-bound, bound, size=shape)
        else:
            values[name] = np.zeros(shape)
        partitions[name] = partition
    store = ParamStore(cfg, values, partitions)
    logger.debug(f"Initialised {len(store)} parameter arrays: {store.census()}")
    return store


# --- Layers ---

def _attend(queries: Array, keys: Array, values: Array) -> Array:
    weights = softmax_rows(scale(matmul(queries, keys.T), 1.0 / math.sqrt(queries.shape[1])))
    return matmul(weights, values)


def self_attention(x: Array, weights: Mapping[str, Array]) -> Array:
    """
    softmax((x W_Q)(x W_K)ᵀ / √d) (x W_V) + skip, where the skip is x W_skip when the
    weights carry one and x itself otherwise.
    """
    if x.ndim != 2 or x.shape[1] != weights["w_q"].shape[0]:
        raise DimensionError(f"self_attention: input {x.shape} does not match W_Q {weights['w_q'].shape}")
    out = _attend(matmul(x, weights["w_q"]), matmul(x, weights["w_k"]), matmul(x, weights["w_v"]))
    skip = matmul(x, weights["w_skip"]) if "w_skip" in weights else x
    return out + skip


def bimodal_attention(query_src: Array, kv_src: Array, weights: Mapping[str, Array]) -> Array:
    """Cross attention from `query_src` onto `kv_src` with an identity residual."""
    if query_src.shape != kv_src.shape:
        raise DimensionError(f"bimodal_attention: query {query_src.shape} vs key/value {kv_src.shape}")
    out = _attend(
        matmul(query_src, weights["w_q"]),
        matmul(kv_src, weights["w_k"]),
        matmul(kv_src, weights["w_v"]),
    )
    return out + query_src


def hallucinate(src: Array, weights: Mapping[str, Array]) -> Array:
    """FC -> ReLU -> (self-attention with a bypass) -> FC, mapping n×d to n×d."""
    if src.ndim != 2 or src.shape[1] != weights["fc1.w"].shape[0]:
        raise DimensionError(f"hallucinate: input {src.shape} does not match FC1 {weights['fc1.w'].shape}")
    z = relu(matmul(src, weights["fc1.w"]) + weights["fc1.b"])
    attended = self_attention(z, {"w_q": weights["sa.w_q"], "w_k": weights["sa.w_k"], "w_v": weights["sa.w_v"]})
    return matmul(attended, weights["fc2.w"]) + weights["fc2.b"]


def score_logits(v_v: Array, v_a: Array, a_a: Array, a_v: Array, weights: Mapping[str, Array]) -> Array:
    """Convex combination of the four streams followed by two FC layers, before the sigmoid."""
    streams = (v_v, v_a, a_a, a_v)
    if len({s.shape for s in streams}) != 1:
        raise DimensionError(f"score_regressor: stream shapes differ {[s.shape for s in streams]}")
    mix = softmax_rows(reshape(weights["logits"], 1, 4))
    fused = mix[0, 0] * v_v + mix[0, 1] * v_a + mix[0, 2] * a_a + mix[0, 3] * a_v
    hidden = relu(matmul(fused, weights["fc1.w"]) + weights["fc1.b"])
    return reshape(matmul(hidden, weights["fc2.w"]) + weights["fc2.b"], v_v.shape[0])


def score_regressor(v_v: Array, v_a: Array, a_a: Array, a_v: Array, weights: Mapping[str, Array]) -> Array:
    return sigmoid(score_logits(v_v, v_a, a_a, a_v, weights))


@dataclass(frozen=True)
class ForwardTrace:
    visual_self: Array
    audio_self: Array
    hallucinated_audio: Array
    hallucinated_visual: Optional[Array]
    visual_bimodal: Array
    audio_bimodal: Array
    logits: Array
    scores: Array
    missing_audio: bool

    @property
    def h(self) -> np.ndarray:
        return self.scores.numpy()


def forward(params: ParamStore, video: FeatureSequence, missing_audio: bool = False) -> ForwardTrace:
    """
    Runs the network on one video.

    Args:
        params (ParamStore): Model parameters.
        video (FeatureSequence): Features; targets are never read.
        missing_audio (bool): Force missing-audio mode. Videos without audio always use it.

    Returns:
        ForwardTrace: Every intermediate stream plus the clip scores.

    Raises:
        DimensionError: If the video's feature sizes do not match the model.
        ContractError: If missing-audio mode is needed but the store has no audio hallucination head.
    """
    cfg = params.config
    if video.visual.shape[1] != cfg.d_v:
        raise DimensionError(f"Video '{video.id}' has d_v={video.visual.shape[1]}, model expects {cfg.d_v}")
    missing = missing_audio or not video.has_audio

    v_v = self_attention(Array(video.visual), params.scope("sa_v"))
    if missing and not params.has_scope("hal_v2a"):
        raise ContractError("Missing-audio mode needs the visual-to-audio hallucination weights")
    hal_audio = hallucinate(v_v, params.scope("hal_v2a"))

    if missing:
        a_a = detach(hal_audio)
        hal_visual = None
    else:
        if video.audio.shape[1] != cfg.d_a:
            raise DimensionError(f"Video '{video.id}' has d_a={video.audio.shape[1]}, model expects {cfg.d_a}")
        a_a = self_attention(Array(video.audio), params.scope("sa_a"))
        hal_visual = hallucinate(a_a, params.scope("hal_a2v"))

    v_a = bimodal_attention(v_v, a_a, params.scope("bma_va"))
    a_v = bimodal_attention(a_a, v_v, params.scope("bma_av"))
    logits = score_logits(v_v, v_a, a_a, a_v, params.scope("score"))
    return ForwardTrace(v_v, a_a, hal_audio, hal_visual, v_a, a_v, logits, sigmoid(logits), missing)


def unregistered_leaves(params: ParamStore, trace: ForwardTrace) -> List[Array]:
    """Differentiable leaves reachable from the trace outputs that the store does not own."""
    owned = {id(params[name]) for name in params.names()}
    outputs = [trace.scores, trace.hallucinated_audio]
    if trace.hallucinated_visual is not None:
        outputs.append(trace.hallucinated_visual)
    found = []
    for output in outputs:
        found += [leaf for leaf in graph_leaves(output) if id(leaf) not in owned]
    return found


# --- Checkpoints ---

def save_checkpoint(params: ParamStore, path: Union[str, Path], meta: Optional[Dict[str, Any]] = None) -> Path:
    """
    Writes b"MTTA" | version u32 | config text (u32 length + JSON) | parameters sorted by name,
    each as name (u32 length + UTF-8) + partition byte + ndim u32 + dims u32 + float64 values.
    """
    header = json.dumps(
        {"model": params.config.model_dump(mode="json"), "stage": params.stage, **(meta or {})}, sort_keys=True
    ).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    for name in sorted(params.names()):
        values = params[name].data
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack("<BI", _PARTITION_CODES[params.partition(name)], values.ndim))
        chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
        chunks.append(np.ascontiguousarray(values, dtype="<f8").tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.info(f"Checkpoint saved to {path} ({len(params)} arrays)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ParamStore, Dict[str, Any]]:
    """
    Reads a checkpoint written by `save_checkpoint`.

    Returns:
        Tuple[ParamStore, Dict[str, Any]]: The parameters and the header metadata.

    Raises:
        ContractError: If the file is not a valid checkpoint or disagrees with its config.
    """
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ContractError(f"{path} is not a checkpoint (bad magic)")
    try:
        version, header_len = struct.unpack_from("<II", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"Unsupported checkpoint version {version}")
        offset = 12 + header_len
        header = json.loads(blob[12:offset].decode("utf-8"))
        if not isinstance(header, dict) or not isinstance(header.get("model"), dict):
            raise ContractError(f"Corrupt checkpoint {path}: the header must be a JSON object with a model section")
        cfg = ModelConfig(**header.pop("model"))

        codes = {code: name for name, code in _PARTITION_CODES.items()}
        values, partitions = {}, {}
        while offset < len(blob):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BI", blob, offset)
            offset += 5
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            count = int(np.prod(shape))
            values[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * count
            partitions[name] = codes[code]
    except ContractError:
        raise
    except (struct.error, ValueError, KeyError, TypeError) as e:
        raise ContractError(f"Corrupt checkpoint {path}: {e}") from None

    expected = {name: (shape, partition) for name, shape, partition in parameter_layout(cfg)}
    found = {name: (values[name].shape, partitions[name]) for name in values}
    if expected != found:
        raise ContractError(f"Checkpoint {path} does not match the parameter layout of its config")
    store = ParamStore(cfg, values, partitions)
    store.stage = header.get("stage", "init")
    return store, header
