import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.core.dataset import Dataset, FeatureSequence
from src.core.exceptions import ContractError
from src.core.losses import aux_objective, joint_loss, primary_loss_from_logits
from src.core.model import AUX, PRIMARY, SHARED, ParamStore, forward
from src.core.schemas import EpochRecord, TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """
    Plain SGD or Adam with bias correction. Moments exist only for Adam and are keyed by
    parameter name; `step` counts applied updates.
    """

    kind: str
    lr: float
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: Optional[Dict[str, np.ndarray]] = None
    v: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.kind not in ("sgd", "adam"):
            raise ContractError(f"Unknown optimizer kind '{self.kind}'")
        if self.kind == "adam":
            self.m = {} if self.m is None else self.m
            self.v = {} if self.v is None else self.v
        else:
            self.m = self.v = None

    @classmethod
    def for_outer_loop(cls, cfg: TrainConfig, lr: float) -> "OptimizerState":
        if cfg.outer_optimizer == "sgd":
            return cls("sgd", lr)
        return cls("adam", lr, betas=tuple(cfg.adam_betas), eps=cfg.adam_eps)


def _subset(params: ParamStore, grads: Mapping[str, np.ndarray], names: Optional[Sequence[str]]) -> List[str]:
    names = list(grads) if names is None else list(names)
    missing = [name for name in names if name not in grads]
    if missing:
        raise ContractError(f"No gradient for {missing}")
    unknown = [name for name in names if name not in params]
    if unknown:
        raise ContractError(f"Unknown parameters {unknown}")
    return names


def sgd_step(params: ParamStore, grads: Mapping[str, np.ndarray], lr: float,
             names: Optional[Sequence[str]] = None, source: str = "sgd") -> ParamStore:
    """
    p <- p - lr * g for every parameter in `names` (default: every key of `grads`).

    Raises:
        ContractError: If a member of the subset has no gradient.
    """
    names = _subset(params, grads, names)
    params.assign({name: params[name].data - lr * grads[name] for name in names}, source=source)
    return params


def adam_step(state: OptimizerState, params: ParamStore, grads: Mapping[str, np.ndarray],
              names: Optional[Sequence[str]] = None, source: str = "adam") -> ParamStore:
    """
    One bias-corrected Adam update of the subset; advances `state.step` by one.

    Raises:
        ContractError: If the state is not an Adam state or a gradient is missing.
    """
    if state.kind != "adam":
        raise ContractError("adam_step needs an Adam optimizer state")
    names = _subset(params, grads, names)
    state.step += 1
    beta1, beta2 = state.betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    updates = {}
    for name in names:
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(g)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(g)) + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        updates[name] = params[name].data - state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    params.assign(updates, source=source)
    return params


def apply_step(state: OptimizerState, params: ParamStore, grads: Mapping[str, np.ndarray],
               names: Sequence[str], source: str) -> ParamStore:
    if state.kind == "adam":
        return adam_step(state, params, grads, names, source)
    state.step += 1
    return sgd_step(params, grads, state.lr, names, source)


def _check_labeled(dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ContractError("Training needs a non-empty dataset")
    if not dataset.is_labeled:
        raise ContractError(f"Training needs labels for every video of '{dataset.split}'")


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


def _seed(cfg: TrainConfig) -> int:
    return cfg.seed if cfg.seed is not None else 0


def train_joint(params: ParamStore, dataset: Dataset, cfg: TrainConfig,
                audit: Optional[List[Tuple[str, str]]] = None) -> Tuple[ParamStore, List[EpochRecord]]:
    """
    Joint training on L_pri + L_aux with Adam over every partition.

    Args:
        params (ParamStore): Starting point (not modified).
        dataset (Dataset): Labeled training videos (with audio).
        cfg (TrainConfig): joint_lr, batch_size, joint_epochs, seed.
        audit: Optional list receiving (parameter, source) for every write.

    Returns:
        Tuple[ParamStore, List[EpochRecord]]: Trained copy and per-epoch mean losses.
    """
    _check_labeled(dataset)
    store = params.copy()
    store.audit = audit
    state = OptimizerState("adam", cfg.resolved_joint_lr, betas=tuple(cfg.adam_betas), eps=cfg.adam_eps)
    rng = np.random.default_rng(_seed(cfg))
    names = store.names()
    history: List[EpochRecord] = []

    for epoch in range(cfg.joint_epochs):
        order = rng.permutation(len(dataset))
        totals = {"l_pri": 0.0, "l_aux": 0.0, "l_joint": 0.0}
        for batch in _batches(order, cfg.batch_size):
            acc = {name: np.zeros(store[name].shape) for name in names}
            for index in batch:
                bundle = joint_loss(store, dataset.videos[index])
                for name, grad in store.gradients(bundle.l_joint, names).items():
                    acc[name] += grad
                for key in totals:
                    totals[key] += getattr(bundle, key).item()
            adam_step(state, store, {name: g / len(batch) for name, g in acc.items()}, names, source="joint")

        record = EpochRecord(stage="joint", epoch=epoch + 1, **{k: v / len(dataset) for k, v in totals.items()})
        history.append(record)
        logger.info(
            f"Joint epoch {record.epoch}/{cfg.joint_epochs}: L_pri={record.l_pri:.5f} L_aux={record.l_aux:.5f}",
            extra=record.model_dump(),
        )

    store.audit = None
    store.stage = "joint"
    return store, history


class InnerResult(NamedTuple):
    params: ParamStore
    trajectory: List[float]


def inner_adapt(params: ParamStore, video: FeatureSequence, lr: float, steps: int) -> InnerResult:
    """
    K plain SGD steps on L_aux over the shared and aux partitions of a copy of `params`.

    The video's labels are stripped before use, so this path is label-free. The primary
    partition is read but never written.

    Returns:
        InnerResult: Adapted copy and the K+1 auxiliary losses (before each step, then after the last).

    Raises:
        ContractError: If steps < 1 or the video has no audio.
    """
    if steps < 1:
        raise ContractError(f"inner_adapt needs at least one step, got {steps}")
    if not video.has_audio:
        raise ContractError(f"Video '{video.id}' has no audio; the auxiliary loss is undefined")
    video = video.without_targets()
    adapted = params.copy()
    names = adapted.names(SHARED, AUX)

    trajectory = []
    for _ in range(steps):
        loss = aux_objective(adapted, video)
        trajectory.append(loss.item())
        sgd_step(adapted, adapted.gradients(loss, names), lr, names, source="inner")
    trajectory.append(aux_objective(adapted, video).item())
    return InnerResult(adapted, trajectory)


def train_meta(params: ParamStore, dataset: Dataset, cfg: TrainConfig,
               audit: Optional[List[Tuple[str, str]]] = None) -> Tuple[ParamStore, List[EpochRecord]]:
    """
    Meta-auxiliary training (first-order).

    For every batch of B videos:
      1. ω_b = inner_adapt(θ, V_b, λ, K)
      2. auxiliary update of θ^{s,a}: sequential mode commits ω_b^{s,a} before the next
         video; batch_mean mode commits the mean of the ω_b^{s,a} after the batch
      3. accumulate ∇ L_pri({ω^s_b, θ^p}; V_b) (gradient w.r.t. ω^s applied to θ^s)
      4. one outer step on θ^{s,p} with the summed gradient (SGD or Adam at rate γ)

    Args:
        params (ParamStore): Joint-trained parameters (not modified).
        dataset (Dataset): Labeled training videos.
        cfg (TrainConfig): λ, γ, K, B, meta_epochs, outer_optimizer, line7_mode, seed.
        audit: Optional list receiving (parameter, source) with source 'aux' or 'outer'.

    Raises:
        ContractError: If the parameters were not joint-trained or labels are missing.
    """
    if getattr(params, "stage", None) not in ("joint", "meta"):
        raise ContractError("Meta-auxiliary training starts from joint-trained parameters")
    _check_labeled(dataset)

    store = params.copy()
    store.audit = audit
    outer_names = store.names(SHARED, PRIMARY)
    aux_names = store.names(SHARED, AUX)
    state = OptimizerState.for_outer_loop(cfg, cfg.meta_lr)
    rng = np.random.default_rng(_seed(cfg))
    history: List[EpochRecord] = []

    for epoch in range(cfg.meta_epochs):
        order = rng.permutation(len(dataset))
        totals = {"l_pri": 0.0, "l_aux": 0.0}
        for batch in _batches(order, cfg.batch_size):
            acc = {name: np.zeros(store[name].shape) for name in outer_names}
            adapted_aux: List[Dict[str, np.ndarray]] = []

            for index in batch:
                video = dataset.videos[index]
                omega, trajectory = inner_adapt(store, video, cfg.inner_lr, cfg.inner_steps)
                if cfg.line7_mode == "sequential":
                    store.assign({name: omega[name].data for name in aux_names}, source="aux")
                else:
                    adapted_aux.append(omega.snapshot(aux_names))

                l_pri = primary_loss_from_logits(forward(omega, video).logits, video.targets)
                for name, grad in omega.gradients(l_pri, outer_names).items():
                    acc[name] += grad
                totals["l_pri"] += l_pri.item()
                totals["l_aux"] += trajectory[0]

            if adapted_aux:
                store.assign(
                    {name: np.mean([snap[name] for snap in adapted_aux], axis=0) for name in aux_names},
                    source="aux",
                )
            apply_step(state, store, acc, outer_names, source="outer")

        l_pri, l_aux = totals["l_pri"] / len(dataset), totals["l_aux"] / len(dataset)
        record = EpochRecord(stage="meta", epoch=epoch + 1, l_pri=l_pri, l_aux=l_aux, l_joint=l_pri + l_aux)
        history.append(record)
        logger.info(
            f"Meta epoch {record.epoch}/{cfg.meta_epochs}: adapted L_pri={l_pri:.5f} pre-adaptation L_aux={l_aux:.5f}",
            extra=record.model_dump(),
        )

    store.audit = None
    store.stage = "meta"
    return store, history
