"""
Gradient acceptance suite: every differentiable op and the full joint loss are compared
against central finite differences on seeded random inputs.
"""

import logging
import sys
from typing import Callable, Dict, List, NamedTuple, Sequence

import numpy as np

from src.core.dataset import FeatureSequence
from src.core.losses import primary_loss_from_logits
from src.core.model import forward, init_params
from src.core.numerics import (
    Array,
    gradcheck,
    log,
    log_sigmoid,
    matmul,
    mean,
    relu,
    reshape,
    sigmoid,
    softmax_rows,
    square,
    total,
    transpose,
)
from src.core.schemas import ModelConfig
from src.core.utils import derive_rng

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
EPS = 1e-5
OP_SEEDS = 3
MODEL_CASES = 10

# Small enough that a full finite-difference sweep over every parameter stays fast
GRADCHECK_MODEL = ModelConfig(d_v=3, d_a=2, d=4, d_h=3)


class CaseResult(NamedTuple):
    name: str
    seed: int
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


class Case(NamedTuple):
    fn: Callable[..., Array]
    inputs: List[np.ndarray]


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    # relu has a kink at 0; keep finite differences on one side of it
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


def _op_cases(rng: np.random.Generator) -> Dict[str, Case]:
    def weighted(shape):
        w = rng.normal(size=shape)
        return lambda out: total(out * w)

    w34, w43, w3, w12 = weighted((3, 4)), weighted((4, 3)), weighted((3,)), weighted((12,))
    return {
        "add": Case(lambda a, b: w34(a + b), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "add_broadcast": Case(lambda a, b: w34(a + b), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
        "sub": Case(lambda a, b: w34(a - b), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "mul": Case(lambda a, b: w34(a * b), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "neg": Case(lambda a: w34(-a), [rng.normal(size=(3, 4))]),
        "matmul": Case(lambda a, b: w34(matmul(a, b)), [rng.normal(size=(3, 5)), rng.normal(size=(5, 4))]),
        "transpose": Case(lambda a: w43(transpose(a)), [rng.normal(size=(3, 4))]),
        "reshape": Case(lambda a: w12(reshape(a, 12)), [rng.normal(size=(3, 4))]),
        "softmax_rows": Case(lambda a: w34(softmax_rows(a)), [rng.normal(size=(3, 4))]),
        "sigmoid": Case(lambda a: w34(sigmoid(a)), [rng.normal(size=(3, 4))]),
        "relu": Case(lambda a: w34(relu(a)), [_away_from_zero(rng, (3, 4))]),
        "log": Case(lambda a: w34(log(a)), [rng.uniform(0.5, 2.0, size=(3, 4))]),
        "log_sigmoid": Case(lambda a: w34(log_sigmoid(a)), [3.0 * rng.normal(size=(3, 4))]),
        "mean": Case(lambda a: mean(square(a)), [rng.normal(size=(3, 4))]),
        "index": Case(lambda a: w3(a[:, 1]), [rng.normal(size=(3, 4))]),
        "attention": Case(
            lambda q, k, v: w34(matmul(softmax_rows(matmul(q, transpose(k))), v)),
            [rng.normal(size=(3, 2)), rng.normal(size=(5, 2)), rng.normal(size=(5, 4))],
        ),
    }


def _model_case(seed: int) -> Case:
    """
    L_joint on a random video. The hallucination targets a^a and v^v are detached in the
    loss, so finite differences must see them as constants too: they are evaluated once at
    the unperturbed parameters and held fixed while the parameters move.
    """
    params = init_params(GRADCHECK_MODEL.model_copy(update={"seed": seed}))
    rng = derive_rng(seed, 7)
    n = 4
    video = FeatureSequence(
        f"gradcheck-{seed}",
        rng.normal(size=(n, GRADCHECK_MODEL.d_v)),
        rng.normal(size=(n, GRADCHECK_MODEL.d_a)),
        rng.uniform(0.0, 1.0, size=n),
    )
    names = params.names()
    reference = forward(params, video)
    audio_target = Array(reference.audio_self.numpy())
    visual_target = Array(reference.visual_self.numpy())

    def fn(*arrays: Array) -> Array:
        trace = forward(params.with_arrays(dict(zip(names, arrays))), video)
        l_pri = primary_loss_from_logits(trace.logits, video.targets)
        l_hal_va = mean(square(trace.hallucinated_audio - audio_target))
        l_hal_av = mean(square(trace.hallucinated_visual - visual_target))
        return l_pri + l_hal_av + l_hal_va

    return Case(fn, [params[name].data.copy() for name in names])


def run_gradcheck(seed: int = 0, op_seeds: int = OP_SEEDS, model_cases: int = MODEL_CASES) -> List[CaseResult]:
    """
    Runs every op case for `op_seeds` seeds and the joint-loss case for `model_cases` seeds.

    Returns:
        List[CaseResult]: One entry per case with its worst relative error.
    """
    results = []
    for offset in range(op_seeds):
        for name, case in _op_cases(derive_rng(seed + offset, 0)).items():
            results.append(CaseResult(name, seed + offset, gradcheck(case.fn, case.inputs, eps=EPS)))

    for offset in range(model_cases):
        case = _model_case(seed + offset)
        results.append(CaseResult("joint_loss", seed + offset, gradcheck(case.fn, case.inputs, eps=EPS)))

    failed = [r for r in results if not r.passed]
    worst = max(r.error for r in results)
    if failed:
        logger.error(f"{len(failed)}/{len(results)} gradient cases exceed {TOLERANCE:g}: {[r.name for r in failed]}")
    else:
        logger.info(f"All {len(results)} gradient cases passed (worst relative error {worst:.3e})")
    return results


def result_rows(results: Sequence[CaseResult]) -> List[dict]:
    return [{"case": r.name, "seed": r.seed, "relative_error": r.error, "passed": r.passed} for r in results]


if __name__ == "__main__":
    from src.main import main

    sys.exit(main(["gradcheck", *sys.argv[1:]]))
