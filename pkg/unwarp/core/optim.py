import math
import typing as t
from dataclasses import dataclass, field

import numpy as np

from unwarp.core.autodiff import ShapeError

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
WEIGHT_DECAY = 1e-2

# One-cycle start and end factors relative to the peak learning rate.
ONECYCLE_START_DIV = 25.0
ONECYCLE_FINAL_DIV = 1e4


@dataclass
class AdamWState:
    '''Per-parameter first and second moments plus the update count.'''
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @staticmethod
    def zeros_like(params: t.Mapping[str, np.ndarray]) -> "AdamWState":
        return AdamWState(m={k: np.zeros_like(p) for k, p in params.items()},
                          v={k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(
    params: t.Mapping[str, np.ndarray],
    grads: t.Mapping[str, np.ndarray],
    state: AdamWState,
    lr: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
    weight_decay: float = WEIGHT_DECAY,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    '''
    One AdamW update. Weight decay is decoupled: it scales the parameter
    directly instead of entering the gradient. Returns new parameter arrays
    and a new state; the inputs are left untouched.
    '''
    beta1, beta2 = betas
    step = state.step + 1
    bias1 = 1.0 - beta1**step
    bias2 = 1.0 - beta2**step

    new_params: dict[str, np.ndarray] = {}
    new_state = AdamWState(step=step)
    for name, param in params.items():
        grad = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m, v = np.zeros_like(param), np.zeros_like(param)
        if grad.shape != param.shape or m.shape != param.shape \
                or v.shape != param.shape:
            raise ShapeError(
                f"AdamW shapes disagree for {name}: param {param.shape}, "
                f"grad {grad.shape}, moments {m.shape}/{v.shape}")

        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + eps)
        decayed = param * (1.0 - lr * weight_decay)
        new_params[name] = (decayed - lr * update).astype(param.dtype)
        new_state.m[name] = m.astype(param.dtype)
        new_state.v[name] = v.astype(param.dtype)

    return new_params, new_state


def onecycle_lr(step: int,
                total_steps: int,
                max_lr: float,
                warmup_frac: float = 0.1) -> float:
    '''
    Linear warm-up from max_lr/25 to max_lr over the first `warmup_frac` of
    the steps, then cosine annealing down to max_lr/1e4 at the last step.
    '''
    if not 0 <= step < total_steps:
        raise ValueError(f"Step {step} outside schedule of {total_steps}")
    assert 0.0 < warmup_frac < 1.0

    start_lr = max_lr / ONECYCLE_START_DIV
    final_lr = max_lr / ONECYCLE_FINAL_DIV
    peak_step = max(1, round(warmup_frac * total_steps))
    if step <= peak_step:
        return max_lr - (max_lr - start_lr) * (1.0 - step / peak_step)

    last_step = total_steps - 1
    progress = (step - peak_step) / max(last_step - peak_step, 1e-12)
    progress = min(progress, 1.0)
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 +
                                                   math.cos(math.pi * progress))
