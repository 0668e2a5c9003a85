'''Central finite-difference verification of tape gradients.'''
import logging
import typing as t
from dataclasses import dataclass, field

import numpy as np

from unwarp.core.autodiff import NdValue, Tape, backward

LOG = logging.getLogger(__name__)

FINE_STEP_RATIO = 10.0


@dataclass
class GradcheckReport:
    checked: int = 0
    skipped_nonsmooth: int = 0
    max_rel_error: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def check_gradients(
    loss_fn: t.Callable[[], NdValue],
    inputs: t.Mapping[str, NdValue],
    h: float = 1e-4,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    '''
    Compares the tape gradient of `loss_fn()` with respect to each input
    against central differences with step `h`. An entry passes when its
    relative error is below `rtol` or its absolute error below `atol`.

    The quotient at `h` is also recomputed with a ten times finer step. On a
    smooth stretch the two agree far inside the tolerance; when they differ
    by more than half of it a kink (ReLU, abs) lies within `h` of the entry,
    which is then counted as skipped instead of compared. A correct tape
    gradient therefore never fails, and a wrong one fails wherever the loss
    is smooth. With `max_entries`, a seeded random subset of each input is
    checked.
    '''
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    analytic = {name: np.array(value.grad) for name, value in inputs.items()}

    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for name, value in inputs.items():
        flat = value.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, max_entries, replace=False))

        for index in indices:
            coarse = _central_difference(loss_fn, flat, int(index), h)
            fine = _central_difference(loss_fn, flat, int(index),
                                       h / FINE_STEP_RATIO)
            scale = max(abs(coarse), abs(fine))
            if abs(coarse - fine) > 0.5 * (atol + rtol * scale):
                report.skipped_nonsmooth += 1
                continue

            exact = float(analytic[name].reshape(-1)[index])
            abs_error = abs(exact - coarse)
            rel_error = abs_error / max(abs(exact), abs(coarse), 1e-300)
            report.checked += 1
            if abs_error < atol:
                continue
            report.max_rel_error = max(report.max_rel_error, rel_error)
            if rel_error >= rtol:
                report.failures.append(
                    f"{name}[{index}]: tape {exact:.6e} vs numeric {coarse:.6e}"
                )

    LOG.debug("Gradient check: %d entries compared, %d skipped at kinks, "
              "max relative error %.3e", report.checked,
              report.skipped_nonsmooth, report.max_rel_error)
    return report


def _central_difference(loss_fn: t.Callable[[], NdValue], flat: np.ndarray,
                        index: int, h: float) -> float:
    original = flat[index]
    try:
        flat[index] = original + h
        upper = loss_fn().item()
        flat[index] = original - h
        lower = loss_fn().item()
    finally:
        flat[index] = original
    return (upper - lower) / (2 * h)
