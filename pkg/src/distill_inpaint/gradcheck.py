"""Central finite-difference gradient checking in float64."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, _collect, backward, no_grad


@dataclass
class GradcheckReport:
    max_rel_err: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    tol: float = 1e-3

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def ok(self) -> bool:
        return self.worst < self.tol

    def merge(self, other: "GradcheckReport", prefix: str = "") -> None:
        for k, v in other.max_rel_err.items():
            key = prefix + k
            self.max_rel_err[key] = max(v, self.max_rel_err.get(key, 0.0))
            self.checked[key] = self.checked.get(key, 0) + other.checked[k]
            self.skipped[key] = self.skipped.get(key, 0) + other.skipped.get(k, 0)

    def lines(self) -> list[str]:
        return [f"{k:<48s} max_rel_err={v:.3e} ({self.checked[k]} coords, {self.skipped.get(k, 0)} at kinks) "
                f"{'ok' if v < self.tol else 'FAIL'}" for k, v in self.max_rel_err.items()]


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


# ops whose derivative jumps somewhere, with the input quantity that locates the jump
_KINKS = {
    "elu": lambda n: n.inputs[0].data > 0,
    "abs": lambda n: n.inputs[0].data > 0,
    "sample_bilinear": lambda n: np.floor(np.concatenate([n.inputs[1].data, n.inputs[2].data])),
    # tap base positions are integers, so the interpolation cell is set by floor(offset)
    "adaptive_conv": lambda n: np.floor(n.inputs[2].data),
}


def kink_signature(loss: Tensor) -> bytes:
    """Which side of every derivative discontinuity the graph of ``loss`` sits on."""
    if loss.node is None:
        return b""
    parts = [_KINKS[n.op](n).tobytes() for n in _collect(loss.node) if n.op in _KINKS]
    return b"".join(parts)


def gradcheck(f: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
              names: Optional[Sequence[str]] = None, max_coords: Optional[int] = None,
              rng: Optional[np.random.Generator] = None, floor: float = 1e-6, tol: float = 1e-3,
              skip_kinks: bool = False) -> GradcheckReport:
    """Compare backward() against central differences for every input needing grad.

    ``f`` maps the input tensors to a scalar loss and must be deterministic.
    Inputs are used in place (cast them to float64 beforehand for meaningful
    results). With ``max_coords`` only that many randomly chosen coordinates
    per input are perturbed.

    With ``skip_kinks`` a coordinate whose +/- eps evaluations land on
    different sides of a derivative discontinuity (ELU or abs changing
    branch, a bilinear read changing cell) is replaced by another one; the
    central difference is not an estimate of the derivative there.
    """
    rng = rng or np.random.default_rng(0)
    names = list(names) if names is not None else [f"input{i}" for i in range(len(inputs))]
    for t in inputs:
        t.grad = None
    loss = f(inputs)
    backward(loss)
    report = GradcheckReport(tol=tol)

    def evaluate():
        if not skip_kinks:
            with no_grad():
                return f(inputs).item(), b""
        out = f(inputs)
        return out.item(), kink_signature(out)

    for name, t in zip(names, inputs):
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        wanted = flat.size if max_coords is None else min(max_coords, flat.size)
        order = np.arange(flat.size) if wanted == flat.size else rng.permutation(flat.size)
        worst, checked, skipped = 0.0, 0, 0
        for i in order:
            if checked == wanted:
                break
            orig = flat[i]
            flat[i] = orig + eps
            fp, sp = evaluate()
            flat[i] = orig - eps
            fm, sm = evaluate()
            flat[i] = orig
            if sp != sm:
                skipped += 1
                continue
            numeric = (fp - fm) / (2 * eps)
            worst = max(worst, rel_error(float(analytic.reshape(-1)[i]), numeric, floor))
            checked += 1
        report.max_rel_err[name] = worst
        report.checked[name] = checked
        report.skipped[name] = skipped
    return report
