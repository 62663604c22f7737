"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GradientCheckError
from .autodiff import Tensor, kink_signature, no_grad, record_kinks


@dataclass
class ParamCheck:
    name: str
    size: int
    checked: int = 0
    excluded: int = 0
    max_rel_error: float = 0.0
    worst_index: tuple | None = None
    analytic: float = 0.0
    numeric: float = 0.0


@dataclass
class GradCheckReport:
    tolerance: float
    epsilon: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_error < self.tolerance and e.checked > 0 for e in self.entries)

    def worst(self, n=5):
        return sorted(self.entries, key=lambda e: -e.max_rel_error)[:n]

    def to_text(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [f"{'parameter':<{width}}  {'size':>6}  {'checked':>7}  {'kinks':>5}  {'max rel err':>11}  status"]
        for e in self.entries:
            ok = "PASS" if e.max_rel_error < self.tolerance and e.checked > 0 else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.size:>6}  {e.checked:>7}  {e.excluded:>5}  "
                         f"{e.max_rel_error:>11.3e}  {ok}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:g}, "
                     f"eps {self.epsilon:g}): {verdict}")
        return "\n".join(lines)


def _evaluate(objective_fn, arrays):
    with no_grad(), record_kinks() as log:
        value = objective_fn({k: Tensor(v) for k, v in arrays.items()})
    return float(value.data), kink_signature(log)


def finite_diff_check(objective_fn, params: dict, epsilon: float = 1e-5, tolerance: float = 1e-4,
                      max_entries: int | None = None, seed: int = 0,
                      abs_floor: float = 1e-6) -> GradCheckReport:
    """Compare backward() against central differences, entry by entry.

    ``objective_fn`` maps a dict of leaf tensors to a scalar tensor and must be
    deterministic. A probe whose +eps or -eps evaluation changes the branch
    pattern of any non-smooth op is counted as kink-adjacent and skipped.
    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``.

    ``max_entries`` caps how many entries per parameter are probed (chosen at
    random with ``seed``); ``None`` probes all of them.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in arrays.items()}
    with record_kinks() as log:
        out = objective_fn(leaves)
    base_sig = kink_signature(log)
    base_val = float(out.data)
    out.backward()

    again, sig_again = _evaluate(objective_fn, arrays)
    if again != base_val or sig_again != base_sig:
        raise GradientCheckError(
            f"objective is not deterministic: two evaluations gave {base_val!r} and {again!r}; "
            "run dropout in eval mode or with a fixed mask")

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance, epsilon=epsilon)
    for name, arr in arrays.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        entry = ParamCheck(name=name, size=arr.size)
        flat_idx = np.arange(arr.size)
        if max_entries is not None and arr.size > max_entries:
            flat_idx = np.sort(rng.choice(arr.size, size=max_entries, replace=False))
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + epsilon
            f_plus, sig_plus = _evaluate(objective_fn, arrays)
            arr[idx] = orig - epsilon
            f_minus, sig_minus = _evaluate(objective_fn, arrays)
            arr[idx] = orig
            if sig_plus != base_sig or sig_minus != base_sig:
                entry.excluded += 1
                continue
            num = (f_plus - f_minus) / (2 * epsilon)
            ana = float(analytic[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
            entry.checked += 1
            if err >= entry.max_rel_error:
                entry.max_rel_error = err
                entry.worst_index = tuple(int(i) for i in idx)
                entry.analytic, entry.numeric = ana, num
        report.entries.append(entry)
    return report
