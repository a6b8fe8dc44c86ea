"""Evaluation metrics for generated structures: compliance error, volume
fraction error, load violation, floating material, plus aggregation and
paired significance testing.

Binarization threshold: densities above 0.5 count as material.  The same
constant is used everywhere a continuous design is binarized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import fea

BINARIZATION_THRESHOLD = 0.5

# Relative compliance errors beyond this are treated as degenerate
# (structure effectively disconnected from its supports) and flagged.
CE_CAP = 1e6


class EmptyTopologyError(ValueError):
    """Raised when a metric needs material but the topology has none."""


def binarize(densities: np.ndarray) -> np.ndarray:
    return np.asarray(densities) > BINARIZATION_THRESHOLD


def _shift_or(mask: np.ndarray, out: np.ndarray, dy: int, dx: int) -> None:
    h, w = mask.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] |= mask[ys, xs]


_OFFSETS_4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
_OFFSETS_8 = _OFFSETS_4 + ((1, 1), (1, -1), (-1, 1), (-1, -1))


def connected_components(mask: np.ndarray, connectivity: int = 8) -> int:
    """Count connected components of a boolean grid by frontier flood fill."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    offsets = _OFFSETS_8 if connectivity == 8 else _OFFSETS_4
    remaining = np.array(mask, dtype=bool)
    count = 0
    while remaining.any():
        count += 1
        seed = np.unravel_index(np.argmax(remaining), remaining.shape)
        comp = np.zeros_like(remaining)
        comp[seed] = True
        while True:
            grown = comp.copy()
            for dy, dx in offsets:
                _shift_or(comp, grown, dy, dx)
            grown &= remaining
            if np.array_equal(grown, comp):
                break
            comp = grown
        remaining &= ~comp
    return count


def floating_material(densities: np.ndarray, connectivity: int = 8) -> bool:
    """True when the binarized material splits into several components."""
    solid = binarize(densities)
    if not solid.any():
        raise EmptyTopologyError("topology has no material")
    return connected_components(solid, connectivity) >= 2


def load_violation(densities: np.ndarray, loads) -> bool:
    """True when some load node has no material in any adjacent element."""
    solid = binarize(densities)
    ny, nx = solid.shape
    for node, _, _ in loads:
        ix, iy = int(node) % (nx + 1), int(node) // (nx + 1)
        touched = [
            solid[ey, ex]
            for ey in (iy - 1, iy)
            for ex in (ix - 1, ix)
            if 0 <= ey < ny and 0 <= ex < nx
        ]
        if not any(touched):
            return True
    return False


def relative_compliance_error(c_true: float, c_gen: float) -> float:
    return (c_gen - c_true) / c_true


def compliance_error(gt_densities: np.ndarray, gen_densities: np.ndarray,
                     problem, penal: float = 3.0):
    """(CE, flagged, C(true), C(gen)) on binarized densities.

    Degenerate generated structures whose compliance blows up are recorded
    at CE_CAP with `flagged` set instead of raising.
    """
    domain, bc, loads = problem.domain, problem.bc, problem.loads
    c_true = fea.compliance(domain, bc, loads,
                            binarize(gt_densities).astype(np.float64), penal)
    c_gen = fea.compliance(domain, bc, loads,
                           binarize(gen_densities).astype(np.float64), penal)
    ce = relative_compliance_error(c_true, c_gen)
    if not np.isfinite(ce) or ce > CE_CAP:
        return CE_CAP, True, c_true, c_gen
    return ce, False, c_true, c_gen


def volume_fraction_error(gen_densities: np.ndarray, volume_fraction: float) -> float:
    achieved = float(binarize(gen_densities).mean())
    return abs(achieved - volume_fraction) / volume_fraction


@dataclass
class EvalRecord:
    problem_id: int
    ce: float
    vfe: float
    lv: float  # fraction in [0, 1]; a single sample yields 0.0 or 1.0
    fm: float
    c_true: float
    c_gen: float
    flagged: bool = False


def evaluate_topology(problem_id: int, gt_densities, gen_densities,
                      problem) -> EvalRecord:
    """All four metrics of one generated structure against its ground truth."""
    ce, flagged, c_true, c_gen = compliance_error(gt_densities, gen_densities,
                                                  problem)
    return EvalRecord(
        problem_id=problem_id,
        ce=ce,
        vfe=volume_fraction_error(gen_densities, problem.volume_fraction),
        lv=float(load_violation(gen_densities, problem.loads)),
        fm=float(floating_material(gen_densities)) if binarize(gen_densities).any() else 1.0,
        c_true=c_true,
        c_gen=c_gen,
        flagged=flagged,
    )


@dataclass
class Summary:
    n: int
    mean_ce: float
    ci_ce: float  # 95% half-width
    median_ce: float
    prop_ce_gt_30: float
    mean_vfe: float
    ci_vfe: float
    prop_lv: float
    prop_fm: float
    n_flagged: int = 0


def _t_halfwidth(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return float("nan")
    return float(stats.t.ppf(0.975, n - 1) * values.std(ddof=1) / np.sqrt(n))


def aggregate(records) -> Summary:
    """Means, medians, proportions and 95% t-intervals over eval records."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    ce = np.array([r.ce for r in records])
    vfe = np.array([r.vfe for r in records])
    return Summary(
        n=len(records),
        mean_ce=float(ce.mean()),
        ci_ce=_t_halfwidth(ce),
        median_ce=float(np.median(ce)),
        prop_ce_gt_30=float((ce > 0.30).mean()),
        mean_vfe=float(vfe.mean()),
        ci_vfe=_t_halfwidth(vfe),
        prop_lv=float(np.mean([r.lv for r in records])),
        prop_fm=float(np.mean([r.fm for r in records])),
        n_flagged=sum(1 for r in records if r.flagged),
    )


SUMMARY_ROWS = (
    ("Average Compliance Error (%)", lambda s: f"{100 * s.mean_ce:.2f} +/- {100 * s.ci_ce:.2f}"),
    ("Median Compliance Error (%)", lambda s: f"{100 * s.median_ce:.2f}"),
    ("Proportion of Compliance Error > 30% (%)", lambda s: f"{100 * s.prop_ce_gt_30:.2f}"),
    ("Average Volume Fraction Error (%)", lambda s: f"{100 * s.mean_vfe:.2f} +/- {100 * s.ci_vfe:.2f}"),
    ("Proportion of Load Violation (%)", lambda s: f"{100 * s.prop_lv:.2f}"),
    ("Proportion of Floating Material (%)", lambda s: f"{100 * s.prop_fm:.2f}"),
)


def format_summary_table(summaries: dict) -> str:
    """Text table with one column per named summary and the six metric rows."""
    names = list(summaries)
    label_w = max(len(label) for label, _ in SUMMARY_ROWS)
    col_w = max([len(n) for n in names] + [18])
    lines = [" " * label_w + "  " + "  ".join(n.rjust(col_w) for n in names)]
    for label, fmt in SUMMARY_ROWS:
        cells = [fmt(summaries[n]).rjust(col_w) for n in names]
        lines.append(label.ljust(label_w) + "  " + "  ".join(cells))
    return "\n".join(lines)


def paired_t_test(a, b, tail: str = "less"):
    """Paired t-test on per-problem metrics; returns (t, p).

    `tail`: "less"    alternative mean(a) < mean(b)
            "greater" alternative mean(a) > mean(b)
            "two"     two-sided.
    All-zero differences give t = 0 (one-tailed p = 0.5).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired test needs equal-length 1-d metric arrays")
    n = len(a)
    if n < 2:
        raise ValueError("paired test needs at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        t = 0.0 if d.mean() == 0.0 else float(np.sign(d.mean()) * np.inf)
    else:
        t = float(d.mean() / (sd / np.sqrt(n)))
    dist = stats.t(n - 1)
    if tail == "less":
        p = float(dist.cdf(t))
    elif tail == "greater":
        p = float(dist.sf(t))
    elif tail == "two":
        p = float(2.0 * dist.sf(abs(t)))
    else:
        raise ValueError(f"unknown tail {tail!r}")
    return t, p
