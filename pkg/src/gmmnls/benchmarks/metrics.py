"""Per-trial records, aggregation and the error metrics used by the studies."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ..lie import ManifoldElement, ominus, rotation_block, translation_block

CSV_COLUMNS = [
    "trial_id",
    "method",
    "converged",
    "success",
    "iterations",
    "rmse",
    "rmse_rot_deg",
    "rmse_trans_m",
    "anees_term",
    "wall_time_s",
]


@dataclass
class TrialRecord:
    trial_id: int
    method: str
    converged: bool
    success: bool
    iterations: int
    rmse: float
    rmse_rot_deg: Optional[float] = None
    rmse_trans_m: Optional[float] = None
    anees_term: Optional[float] = None
    wall_time_s: Optional[float] = None


@dataclass
class TrialAggregate:
    method: str
    n_trials: int
    rmse: float
    rmse_rot: Optional[float]
    rmse_trans: Optional[float]
    anees: Optional[float]
    anees_undefined: int
    success_rate: float
    avg_iterations: float
    wall_time: Optional[float]

    def to_dict(self):
        return asdict(self)


def rmse(estimates: Sequence[ManifoldElement], truths: Sequence[ManifoldElement]) -> float:
    """``sqrt(mean ||x_hat (-) x||^2)`` over paired states."""
    sq = [float(np.sum(ominus(a, b) ** 2)) for a, b in zip(estimates, truths, strict=True)]
    return math.sqrt(sum(sq) / len(sq))


def split_error(estimate: ManifoldElement, truth: ManifoldElement):
    """Rotation angle error (deg) and translation error norm of ``estimate (-) truth``."""
    e = ominus(estimate, truth)
    rot = math.degrees(float(np.linalg.norm(e[rotation_block(estimate.kind)])))
    trans = float(np.linalg.norm(e[translation_block(estimate.kind)]))
    return e, rot, trans


def nees(error, covariance) -> float:
    """Normalized estimation error squared divided by the state dimension."""
    error = np.atleast_1d(error)
    return float(error @ np.linalg.solve(covariance, error)) / error.size


def _rms(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return math.sqrt(sum(v * v for v in values) / len(values))


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def aggregate(records: Iterable[TrialRecord]) -> Dict[str, TrialAggregate]:
    by_method: Dict[str, List[TrialRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    out = {}
    for method, rs in by_method.items():
        anees_terms = [r.anees_term for r in rs]
        out[method] = TrialAggregate(
            method=method,
            n_trials=len(rs),
            rmse=_rms([r.rmse for r in rs]),
            rmse_rot=_rms([r.rmse_rot_deg for r in rs]),
            rmse_trans=_rms([r.rmse_trans_m for r in rs]),
            anees=_mean(anees_terms),
            anees_undefined=sum(t is None for t in anees_terms),
            success_rate=sum(r.success for r in rs) / len(rs),
            avg_iterations=sum(r.iterations for r in rs) / len(rs),
            wall_time=_mean([r.wall_time_s for r in rs]),
        )
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, str):
        return v
    return repr(v)


def write_csv(path, records: Iterable[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> List[TrialRecord]:
    types = {f.name: f.type for f in fields(TrialRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if v == "":
                    kw[k] = None
                elif k in ("trial_id", "iterations"):
                    kw[k] = int(v)
                elif k in ("converged", "success"):
                    kw[k] = v == "1"
                elif k == "method":
                    kw[k] = v
                else:
                    kw[k] = float(v)
            assert set(kw) == set(types)
            out.append(TrialRecord(**kw))
    return out


METHOD_LABELS = {"mm": "MM", "sm": "SM", "msm": "MSM", "hsm": "HSM"}


def _cell(v, fmt):
    return "n/a" if v is None else format(v, fmt)


def toy_table(aggs: Dict[str, TrialAggregate], dims: str) -> str:
    lines = [
        "| Dims. | Method | RMSE (m) | Avg Iter. | Time (s) | Succ. Rate [%] |",
        "|---|---|---|---|---|---|",
    ]
    for m, a in aggs.items():
        lines.append(
            f"| {dims} | {METHOD_LABELS.get(m, m)} | {_cell(a.rmse, '.2e')} | {a.avg_iterations:.1f} "
            f"| {_cell(a.wall_time, '.2e')} | {100 * a.success_rate:.1f} |"
        )
    return "\n".join(lines) + "\n"


def psr_table(aggs: Dict[str, TrialAggregate], dims: str) -> str:
    lines = [
        "| Dims. | Method | RMSE (deg) | RMSE (m) | ANEES | Avg Iter. | Time (s) |",
        "|---|---|---|---|---|---|---|",
    ]
    for m, a in aggs.items():
        lines.append(
            f"| {dims} | {METHOD_LABELS.get(m, m)} | {_cell(a.rmse_rot, '.2f')} | {_cell(a.rmse_trans, '.2f')} "
            f"| {_cell(a.anees, '.2f')} | {a.avg_iterations:.2f} | {_cell(a.wall_time, '.2f')} |"
        )
    return "\n".join(lines) + "\n"
