"""Top-M metrics, 5G-NR SS-burst sweep timing and the overhead report."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_TOPM = (1, 5, 9, 13)


@dataclass(frozen=True)
class SweepTimingParams:
    t_burst: float = 5.0  # ms, one SS burst
    T_ssb: float = 20.0  # ms, burst periodicity
    blocks_per_burst: int = 32

    def __post_init__(self):
        if self.blocks_per_burst < 1:
            raise ValueError("blocks_per_burst must be >= 1")
        if self.T_ssb < self.t_burst:
            raise ValueError("burst periodicity must be at least the burst length")

    @property
    def t_ssb(self) -> float:
        return self.t_burst / self.blocks_per_burst


def exhaustive_sweep_time(n_beams: int, params: SweepTimingParams = SweepTimingParams()) -> float:
    """Milliseconds to sweep every codebook beam, one beam per SS block."""
    if n_beams < 1:
        raise ValueError("n_beams must be >= 1")
    return params.T_ssb * ((n_beams - 1) // params.blocks_per_burst) + params.t_burst


def predicted_sweep_time(m: int, params: SweepTimingParams = SweepTimingParams()) -> float:
    """Milliseconds to sweep only the M predicted candidates."""
    if m < 1:
        raise ValueError("M must be >= 1")
    b = params.blocks_per_burst
    return params.T_ssb * ((m - 1) // b) + params.t_ssb * (1 + (m - 1) % b)


def _check_pairs(truths, predicted_sets):
    if len(truths) != len(predicted_sets):
        raise ShapeError(f"{len(truths)} truths vs {len(predicted_sets)} predicted sets")
    for s in predicted_sets:
        if len(s) == 0:
            raise ShapeError("predicted sets must be non-empty")


def topm_accuracy(truths: Sequence[int], predicted_sets: Sequence[Iterable[int]]) -> float:
    """Hit rate: fraction of samples whose true beam is inside the predicted set."""
    predicted_sets = [set(s) for s in predicted_sets]
    _check_pairs(truths, predicted_sets)
    if len(truths) == 0:
        return float("nan")
    return sum(int(t) in s for t, s in zip(truths, predicted_sets)) / len(truths)


def topm_literal(truths: Sequence[int], predicted_sets: Sequence[Iterable[int]]) -> float:
    """Mean of |{truth} & set| / |set|, bounded above by 1/M."""
    predicted_sets = [set(s) for s in predicted_sets]
    _check_pairs(truths, predicted_sets)
    if len(truths) == 0:
        return float("nan")
    return sum(len({int(t)} & s) / len(s) for t, s in zip(truths, predicted_sets)) / len(truths)


@dataclass
class PowerRatio:
    value: float
    n_used: int
    n_skipped: int


def power_ratio_detail(profiles, predicted_sets) -> PowerRatio:
    profiles = [np.asarray(p, dtype=float) for p in profiles]
    if len(profiles) != len(predicted_sets):
        raise ShapeError(f"{len(profiles)} profiles vs {len(predicted_sets)} predicted sets")
    ratios = []
    skipped = 0
    for prof, pred in zip(profiles, predicted_sets):
        idx = np.fromiter((int(i) - 1 for i in pred), dtype=int)
        if idx.size == 0:
            raise ShapeError("predicted sets must be non-empty")
        if idx.min() < 0 or idx.max() >= prof.size:
            raise ShapeError(f"beam index outside 1..{prof.size}")
        gt = prof.max()
        if gt <= 0:
            skipped += 1
            continue
        ratios.append(prof[idx].max() / gt)
    value = float(np.mean(ratios)) if ratios else float("nan")
    return PowerRatio(value, len(ratios), skipped)


def power_ratio(profiles, predicted_sets) -> float:
    """Mean of (best power inside the predicted set) / (best power overall)."""
    return power_ratio_detail(profiles, predicted_sets).value


def oracle_sets(profiles, m: int) -> list[list[int]]:
    """Top-M beams straight from the power profiles (lowest index wins ties)."""
    out = []
    for p in profiles:
        p = np.asarray(p, dtype=float)
        order = np.argsort(-p, kind="stable")
        out.append([int(i) + 1 for i in order[:m]])
    return out


@dataclass
class EvalReport:
    n_beams: int
    n_samples: int
    topm: list[int]
    accuracy: dict[int, float]
    accuracy_literal: dict[int, float]
    power_ratio: dict[int, float]
    sweep_ms: dict[int, float]
    search_fraction: dict[int, float]
    exhaustive_ms: float
    skipped_zero_power: int = 0
    timing: SweepTimingParams = field(default_factory=SweepTimingParams)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("accuracy", "accuracy_literal", "power_ratio", "sweep_ms", "search_fraction"):
            d[key] = {str(k): v for k, v in d[key].items()}
        d["timing"]["t_ssb"] = self.timing.t_ssb
        d["overhead"] = overhead_report(self, self.n_beams)
        return d


def evaluate_predictions(
    truths: Sequence[int],
    profiles,
    ranked: Sequence[Sequence[int]],
    topm: Sequence[int] = DEFAULT_TOPM,
    params: SweepTimingParams = SweepTimingParams(),
) -> EvalReport:
    """Score ranked beam lists (best first) at every requested M."""
    n_beams = len(profiles[0]) if len(profiles) else 0
    acc, lit, pr, sweep, frac = {}, {}, {}, {}, {}
    skipped = 0
    for m in topm:
        if not 1 <= m <= n_beams:
            raise ValueError(f"M={m} outside 1..{n_beams}")
        sets = [list(r[:m]) for r in ranked]
        acc[m] = topm_accuracy(truths, sets)
        lit[m] = topm_literal(truths, sets)
        detail = power_ratio_detail(profiles, sets)
        pr[m] = detail.value
        skipped = detail.n_skipped
        sweep[m] = predicted_sweep_time(m, params)
        frac[m] = m / n_beams
    return EvalReport(
        n_beams=n_beams,
        n_samples=len(truths),
        topm=list(topm),
        accuracy=acc,
        accuracy_literal=lit,
        power_ratio=pr,
        sweep_ms=sweep,
        search_fraction=frac,
        exhaustive_ms=exhaustive_sweep_time(n_beams, params),
        skipped_zero_power=skipped,
        timing=params,
    )


def _pct(x: float) -> float:
    return round(100.0 * x, 4)


def overhead_report(report: EvalReport, n_beams: int) -> list[dict]:
    """Per-M latency and search-space savings versus one exhaustive sweep."""
    base = exhaustive_sweep_time(n_beams, report.timing)
    rows = []
    for m in report.topm:
        t = predicted_sweep_time(m, report.timing)
        rows.append(
            {
                "M": m,
                "sweep_ms": t,
                "exhaustive_ms": base,
                "time_saving_pct": _pct(1 - t / base),
                "search_fraction_pct": _pct(m / n_beams),
                "search_saving_pct": _pct(1 - m / n_beams),
                "accuracy_pct": _pct(report.accuracy[m]) if m in report.accuracy else None,
                "power_ratio_pct": _pct(report.power_ratio[m])
                if m in report.power_ratio and not math.isnan(report.power_ratio[m])
                else None,
            }
        )
    return rows


def curves_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["M", "accuracy", "accuracy_literal", "power_ratio", "sweep_ms", "search_fraction"])
    for m in report.topm:
        w.writerow(
            [m, repr(report.accuracy[m]), repr(report.accuracy_literal[m]), repr(report.power_ratio[m]),
             repr(report.sweep_ms[m]), repr(report.search_fraction[m])]
        )
    return buf.getvalue()


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def sweep_table(topm: Sequence[int], n_beams: int, params: SweepTimingParams = SweepTimingParams()) -> list[dict]:
    """Predicted-sweep rows for each M plus the exhaustive baseline row."""
    base = exhaustive_sweep_time(n_beams, params)
    rows = []
    for m in topm:
        t = predicted_sweep_time(m, params)
        rows.append({"kind": "predicted", "M": m, "sweep_ms": t,
                     "time_saving_pct": _pct(1 - t / base), "search_fraction_pct": _pct(m / n_beams)})
    rows.append({"kind": "exhaustive", "M": n_beams, "sweep_ms": base,
                 "time_saving_pct": 0.0, "search_fraction_pct": 100.0})
    return rows
