"""Meta-evaluation arithmetic: binarization, ROC AUC, bootstrap, preference accuracy.

Each benchmark's rater payload is reduced to binary (ta, sp) gold labels,
metric quality is ROC AUC per criterion (tie-aware rank statistic) with the
harmonic mean as a unified score, and metric comparisons use a paired
bootstrap of the AUC difference with a percentile confidence interval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CategoryTag, DomainError, ScorePair, harmonic_mean


class UndefinedAUCError(DomainError):
    """AUC is undefined: the labels contain only one class."""


@dataclass(frozen=True)
class BinaryGold:
    ta: int
    sp: int

    def __post_init__(self):
        if self.ta not in (0, 1) or self.sp not in (0, 1):
            raise DomainError("gold labels must be binary")


# --- binarization -----------------------------------------------------------

def binarize_dreambench(r1: int, r2: int) -> int:
    """Two 0-4 ratings are positive iff both reach 3 and at least one is a 4."""
    for r in (r1, r2):
        if not isinstance(r, (int, np.integer)) or not 0 <= r <= 4:
            raise DomainError(f"rating {r!r} outside 0-4")
    return int(min(r1, r2) >= 3 and max(r1, r2) == 4)


_IMAGENHUB_VOTES = {0, 0.5, 1}


def binarize_imagenhub(
    votes: tuple[float, float, float],
    override: dict | None = None,
    per_subject_sp: tuple[int, int] | None = None,
) -> BinaryGold:
    """Three adherence votes; positive for both criteria only on unanimity.

    Re-annotated instances carry an `override` with explicit ta/sp, which
    wins. Multi-subject instances pass per-subject sp labels; the final sp
    is their minimum (both subjects must be depicted).
    """
    if len(votes) != 3 or any(v not in _IMAGENHUB_VOTES for v in votes):
        raise DomainError(f"votes must be three of {{0, 0.5, 1}}, got {votes}")
    unanimous = int(all(v == 1 for v in votes))
    ta, sp = unanimous, unanimous
    if override is not None:
        ta = int(override.get("ta", ta))
        sp = int(override.get("sp", sp))
    if per_subject_sp is not None:
        if len(per_subject_sp) != 2:
            raise DomainError("per-subject sp needs exactly two labels")
        sp = min(int(per_subject_sp[0]), int(per_subject_sp[1]))
    return BinaryGold(ta=ta, sp=sp)


def binarize_kitten(ta_votes: list[int], sp_ratings: list[int]) -> BinaryGold:
    """Five binary ta votes (majority) and five 1-5 sp ratings.

    sp is positive iff at least 3 ratings are >= 4 AND the mean is >= 4.0.
    """
    if len(ta_votes) != 5 or len(sp_ratings) != 5:
        raise DomainError("expected exactly five votes and five ratings")
    if any(v not in (0, 1) for v in ta_votes):
        raise DomainError("ta votes must be binary")
    if any(not 1 <= r <= 5 for r in sp_ratings):
        raise DomainError("sp ratings must be in 1-5")
    ta = int(sum(ta_votes) >= 3)
    sp = int(sum(r >= 4 for r in sp_ratings) >= 3 and float(np.mean(sp_ratings)) >= 4.0)
    return BinaryGold(ta=ta, sp=sp)


def combine_multi_subject(scores_a: ScorePair, scores_b: ScorePair) -> ScorePair:
    """Per-criterion minimum across the two referenced subjects."""
    return ScorePair(ta=min(scores_a.ta, scores_b.ta),
                     sp=min(scores_a.sp, scores_b.sp),
                     scale=scores_a.scale)


# --- ROC AUC ---------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Tie-aware rank AUC: P(score_pos > score_neg) + 0.5 P(equal).

    Computed from midranks (Mann-Whitney U), which handles tied scores
    exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DomainError("scores and labels must be equal-length 1-D arrays")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("labels contain a single class")
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def unified_auc(ta_auc: float, sp_auc: float) -> float:
    """Unified evaluation: harmonic mean of the two per-criterion AUCs."""
    return harmonic_mean(ta_auc, sp_auc)


# --- bootstrap significance -------------------------------------------------

SMALL_SET_MULTIPLIER = 4


@dataclass
class BootstrapResult:
    verdict: str  # under | over | none
    ci_low: float
    ci_high: float
    n_bootstrap: int
    resample_size: int
    p_level: float
    mean_diff: float

    def __post_init__(self):
        if self.verdict not in ("under", "over", "none"):
            raise DomainError(f"unknown verdict {self.verdict!r}")
        if self.ci_low > self.ci_high:
            raise DomainError("CI bounds out of order")


def bootstrap_compare(
    ref_scores,
    other_scores,
    labels,
    n: int = 1000,
    seed: int = 0,
    min_sample: int = 100,
    p_level: float = 0.05,
    max_undefined_rate: float = 0.10,
) -> BootstrapResult:
    """Paired bootstrap of the AUC difference (other - ref) on shared instances.

    Instance sets smaller than `min_sample` are resampled at 4x their size so
    every resample carries enough signal. "under" / "over" mean the other
    metric's CI lies entirely below / above zero at the given level.
    """
    ref_scores = np.asarray(ref_scores, dtype=np.float64)
    other_scores = np.asarray(other_scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not (len(ref_scores) == len(other_scores) == len(labels)):
        raise DomainError("both metrics must be scored on identical instance sets")
    size = len(labels)
    if size == 0:
        raise DomainError("cannot bootstrap an empty instance set")
    resample_size = size * SMALL_SET_MULTIPLIER if size < min_sample else size

    rng = np.random.default_rng(seed)
    diffs = []
    undefined = 0
    for _ in range(n):
        idx = rng.integers(0, size, size=resample_size)
        sub_labels = labels[idx]
        try:
            diff = roc_auc(other_scores[idx], sub_labels) - roc_auc(ref_scores[idx], sub_labels)
        except UndefinedAUCError:
            undefined += 1
            continue
        diffs.append(diff)
    if undefined > max_undefined_rate * n:
        raise UndefinedAUCError(
            f"AUC undefined in {undefined}/{n} resamples (limit {max_undefined_rate:.0%})"
        )
    diffs = np.array(diffs)
    lo = float(np.percentile(diffs, 100 * p_level / 2))
    hi = float(np.percentile(diffs, 100 * (1 - p_level / 2)))
    if hi < 0:
        verdict = "under"
    elif lo > 0:
        verdict = "over"
    else:
        verdict = "none"
    return BootstrapResult(verdict, lo, hi, n, resample_size, p_level, float(diffs.mean()))


# --- pairwise preference accuracy ------------------------------------------

@dataclass
class PreferencePair:
    """One human-judged image pair with per-axis metric scores for each side.

    `human` maps axis ("ta" | "visual" | "overall") to the preferred side
    ("a" | "b"). `scores_a` / `scores_b` map "ta" and "visual" to that
    side's metric scores; the overall axis is derived, not stored.
    """

    pair_id: str
    human: dict[str, str]
    scores_a: dict[str, float]
    scores_b: dict[str, float]


def imagerag_accuracy(
    pairs: list[PreferencePair], rounding_decimals: int = 2
) -> tuple[dict[str, float], list[str]]:
    """Per-axis frequency of ranking the human-preferred image higher.

    Scores are rounded before comparison; a rounded tie credits 0.5. The
    overall axis compares harmonic_mean(ta, visual) per image. Pairs with a
    missing score on an axis are excluded from that axis with a warning.
    """
    axes = ("ta", "visual", "overall")
    correct = {axis: 0.0 for axis in axes}
    counted = {axis: 0 for axis in axes}
    warnings = []
    for pair in pairs:
        for axis in axes:
            if axis not in pair.human:
                raise DomainError(f"pair {pair.pair_id} lacks a human choice for {axis!r}")
            try:
                if axis == "overall":
                    a = harmonic_mean(pair.scores_a["ta"], pair.scores_a["visual"])
                    b = harmonic_mean(pair.scores_b["ta"], pair.scores_b["visual"])
                else:
                    a, b = pair.scores_a[axis], pair.scores_b[axis]
            except KeyError:
                warnings.append(f"pair {pair.pair_id}: missing score on axis {axis!r}")
                continue
            a, b = round(a, rounding_decimals), round(b, rounding_decimals)
            preferred = pair.human[axis]
            if preferred not in ("a", "b"):
                raise DomainError(f"human choice must be 'a' or 'b', got {preferred!r}")
            winner, loser = (a, b) if preferred == "a" else (b, a)
            counted[axis] += 1
            if winner > loser:
                correct[axis] += 1.0
            elif winner == loser:
                correct[axis] += 0.5
    accuracy = {
        axis: (correct[axis] / counted[axis]) if counted[axis] else float("nan")
        for axis in axes
    }
    return accuracy, warnings


# --- evaluation runs and reports -------------------------------------------

@dataclass
class EvalRun:
    """Joined (score, gold) rows for one benchmark, category, and metric."""

    benchmark: str
    category: str
    metric_name: str
    ta_scores: list[float]
    sp_scores: list[float]
    gold: list[BinaryGold]
    seed: int = 0

    def __post_init__(self):
        if not (len(self.ta_scores) == len(self.sp_scores) == len(self.gold)):
            raise DomainError("every row needs both scores and a gold label")

    def auc(self) -> dict[str, float]:
        ta = roc_auc(self.ta_scores, [g.ta for g in self.gold])
        sp = roc_auc(self.sp_scores, [g.sp for g in self.gold])
        return {"ta": ta, "sp": sp, "unified": unified_auc(ta, sp)}


@dataclass
class MetricRow:
    metric_name: str
    auc: dict[str, float]
    marks: dict[str, str] = field(default_factory=dict)  # criterion -> under|over|none
    ci: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass
class ComparisonReport:
    benchmark: str
    category: str
    reference_metric: str
    rows: list[MetricRow]
    n_bootstrap: int
    p_level: float

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "category": self.category,
            "reference_metric": self.reference_metric,
            "n_bootstrap": self.n_bootstrap,
            "p_level": self.p_level,
            "rows": [
                {
                    "metric": r.metric_name,
                    "auc": r.auc,
                    "marks": r.marks,
                    "ci": {k: list(v) for k, v in r.ci.items()},
                }
                for r in self.rows
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonReport":
        return cls(
            benchmark=d["benchmark"],
            category=d["category"],
            reference_metric=d["reference_metric"],
            rows=[
                MetricRow(
                    metric_name=r["metric"],
                    auc=r["auc"],
                    marks=r.get("marks", {}),
                    ci={k: tuple(v) for k, v in r.get("ci", {}).items()},
                )
                for r in d["rows"]
            ],
            n_bootstrap=d["n_bootstrap"],
            p_level=d["p_level"],
        )


_MARK_GLYPH = {"under": "v", "over": "^", "none": ""}


def render_report(
    runs: list[EvalRun],
    reference_metric: str | None = None,
    n_bootstrap: int = 1000,
    seed: int = 0,
    min_sample: int = 100,
    p_level: float = 0.05,
) -> tuple[ComparisonReport, str]:
    """Build the per-metric AUC report with significance marks vs a reference.

    All runs must share one benchmark + category. Returns the structured
    report and an aligned text table.
    """
    if not runs:
        raise DomainError("no evaluation runs to report")
    benchmark, category = runs[0].benchmark, runs[0].category
    if any(r.benchmark != benchmark or r.category != category for r in runs):
        raise DomainError("all runs in one report must share benchmark and category")

    by_metric = {r.metric_name: r for r in runs}
    ref_name = reference_metric or runs[0].metric_name
    if ref_name not in by_metric:
        raise DomainError(f"reference metric {ref_name!r} has no run")
    ref = by_metric[ref_name]

    rows = []
    for run in runs:
        row = MetricRow(run.metric_name, run.auc())
        if run.metric_name != ref_name:
            for criterion, scores, ref_scores in (
                ("ta", run.ta_scores, ref.ta_scores),
                ("sp", run.sp_scores, ref.sp_scores),
            ):
                gold = [getattr(g, criterion) for g in run.gold]
                result = bootstrap_compare(
                    ref_scores, scores, gold,
                    n=n_bootstrap, seed=seed, min_sample=min_sample, p_level=p_level,
                )
                row.marks[criterion] = result.verdict
                row.ci[criterion] = (result.ci_low, result.ci_high)
        rows.append(row)

    report = ComparisonReport(benchmark, category, ref_name, rows, n_bootstrap, p_level)
    return report, format_table(report)


def format_table(report: ComparisonReport) -> str:
    headers = ["metric", "TA", "SP", "Unified"]
    lines = [f"{report.benchmark} / {report.category} (ref: {report.reference_metric})"]
    body = []
    for row in report.rows:
        cells = [row.metric_name]
        for criterion in ("ta", "sp", "unified"):
            glyph = _MARK_GLYPH.get(row.marks.get(criterion, "none"), "")
            cells.append(f"{100 * row.auc[criterion]:.1f}{glyph}")
        body.append(cells)
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for cells in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines)


# --- annotation ingestion ---------------------------------------------------

def read_annotations(path: str | Path, benchmark: str) -> dict[str, BinaryGold]:
    """Read a benchmark's annotation JSONL into instance_id -> BinaryGold."""
    gold = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        iid = d["instance_id"]
        if benchmark == "DreamBenchPP":
            gold[iid] = BinaryGold(
                ta=binarize_dreambench(*d["ta_ratings"]),
                sp=binarize_dreambench(*d["sp_ratings"]),
            )
        elif benchmark == "ImagenHub":
            gold[iid] = binarize_imagenhub(
                tuple(d["votes"]),
                d.get("override"),
                tuple(d["per_subject_sp"]) if d.get("per_subject_sp") else None,
            )
        elif benchmark == "KITTEN":
            gold[iid] = binarize_kitten(d["ta_votes"], d["sp_ratings"])
        else:
            raise DomainError(f"unknown benchmark {benchmark!r}")
    return gold


def join_eval_run(
    benchmark: str,
    category: str,
    metric_name: str,
    score_rows: list[dict],
    gold: dict[str, BinaryGold],
    seed: int = 0,
) -> EvalRun:
    """Join score JSONL rows with gold labels, keeping only complete rows."""
    ta, sp, labels = [], [], []
    for row in score_rows:
        iid = row["instance_id"]
        if row.get("error") or iid not in gold:
            continue
        ta.append(row["ta"])
        sp.append(row["sp"])
        labels.append(gold[iid])
    return EvalRun(benchmark, category, metric_name, ta, sp, labels, seed)
