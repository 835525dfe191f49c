"""Evaluation analytics: normalized scoring, significance tests,
reward-hacking ratio curves, token-asymmetry reports and contamination
retrieval.

Score normalization assigns zero to failed executions so averages cover
the full test set rather than the executable survivors; the algebraic
identity normalized_mean = mean-over-executed * execution_rate holds to
machine precision.
"""

from __future__ import annotations

import csv
import io
import keyword
import math
import tokenize
from base64 import b64encode
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

from .embedding import nearest_neighbors
from .errors import EmptyInput, UnparseableScript
from .model import ChartSample


@dataclass(frozen=True)
class EvalRecord:
    """One benchmark measurement; failed executions carry score zero."""

    sample_id: str
    executed: bool
    score: float
    judge_id: str | None = None

    def __post_init__(self) -> None:
        if not self.executed and self.score != 0.0:
            raise ValueError("non-executed records must carry score 0")

    @classmethod
    def failed(cls, sample_id: str, judge_id: str | None = None) -> "EvalRecord":
        return cls(sample_id=sample_id, executed=False, score=0.0, judge_id=judge_id)


def execution_rate(records: Sequence[EvalRecord]) -> float:
    """Fraction of records whose code executed."""
    if not records:
        raise EmptyInput("no records")
    return sum(r.executed for r in records) / len(records)


def normalized_mean(records: Sequence[EvalRecord]) -> float:
    """Average score over ALL records, failed executions counting as zero."""
    if not records:
        raise EmptyInput("no records")
    return sum(r.score for r in records) / len(records)


def mean_over_executed(records: Sequence[EvalRecord]) -> float:
    """Average score over executed records only (0.0 when none executed)."""
    if not records:
        raise EmptyInput("no records")
    executed = [r.score for r in records if r.executed]
    if not executed:
        return 0.0
    return sum(executed) / len(executed)


@dataclass(frozen=True)
class PairedTResult:
    """Paired t-test outcome; degenerate when all differences are equal."""

    delta_mean: float
    t_stat: float | None
    p_value: float | None
    df: int
    degenerate: bool = False


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> PairedTResult:
    """Two-sided paired t-test on per-sample score differences (a - b).

    Uses the sample standard deviation (n-1); the p-value comes from the
    Student-t CDF through the regularized incomplete beta function.
    Zero-variance differences are reported as degenerate, not raised.
    """
    if len(a) != len(b):
        raise ValueError(f"paired inputs must align: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least two pairs")

    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = diffs.size
    df = n - 1
    sd = float(diffs.std(ddof=1))
    delta_mean = float(diffs.mean())
    if sd == 0.0:
        return PairedTResult(delta_mean=delta_mean, t_stat=None, p_value=None, df=df, degenerate=True)

    t_stat = delta_mean * math.sqrt(n) / sd
    p_value = float(special.betainc(df / 2.0, 0.5, df / (df + t_stat**2)))
    return PairedTResult(delta_mean=delta_mean, t_stat=t_stat, p_value=p_value, df=df)


@dataclass(frozen=True)
class RatioPoint:
    epoch: int
    consistency_per_pass: float | None
    visual_per_pass: float | None


def reward_hacking_curves(trace) -> list[RatioPoint]:
    """Per-epoch reward-per-executable-sample ratios from a training trace.

    Epochs with a zero pass rate emit None markers, never division faults.
    """
    points: list[RatioPoint] = []
    for row in trace:
        if row.pass_rate == 0:
            points.append(RatioPoint(epoch=row.epoch, consistency_per_pass=None, visual_per_pass=None))
        else:
            points.append(
                RatioPoint(
                    epoch=row.epoch,
                    consistency_per_pass=row.mean_r_qa / row.pass_rate,
                    visual_per_pass=row.mean_r_vis / row.pass_rate,
                )
            )
    return points


def ratio_csv(points: Sequence[RatioPoint], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "consistency_per_pass", "visual_per_pass"])
    for point in points:
        writer.writerow(
            [
                point.epoch,
                "" if point.consistency_per_pass is None else repr(point.consistency_per_pass),
                "" if point.visual_per_pass is None else repr(point.visual_per_pass),
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# Token-asymmetry analyzer
# ---------------------------------------------------------------------------

CATEGORIES = ("boilerplate", "data_definition", "visual_config", "plotting_calls", "other")

#: Style keyword arguments whose name, '=' and value tokens count as visual
#: configuration; aliases map to the canonical tracked attribute.
STYLE_KWARGS = {
    "color": "color",
    "c": "color",
    "facecolor": "color",
    "edgecolor": "color",
    "marker": "marker",
    "fontsize": "fontsize",
    "linewidth": "linewidth",
    "lw": "linewidth",
    "linestyle": "linestyle",
    "ls": "linestyle",
    "alpha": "alpha",
    "cmap": "color",
    "markersize": "marker",
}

TRACKED_ATTRIBUTES = ("color", "marker", "fontsize", "linewidth", "linestyle", "alpha")

# Rule table, applied line-first then token-level overrides.  Axis-limit and
# tick calls count as visual configuration; save/show/layout calls count as
# boilerplate template alongside imports and figure init.
_FIGURE_INIT = ("plt.figure(", "plt.subplots(", "add_subplot(", "plt.style.use(", "matplotlib.use(", "sns.set")
_SAVE_SHOW = ("savefig(", ".show(", "plt.show(", "tight_layout(", "plt.close(")
_AXIS_TEXT = (
    ".title(", "set_title(", "xlabel(", "ylabel(", "set_xlabel(", "set_ylabel(",
    "legend(", "xticks(", "yticks(", "set_xlim(", "set_ylim(", ".axis(",
    "grid(", "annotate(", ".text(", "colorbar(", "suptitle(", "set_xticklabels(",
    "set_yticklabels(",
)
_PLOT_CALLS = (
    ".plot(", ".bar(", ".barh(", ".scatter(", ".hist(", ".pie(", ".boxplot(",
    ".errorbar(", ".fill_between(", ".imshow(", ".contour(", ".contourf(",
    ".stackplot(", ".step(", ".quiver(", ".violinplot(", ".pcolormesh(", ".plot_surface(",
)
_DATA_CONSTRUCTORS = (
    "np.array(", "np.linspace(", "np.arange(", "np.zeros(", "np.ones(",
    "np.random.", "pd.DataFrame(", "pd.Series(", "range(", "np.meshgrid(",
)


def _classify_line(line: str) -> str:
    stripped = line.strip()
    if stripped.startswith("import ") or stripped.startswith("from "):
        return "boilerplate"
    if any(pattern in stripped for pattern in _FIGURE_INIT):
        return "boilerplate"
    if any(pattern in stripped for pattern in _SAVE_SHOW):
        return "boilerplate"
    if any(pattern in stripped for pattern in _PLOT_CALLS):
        return "plotting_calls"
    if any(pattern in stripped for pattern in _AXIS_TEXT):
        return "visual_config"
    if any(pattern in stripped for pattern in _DATA_CONSTRUCTORS):
        return "data_definition"
    if "=" in stripped:
        rhs = stripped.split("=", 1)[1].strip()
        starts_literal = bool(rhs) and (
            rhs[0] in "[({"
            or rhs[0].isdigit()
            or (rhs[0] in "+-." and rhs[1:2].isdigit())
        )
        if starts_literal:
            return "data_definition"
    return "other"


def _real_tokens(script: str) -> list[tokenize.TokenInfo]:
    wanted = {tokenize.NAME, tokenize.NUMBER, tokenize.STRING, tokenize.OP, tokenize.COMMENT}
    try:
        tokens = list(tokenize.generate_tokens(io.StringIO(script).readline))
    except (tokenize.TokenError, IndentationError, SyntaxError) as exc:
        raise UnparseableScript(f"cannot tokenize script: {exc}") from exc
    return [t for t in tokens if t.type in wanted]


@dataclass(frozen=True)
class TokenCategoryReport:
    """Token-composition shares plus per-attribute Top-3 value coverage."""

    counts: dict
    total_tokens: int
    shares: dict
    attribute_value_share: float
    top3_coverage: dict
    attribute_values: dict
    skipped_scripts: int = 0

    def __post_init__(self) -> None:
        if self.total_tokens:
            if abs(sum(self.shares.values()) - 1.0) > 1e-9:
                raise ValueError("category shares must sum to 1")
            visual_related = self.shares["visual_config"] + self.shares["plotting_calls"]
            if self.attribute_value_share > visual_related + 1e-12:
                raise ValueError("attribute values cannot outnumber visual-related tokens")


def token_asymmetry_report(corpus: Sequence[str]) -> TokenCategoryReport:
    """Classify every token of every script into the five supervision
    categories and measure how concentrated style-attribute values are.

    Line context decides the base category (imports / figure init / save
    lines are boilerplate; plot-API call lines are plotting calls; axis,
    tick and text calls are visual configuration; literal and constructor
    assignments are data definition).  Inside call lines, style keyword
    arguments (name, '=', value) override to visual configuration, and
    bracketed literal arrays override to data definition.  Unparseable
    scripts are counted and skipped.
    """
    if not corpus:
        raise EmptyInput("no scripts to analyze")

    counts = Counter({cat: 0 for cat in CATEGORIES})
    attribute_values: dict[str, Counter] = {attr: Counter() for attr in TRACKED_ATTRIBUTES}
    attribute_value_tokens = 0
    skipped = 0

    for script in corpus:
        try:
            tokens = _real_tokens(script)
        except UnparseableScript:
            skipped += 1
            continue

        lines = script.splitlines()
        i = 0
        while i < len(tokens):
            token = tokens[i]
            if token.type == tokenize.COMMENT:
                counts["boilerplate"] += 1
                i += 1
                continue

            line_text = lines[token.start[0] - 1] if token.start[0] - 1 < len(lines) else ""
            line_category = _classify_line(line_text)

            # Style kwarg override: NAME '=' value inside a call line.
            if (
                token.type == tokenize.NAME
                and token.string in STYLE_KWARGS
                and not keyword.iskeyword(token.string)
                and i + 2 < len(tokens)
                and tokens[i + 1].string == "="
                and line_category in ("plotting_calls", "visual_config")
            ):
                value_token = tokens[i + 2]
                counts["visual_config"] += 3
                canonical = STYLE_KWARGS[token.string]
                if canonical in attribute_values and value_token.type in (
                    tokenize.STRING,
                    tokenize.NUMBER,
                    tokenize.NAME,
                ):
                    attribute_values[canonical][value_token.string.strip("\"'")] += 1
                    attribute_value_tokens += 1
                i += 3
                continue

            # Literal array override on plotting-call lines: [1, 2, 3] spans
            # count as data definition.
            if (
                token.string == "["
                and line_category == "plotting_calls"
                and i > 0
                and tokens[i - 1].string in ("(", ",", "=", "[")
            ):
                depth = 0
                j = i
                while j < len(tokens):
                    if tokens[j].string == "[":
                        depth += 1
                    elif tokens[j].string == "]":
                        depth -= 1
                        if depth == 0:
                            break
                    j += 1
                span = tokens[i : j + 1] if j < len(tokens) else tokens[i:]
                counts["data_definition"] += len(span)
                i += len(span)
                continue

            counts[line_category] += 1
            i += 1

    total = sum(counts.values())
    if total == 0:
        raise EmptyInput("corpus contained no classifiable tokens")

    shares = {cat: counts[cat] / total for cat in CATEGORIES}
    top3: dict[str, float | None] = {}
    for attr in TRACKED_ATTRIBUTES:
        counter = attribute_values[attr]
        occurrences = sum(counter.values())
        if occurrences == 0:
            top3[attr] = None
        else:
            top3[attr] = sum(c for _, c in counter.most_common(3)) / occurrences

    return TokenCategoryReport(
        counts=dict(counts),
        total_tokens=total,
        shares=shares,
        attribute_value_share=attribute_value_tokens / total,
        top3_coverage=top3,
        attribute_values={attr: dict(counter) for attr, counter in attribute_values.items()},
        skipped_scripts=skipped,
    )


# ---------------------------------------------------------------------------
# Contamination reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContaminationRow:
    test_id: str
    best_train_id: str
    best_score: float
    matches: tuple


@dataclass(frozen=True)
class ContaminationReport:
    rows: tuple
    percentiles: dict
    encoder_ids: tuple

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["test_id", "best_train_id", "avg_score"])
        for row in self.rows:
            writer.writerow([row.test_id, row.best_train_id, repr(row.best_score)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def contamination_report(
    test_set: Sequence[ChartSample],
    train_set: Sequence[ChartSample],
    *,
    encoders: Sequence,
    top_k: int = 5,
) -> ContaminationReport:
    """Retrieve nearest training charts for every test chart.

    Scores are per-encoder cosine similarities averaged across the encoder
    list; summary percentiles describe the best-match distribution.
    """
    if not test_set or not train_set:
        raise EmptyInput("test and train sets must be non-empty")

    def embed_all(samples: Sequence[ChartSample]) -> list[dict]:
        return [
            {encoder.encoder_id: encoder.embed(sample.image) for encoder in encoders}
            for sample in samples
        ]

    matches = nearest_neighbors(embed_all(test_set), embed_all(train_set), top_k=top_k)
    rows = []
    best_scores = []
    for sample, neighbor_list in zip(test_set, matches):
        best = neighbor_list[0]
        best_scores.append(best.score)
        rows.append(
            ContaminationRow(
                test_id=sample.id,
                best_train_id=train_set[best.index].id,
                best_score=best.score,
                matches=tuple((train_set[m.index].id, m.score) for m in neighbor_list),
            )
        )

    scores = np.asarray(best_scores)
    percentiles = {
        "p50": float(np.percentile(scores, 50)),
        "p90": float(np.percentile(scores, 90)),
        "p99": float(np.percentile(scores, 99)),
        "max": float(scores.max()),
    }
    return ContaminationReport(
        rows=tuple(rows),
        percentiles=percentiles,
        encoder_ids=tuple(encoder.encoder_id for encoder in encoders),
    )


def contamination_gallery(
    report: ContaminationReport,
    test_set: Sequence[ChartSample],
    train_set: Sequence[ChartSample],
    path: str | Path,
    limit: int = 24,
) -> Path:
    """Write a static side-by-side HTML gallery of the closest pairs."""
    test_by_id = {s.id: s for s in test_set}
    train_by_id = {s.id: s for s in train_set}
    ranked = sorted(report.rows, key=lambda r: -r.best_score)[:limit]

    def img_tag(sample: ChartSample) -> str:
        data = b64encode(sample.image).decode("ascii")
        return f'<img src="data:image/png;base64,{data}" width="320"/>'

    parts = [
        "<html><head><title>Contamination check</title></head><body>",
        f"<h1>Closest test/train pairs (encoders: {', '.join(report.encoder_ids)})</h1>",
    ]
    for row in ranked:
        parts.append(
            f"<div><h3>{row.test_id} &harr; {row.best_train_id} "
            f"(score {row.best_score:.4f})</h3>"
            f"{img_tag(test_by_id[row.test_id])} {img_tag(train_by_id[row.best_train_id])}</div>"
        )
    parts.append("</body></html>")

    path = Path(path)
    path.write_text("\n".join(parts))
    return path
