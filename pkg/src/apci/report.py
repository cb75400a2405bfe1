"""Result serialization: JSON, fixed-layout text report, plot-data CSVs, and
rendered figures. All artifacts are written atomically (temp file + rename)
so a failed run leaves nothing partial behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .glm import TestResult, significance_stars
from .model import ApciResult, extract_patterns

STAR_NOTE = "***=p<0.001; ** = p < 0.01; * = p < 0.05"


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt_p(p: float) -> str:
    if p < 0.001:
        return "<0.001"
    return f"{p:6.3f}"


def _fmt_stat(x: float) -> str:
    if not np.isfinite(x):
        return "inf"
    return f"{x:.3f}"


def result_to_json(result: ApciResult, extra: dict | None = None) -> str:
    payload = result.to_dict()
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, allow_nan=True)


def pattern_rows_age(result: ApciResult) -> list[dict]:
    """Period-specific age curves plus the mains-only age curve."""
    rows = extract_patterns(result.fit, "age_by_period")
    rows += [r for r in extract_patterns(result.fit, "mains_only") if r["series"] == "age"]
    return rows


def pattern_rows_period(result: ApciResult) -> list[dict]:
    """Age-specific period curves plus the mains-only period curve."""
    rows = extract_patterns(result.fit, "period_by_age")
    rows += [r for r in extract_patterns(result.fit, "mains_only") if r["series"] == "period"]
    return rows


PATTERN_FIELDS = ("mode", "series", "x_index", "x_label", "linear_predictor", "value")


def patterns_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=PATTERN_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in PATTERN_FIELDS})
    return buf.getvalue()


def _test_line(test: TestResult) -> str:
    df2 = "" if test.df2 is None else f"  df2 = {test.df2:.0f}"
    return (
        f"{test.kind} = {_fmt_stat(test.statistic)}  df1 = {test.df1:.0f}{df2}"
        f"  p = {_fmt_p(test.p_value)} {significance_stars(test.p_value)}".rstrip()
    )


def render_report(result: ApciResult) -> str:
    fit = result.fit
    spec = fit.spec
    lines: list[str] = []
    w = lines.append
    w("Age-period-cohort interaction model report")
    w("=" * 43)
    w(f"Family: {fit.family.kind}    Coding: {fit.layout.coding.kind}")
    w(
        f"Observations: {fit.fit.n_obs}    Weighted N: {fit.fit.weighted_n:.1f}    "
        f"Grid: {spec.n_age} age x {spec.n_period} period groups"
    )
    w(
        f"Deviance: {fit.fit.deviance:.3f}    Residual df: {fit.fit.df_resid:.0f}    "
        f"IRLS iterations: {fit.fit.iterations}"
    )
    if fit.crossover:
        w("Warning: qualitative (cross-over) age-by-period interaction detected;")
        w("         interpret age and period main effects with caution.")
    w("")
    w("Global interaction test (cohort signal)")
    w("-" * 39)
    w("  " + _test_line(result.global_test))
    w("")
    w("Main effects (sum-to-zero scale)")
    w("-" * 32)
    w(f"{'Term':<10} {'Level':<12} {'Estimate':>9} {'SE':>8} {'p':>7}")
    w(
        f"{'intercept':<10} {'':<12} {fit.intercept:>9.3f} {fit.intercept_se:>8.4f} "
        f"{_fmt_p(fit.intercept_p):>7} {significance_stars(fit.intercept_p)}".rstrip()
    )
    for cov in fit.covariate_effects:
        for lv, est, se, p in zip(cov["levels"], cov["estimate"], cov["se"], cov["p"]):
            w(
                f"{cov['name']:<10} {lv:<12} {est:>9.3f} {se:>8.4f} "
                f"{_fmt_p(p):>7} {significance_stars(p)}".rstrip()
            )
    for label, est, se, p in zip(spec.age_labels, fit.age_effects, fit.age_se, fit.age_p):
        w(f"{'age':<10} {label:<12} {est:>9.3f} {se:>8.4f} {_fmt_p(p):>7} {significance_stars(p)}".rstrip())
    for label, est, se, p in zip(spec.period_labels, fit.period_effects, fit.period_se, fit.period_p):
        w(f"{'period':<10} {label:<12} {est:>9.3f} {se:>8.4f} {_fmt_p(p):>7} {significance_stars(p)}".rstrip())
    w("")
    w("Age-by-period interactions (per-cohort deviations)")
    w("-" * 51)
    header = f"{'':<10}" + "".join(f"{lab:>12}" for lab in spec.period_labels)
    w(header)
    for i, alab in enumerate(spec.age_labels):
        cells = []
        for j in range(spec.n_period):
            stars = significance_stars(fit.interaction_p[i, j])
            cells.append(f"{fit.interaction[i, j]:>8.3f}{stars:<4}")
        w(f"{alab:<10}" + "".join(cells))
    w("")
    w("Cohort deviation magnitude tests")
    w("-" * 32)
    w(f"{'Cohort':<10} {'o':>2} {'Statistic':>10} {'df1':>4} {'df2':>10} {'p':>7}")
    for rep in result.cohorts:
        t = rep.magnitude
        if t is None:
            w(f"{rep.label:<10} {rep.o:>2} {'NA (collinear)':>10}")
            continue
        w(
            f"{rep.label:<10} {rep.o:>2} {_fmt_stat(t.statistic):>10} {t.df1:>4.0f} "
            f"{t.df2:>10.0f} {_fmt_p(t.p_value):>7} {significance_stars(t.p_value)}".rstrip()
        )
    w("")
    w("Cohort summaries: average deviation and life-course trend")
    w("-" * 58)
    w(
        f"{'Cohort':<10} {'o':>2} {'Average':>9} {'p':>7} {'':3} {'Slope':>9} {'p':>7} {'':3} "
        f"{'Quadratic':>9} {'p':>7} {'':3} {'Classification':<22}"
    )
    for rep in result.cohorts:
        avg = rep.average
        avg_s = f"{avg.estimate:>9.3f} {_fmt_p(avg.p_value):>7} {significance_stars(avg.p_value):<3}"
        if rep.slope is not None:
            sl = rep.slope
            sl_s = f"{sl.estimate:>9.3f} {_fmt_p(sl.p_value):>7} {significance_stars(sl.p_value):<3}"
        else:
            sl_s = f"{'NA':>9} {'':>7} {'':<3}"
        if rep.quadratic is not None:
            q = rep.quadratic
            q_s = f"{q.estimate:>9.3f} {_fmt_p(q.p_value):>7} {significance_stars(q.p_value):<3}"
        else:
            q_s = f"{'NA':>9} {'':>7} {'':<3}"
        cls = rep.classification or "NA"
        flags = []
        if rep.short_cohort:
            flags.append("short")
        note = f" [{','.join(flags)}]" if flags else ""
        w(f"{rep.label:<10} {rep.o:>2} {avg_s} {sl_s} {q_s} {cls:<22}{note}".rstrip())
    w("")
    w(f"Significance: {STAR_NOTE}")
    w(f"Classification threshold: two-sided p < {result.alpha:g}")
    w("Notes: weights enter as precision weights (no survey-design variance adjustment);")
    w("       global and per-cohort tests are deviance-ratio F statistics; trend")
    w("       contrasts are unit-norm orthogonal polynomials with equal spacing.")
    w("")
    return "\n".join(lines)


def _series_in_order(rows: list[dict]) -> list[str]:
    seen: list[str] = []
    for r in rows:
        if r["series"] not in seen:
            seen.append(r["series"])
    return seen


def _pattern_figure(rows: list[dict], title: str, xlabel: str, ylabel: str):
    from matplotlib.figure import Figure

    fig = Figure(figsize=(7.2, 4.6), dpi=130)
    ax = fig.add_subplot(111)
    x_labels: dict[int, str] = {}
    for series in _series_in_order(rows):
        pts = [r for r in rows if r["series"] == series]
        pts.sort(key=lambda r: r["x_index"])
        xs = [r["x_index"] for r in pts]
        ys = [r["value"] for r in pts]
        for r in pts:
            x_labels[r["x_index"]] = r["x_label"]
        if pts[0]["mode"] == "mains_only":
            ax.plot(xs, ys, "k--", lw=1.8, label="main effects only")
        else:
            ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=str(series))
    ticks = sorted(x_labels)
    ax.set_xticks(ticks)
    ax.set_xticklabels([x_labels[t] for t in ticks], rotation=45, ha="right", fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.25)
    ax.legend(fontsize=7, ncol=2, frameon=False)
    fig.tight_layout()
    return fig


def _mains_figure(result: ApciResult):
    from matplotlib.figure import Figure

    rows = extract_patterns(result.fit, "mains_only")
    fig = Figure(figsize=(8.6, 3.8), dpi=130)
    for panel, series, xlabel in ((1, "age", "Age group"), (2, "period", "Period")):
        ax = fig.add_subplot(1, 2, panel)
        pts = [r for r in rows if r["series"] == series]
        ax.plot([r["x_index"] for r in pts], [r["value"] for r in pts], marker="o", ms=4, lw=1.4)
        ax.set_xticks([r["x_index"] for r in pts])
        ax.set_xticklabels([r["x_label"] for r in pts], rotation=45, ha="right", fontsize=8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("Expected outcome")
        ax.grid(alpha=0.25)
    fig.suptitle("Main-effect patterns (intercept plus one main-effect set)", fontsize=10)
    fig.tight_layout()
    return fig


def _figure_png(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png")
    return buf.getvalue()


def write_artifacts(
    result: ApciResult,
    out_dir,
    figures: bool = True,
    extra_json: dict | None = None,
) -> dict[str, Path]:
    """Write fit.json, report.txt, the two pattern CSVs, and (optionally) figures.

    All artifacts are rendered in memory first and committed together, so a
    failure anywhere leaves the output directory untouched.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ylabel = "Probability" if result.fit.family.is_logit else "Expected outcome"
    age_rows = pattern_rows_age(result)
    period_rows = pattern_rows_period(result)

    payloads: dict[str, bytes] = {
        "fit.json": result_to_json(result, extra_json).encode("utf-8"),
        "report.txt": render_report(result).encode("utf-8"),
        "patterns_age.csv": patterns_csv_text(age_rows).encode("utf-8"),
        "patterns_period.csv": patterns_csv_text(period_rows).encode("utf-8"),
    }
    if figures:
        payloads["patterns_age.png"] = _figure_png(
            _pattern_figure(age_rows, "Period-specific age patterns", "Age group", ylabel)
        )
        payloads["patterns_period.png"] = _figure_png(
            _pattern_figure(period_rows, "Age-specific period patterns", "Period", ylabel)
        )
        payloads["mains.png"] = _figure_png(_mains_figure(result))

    staged: list[tuple[str, Path]] = []
    try:
        for name, data in payloads.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=name + ".", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return {name: out / name for name in payloads}
