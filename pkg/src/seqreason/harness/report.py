"""CSV, SVG, and PGM/JSON outputs.

Condition CSV columns, one row per test condition:

    profile, pf, rule, condition_bitmask, n, successes, p, se, ci95, seed, config_hash

``condition_bitmask`` sets bit i when the i-th non-predictive feature (in
alphabetical order) is a distractor. Floats are written with ``repr`` so a
file parses back to identical values; re-running a profile with the same seed
rewrites the file byte for byte.

Problem CSV: profile, condition_idx, condition, problem_idx, seed, chosen,
answer, correct, final_loss, wall_time, diagnostic.

Curve CSV: mode, conflict_control, step, pf, n, successes, p, se, ci95,
network_std, n_networks.

Correlation CSV: setting, feature, layer, step, mean_abs_r, n_probes, n_degenerate.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

from ..analysis import ConditionResult, binomial_ci
from ..probgen import Feature, TestCondition
from ..raster import write_pgm
from .profiles import ExperimentProfile
from .runner import ProblemRow, SuiteResult, build_problem
from .sessions import ScheduleResult

CONDITION_COLUMNS = ("profile", "pf", "rule", "condition_bitmask", "n", "successes", "p", "se", "ci95", "seed",
                     "config_hash")
PROBLEM_COLUMNS = tuple(f.name for f in fields(ProblemRow))
CURVE_COLUMNS = ("mode", "conflict_control", "step", "pf", "n", "successes", "p", "se", "ci95", "network_std",
                 "n_networks")


class ReportError(OSError):
    pass


@dataclass(frozen=True)
class ConditionRow:
    profile: str
    pf: str
    rule: str
    condition_bitmask: int
    n: int
    successes: int
    p: float
    se: float
    ci95: float
    seed: int
    config_hash: str

    @classmethod
    def make(cls, profile: ExperimentProfile, cond: TestCondition, res: ConditionResult) -> ConditionRow:
        return cls(profile.name, cond.predictive.value, cond.rule.name, cond.bitmask, res.n, res.successes,
                   res.p, res.se, res.ci95, profile.base_seed, profile.config_hash())

    def check(self) -> None:
        ref = binomial_ci(self.successes, self.n)
        if (self.p, self.se, self.ci95) != (ref.p, ref.se, ref.ci95):
            raise ValueError(f"row {self} does not satisfy the binomial formulas")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write(path: Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def suite_rows(suite: SuiteResult) -> list[ConditionRow]:
    return [ConditionRow.make(suite.profile, r.condition, r.result) for r in suite.runs]


def write_condition_csv(rows: Sequence[ConditionRow], path) -> Path:
    if not rows:
        raise ValueError("no results to write")
    return _write(Path(path), CONDITION_COLUMNS, ([getattr(r, c) for c in CONDITION_COLUMNS] for r in rows))


def read_condition_csv(path) -> list[ConditionRow]:
    with open(path, newline="") as fh:
        out = []
        for d in csv.DictReader(fh):
            out.append(ConditionRow(d["profile"], d["pf"], d["rule"], int(d["condition_bitmask"]), int(d["n"]),
                                    int(d["successes"]), float(d["p"]), float(d["se"]), float(d["ci95"]),
                                    int(d["seed"]), d["config_hash"]))
    return out


def write_problem_csv(rows: Sequence[ProblemRow], path) -> Path:
    if not rows:
        raise ValueError("no results to write")
    return _write(Path(path), PROBLEM_COLUMNS, ([getattr(r, c) for c in PROBLEM_COLUMNS] for r in rows))


def read_problem_csv(path) -> list[ProblemRow]:
    with open(path, newline="") as fh:
        return [ProblemRow(d["profile"], int(d["condition_idx"]), d["condition"], int(d["problem_idx"]),
                           int(d["seed"]), int(d["chosen"]), int(d["answer"]), d["correct"] == "1",
                           float(d["final_loss"]), float(d["wall_time"]), d["diagnostic"])
                for d in csv.DictReader(fh)]


def write_curve_csv(results: Sequence[ScheduleResult], path) -> Path:
    if not results:
        raise ValueError("no results to write")
    rows = []
    for res in results:
        for pt in res.points:
            r = pt.result
            rows.append((res.schedule.mode, res.schedule.conflict_control, pt.step, pt.pf.value, r.n, r.successes,
                         r.p, r.se, r.ci95, pt.network_std, res.n_networks))
    return _write(Path(path), CURVE_COLUMNS, rows)


def write_table_csv(columns: Sequence[str], rows: Sequence[Sequence], path) -> Path:
    """Generic CSV for correlation and regression outputs."""
    if not rows:
        raise ValueError("no results to write")
    return _write(Path(path), columns, rows)


# SVG -------------------------------------------------------------------------------


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>", ""])


def _axes(x0, y0, w, h, body, title, ylabel="accuracy"):
    body.append(f'<text x="{x0 + w / 2:.1f}" y="{y0 - 8}" text-anchor="middle" font-size="13">{title}</text>')
    body.append(f'<line x1="{x0}" y1="{y0 + h}" x2="{x0 + w}" y2="{y0 + h}" stroke="black"/>')
    body.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y0 + h}" stroke="black"/>')
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y0 + h * (1 - t)
        body.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{x0}" y2="{y:.1f}" stroke="black"/>')
        body.append(f'<text x="{x0 - 6}" y="{y + 4:.1f}" text-anchor="end">{t:.2f}</text>')
    chance = y0 + h * 0.75
    body.append(f'<line x1="{x0}" y1="{chance:.1f}" x2="{x0 + w}" y2="{chance:.1f}" stroke="gray" '
                f'stroke-dasharray="4 3"/>')
    body.append(f'<text x="{x0 - 34}" y="{y0 + h / 2:.1f}" transform="rotate(-90 {x0 - 34} {y0 + h / 2:.1f})" '
                f'text-anchor="middle">{ylabel}</text>')


def bar_chart_svg(rows: Sequence[ConditionRow], path, title: str = "") -> Path:
    """One panel per (rule, predictive feature): 16 bars ordered by difficulty, 95% CI whiskers."""
    if not rows:
        raise ValueError("no results to plot")
    panels: dict[tuple[str, str], list[ConditionRow]] = {}
    for r in rows:
        panels.setdefault((r.rule, r.pf), []).append(r)
    pw, ph, margin = 360, 220, 60
    width = margin + len(panels) * (pw + margin)
    height = ph + 2 * margin + 20
    body: list[str] = []
    if title:
        body.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>')
    for i, ((rule, pf), prs) in enumerate(sorted(panels.items())):
        prs = sorted(prs, key=lambda r: (bin(r.condition_bitmask).count("1"), r.condition_bitmask))
        x0, y0 = margin + i * (pw + margin), margin
        _axes(x0, y0, pw, ph, body, f"{pf} ({rule})")
        bw = pw / max(len(prs), 1)
        for j, r in enumerate(prs):
            x = x0 + j * bw
            top = y0 + ph * (1 - r.p)
            body.append(f'<rect x="{x + 2:.1f}" y="{top:.1f}" width="{bw - 4:.1f}" height="{y0 + ph - top:.1f}" '
                        f'fill="#4a7ab5"/>')
            lo, hi = max(0.0, r.p - r.ci95), min(1.0, r.p + r.ci95)
            cx = x + bw / 2
            body.append(f'<line x1="{cx:.1f}" y1="{y0 + ph * (1 - hi):.1f}" x2="{cx:.1f}" '
                        f'y2="{y0 + ph * (1 - lo):.1f}" stroke="black"/>')
            d = bin(r.condition_bitmask).count("1")
            body.append(f'<text x="{cx:.1f}" y="{y0 + ph + 14}" text-anchor="middle" font-size="9">{d}</text>')
        body.append(f'<text x="{x0 + pw / 2:.1f}" y="{y0 + ph + 30}" text-anchor="middle">distractors</text>')
    return _save_svg(Path(path), _svg(width, height, body))


def line_chart_svg(series: dict[str, list[tuple[float, float, float]]], path, title: str = "",
                   xlabel: str = "training problems") -> Path:
    """Lines of (x, p, ci95) per named series, with CI whiskers."""
    if not series or not any(series.values()):
        raise ValueError("no results to plot")
    w, h, margin = 480, 260, 60
    xs = [x for pts in series.values() for x, _, _ in pts]
    xmin, xmax = min(xs), max(xs)
    span = (xmax - xmin) or 1.0
    body: list[str] = []
    _axes(margin, margin, w, h, body, title)
    colors = ["#4a7ab5", "#d0603a", "#3a9d5d", "#8a55b5"]
    for k, (name, pts) in enumerate(series.items()):
        c = colors[k % len(colors)]
        coords = [(margin + w * (x - xmin) / span, margin + h * (1 - p), ci) for x, p, ci in pts]
        body.append('<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>'.format(
            c, " ".join(f"{x:.1f},{y:.1f}" for x, y, _ in coords)))
        for (x, y, ci), (_, p, _) in zip(coords, pts):
            lo, hi = max(0.0, p - ci), min(1.0, p + ci)
            body.append(f'<line x1="{x:.1f}" y1="{margin + h * (1 - hi):.1f}" x2="{x:.1f}" '
                        f'y2="{margin + h * (1 - lo):.1f}" stroke="{c}"/>')
        body.append(f'<text x="{margin + w + 8}" y="{margin + 14 * (k + 1)}" fill="{c}">{name}</text>')
    body.append(f'<text x="{margin + w / 2:.1f}" y="{margin + h + 30}" text-anchor="middle">{xlabel}</text>')
    body.append(f'<text x="{margin}" y="{margin + h + 14}" text-anchor="middle">{xmin:g}</text>')
    body.append(f'<text x="{margin + w}" y="{margin + h + 14}" text-anchor="middle">{xmax:g}</text>')
    return _save_svg(Path(path), _svg(w + 2 * margin + 80, h + 2 * margin, body))


def curves_svg(result: ScheduleResult, path) -> Path:
    series = {pf.value: [(p.step, p.result.p, p.result.ci95) for p in result.curve(pf)] for pf in result.schedule.pfs}
    cc = "conflict control" if result.schedule.conflict_control else "no conflict control"
    return line_chart_svg(series, path, f"{result.schedule.mode}, {cc}")


def _save_svg(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# problem dumps ------------------------------------------------------------------------


def dump_problem(profile: ExperimentProfile, cond: TestCondition, seed: int, out_dir) -> list[Path]:
    """Render one problem to 9 PGM files plus its JSON manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {out}: {exc.strerror or exc}") from exc
    p, seq, choices = build_problem(profile, cond, seed)
    paths = [write_pgm(im, out / f"seq{i + 1}.pgm") for i, im in enumerate(seq)]
    paths += [write_pgm(im, out / f"choice{i}.pgm") for i, im in enumerate(choices)]
    manifest = {**p.to_dict(), "render": profile.render.to_dict()}
    mpath = out / "problem.json"
    mpath.write_text(json.dumps(manifest, indent=2) + "\n")
    return paths + [mpath]


def feature_of(name: str) -> Feature:
    try:
        return Feature(name.lower())
    except ValueError:
        raise ValueError(f"unknown feature {name!r}") from None


def parse_condition(text: str) -> TestCondition:
    """Parse a condition label such as ``number/linear/color+shape`` (rule optional, ``none`` for no distractors)."""
    from ..probgen import Rule, RuleKind

    parts = text.strip().split("/")
    if len(parts) == 2:
        parts = [parts[0], "linear", parts[1]]
    if len(parts) != 3:
        raise ValueError(f"expected pf/rule/distractors, got {text!r}")
    pf = feature_of(parts[0])
    kind, *params = parts[1].split("-")
    try:
        rule = Rule(RuleKind(kind), tuple(int(p) for p in params) if params else None)
    except ValueError:
        raise ValueError(f"unknown rule {parts[1]!r}") from None
    names = [] if parts[2] in ("", "none") else parts[2].split("+")
    return TestCondition(pf, rule, frozenset(feature_of(n) for n in names))
