"""Tabulated comparison of run outputs against published reference values.

The targets live in data/reference_targets.json together with the per-row
tolerance policy, so tolerance changes are data-only.  Each table is emitted
as markdown plus a CSV twin with full-precision values, and a PNG figure.
Rebuilding from unchanged run outputs is byte-identical for the markdown and
the CSV (no timestamps anywhere).

Deviation convention: |computed - reference| / max(|reference|, 1e-6); the
pass/fail verdict is taken per row from its tolerance entry (relative,
absolute, or noise-floor against a named sibling run).  For the thrust table
a single fitted constant can rescale all computed entries before comparison
(least squares over the nonzero-reference rows); the constant is printed in
the output and flagged when it leaves the documented bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

_FLOOR = 1e-6


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _disp(x) -> str:
    if x is None:
        return "-"
    return format(float(x), ".4g")


def load_targets() -> dict:
    """Reference values and tolerance policy shipped with the package."""
    with resources.files("periprop.data").joinpath("reference_targets.json").open("rb") as f:
        return json.load(f)


@dataclass
class ComparisonRow:
    """One table row: computed value against its reference."""

    label: str
    computed: float | None
    reference: float | None
    deviation: float | None
    tolerance: str
    passed: bool | None
    note: str = ""

    @property
    def status(self) -> str:
        if self.passed is not None:
            return "pass" if self.passed else "FAIL"
        if self.computed is None:
            return "MISSING"
        return "info"


def deviation(computed: float, reference: float) -> float:
    return abs(computed - reference) / max(abs(reference), _FLOOR)


# ---------------------------------------------------------------------------
# run collection


def _read_json_runs(runs_dir: Path, prefix: str) -> dict:
    """Map (shape, force, h) -> record for every '<prefix>-*.json' output."""
    found = {}
    for path in sorted(runs_dir.glob(f"{prefix}-*.json")):
        if path.name.endswith(".manifest.json"):
            continue
        rec = json.loads(path.read_text())
        key = (rec.get("shape"), rec.get("force"), float(rec.get("h")))
        found[key] = rec
    return found


def _read_sweep_csv(runs_dir: Path, mode: str, shape: str, force: str) -> dict:
    """Map h -> value row dict from a sweep CSV; empty when absent."""
    path = runs_dir / f"sweep-{mode}-{shape}-{force}.csv"
    if not path.exists():
        return {}
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    rows = {}
    for ln in lines[1:]:
        cells = ln.split(",")
        if cells[1] == "NA":
            continue
        rec = dict(zip(header, cells))
        rows[float(rec["h"])] = rec
    return rows


# ---------------------------------------------------------------------------
# table builders


def _fit_constant(rows: list, values: dict) -> float | None:
    """Least-squares single constant c minimizing sum (c*computed - target)^2."""
    num = 0.0
    den = 0.0
    for row in rows:
        if row["target"] == 0.0:
            continue
        got = values.get((row["shape"], row["force"]))
        if got is None:
            continue
        num += row["target"] * got
        den += got * got
    if den == 0.0:
        return None
    return num / den


def _entry_table(spec: dict, runs: dict, normalize: bool):
    """Rows for table1/table3: one run per (shape, force) at fixed h."""
    h = float(spec["h"])
    value_key = spec["value"]
    values = {}
    for row in spec["rows"]:
        rec = runs.get((row["shape"], row["force"], h))
        if rec is not None:
            values[(row["shape"], row["force"])] = float(rec[value_key])

    scale = 1.0
    notes = []
    if normalize and spec.get("normalize"):
        c = _fit_constant(spec["rows"], values)
        if c is not None:
            scale = c
            lo, hi = spec.get("normalization_bounds", (None, None))
            inside = lo is not None and lo <= c <= hi
            notes.append(
                f"fitted normalization constant c = {_disp(c)} applied to all computed "
                f"entries (least squares over nonzero-reference rows); bounds "
                f"[{lo}, {hi}]: {'inside' if inside else 'OUTSIDE'}"
            )

    rows = []
    for row in spec["rows"]:
        key = (row["shape"], row["force"])
        label = f"{row['shape']}/{row['force']}"
        got = values.get(key)
        target = float(row["target"])
        tol = row["tol"]
        if got is None:
            rows.append(ComparisonRow(label, None, target, None, _tol_text(tol), None))
            continue
        scaled = scale * got
        dev = deviation(scaled, target)
        passed: bool | None
        note = ""
        if tol["type"] == "rel":
            passed = dev <= tol["value"]
        elif tol["type"] == "abs":
            passed = abs(scaled - target) <= tol["value"]
        elif tol["type"] == "noise":
            ref_key = tuple(tol["against"])
            ref_val = values.get(ref_key)
            if ref_val is None:
                passed = None
                note = f"noise floor needs {ref_key[0]}/{ref_key[1]}"
            else:
                passed = abs(scaled) <= tol["frac"] * abs(scale * ref_val)
        else:
            raise ValueError(f"unknown tolerance type {tol['type']!r}")
        if tol.get("soft"):
            note = (note + "; " if note else "") + "soft tolerance"
        rows.append(ComparisonRow(label, scaled, target, dev, _tol_text(tol), passed, note))

    for pair in spec.get("antisym_pairs", ()):
        a, b = pair["shapes"]
        for force in pair["forces"]:
            va, vb = values.get((a, force)), values.get((b, force))
            label = f"{a}+{b}/{force} sum"
            if va is None or vb is None:
                rows.append(ComparisonRow(label, None, 0.0, None, f"<= {pair['sum_frac']:g}*|{a}|", None))
                continue
            s = scale * (va + vb)
            bound = pair["sum_frac"] * abs(scale * va)
            rows.append(
                ComparisonRow(
                    label, s, 0.0, abs(s) / max(abs(scale * va), _FLOOR),
                    f"<= {pair['sum_frac']:g}*|{a}|", bool(abs(s) <= bound),
                )
            )

    ordering = spec.get("ordering")
    if ordering:
        force = ordering["force"]
        seq = [values.get((shp, force)) for shp in ordering["shapes"]]
        label = "ordering " + " < ".join(f"{s}/{force}" for s in ordering["shapes"])
        if any(v is None for v in seq):
            rows.append(ComparisonRow(label, None, None, None, "strict", None))
        else:
            ok = all(seq[i] < seq[i + 1] for i in range(len(seq) - 1))
            rows.append(ComparisonRow(label, None, None, None, "strict", ok, "values " + ", ".join(_disp(v) for v in seq)))
    return rows, notes


def _sweep_table(spec: dict, sweep: dict):
    """Rows for table2/table4 plus trend checks; sweep maps h -> record."""
    value_key = spec["value"]
    targets = {float(k): float(v) for k, v in spec["targets"].items()}
    tol = spec.get("tol")
    rows = []
    values = {}
    for h in sorted(targets):
        label = f"h={format(h, 'g')}"
        rec = sweep.get(h)
        if rec is None:
            rows.append(ComparisonRow(label, None, targets[h], None, _tol_text(tol), None))
            continue
        got = float(rec[value_key])
        values[h] = got
        dev = deviation(got, targets[h])
        passed = dev <= tol["value"] if tol else None
        rows.append(ComparisonRow(label, got, targets[h], dev, _tol_text(tol), passed))
    # extra computed points beyond the reference list still belong in the table
    for h in sorted(set(sweep) - set(targets)):
        values[h] = float(sweep[h][value_key])
        rows.append(ComparisonRow(f"h={format(h, 'g')}", values[h], None, None, "-", None))

    trend = spec.get("trend", {})
    if "dip_between" in trend:
        a, b = (float(x) for x in trend["dip_between"])
        label = f"dip: value(h={b:g}) < value(h={a:g})"
        if a in values and b in values:
            rows.append(ComparisonRow(label, None, None, None, "strict", bool(values[b] < values[a]),
                                      f"{_disp(values[b])} vs {_disp(values[a])}"))
        else:
            rows.append(ComparisonRow(label, None, None, None, "strict", None))
    if "ratio_band" in trend:
        lo, hi = trend["ratio_band"]
        start = float(trend.get("ratio_from", 0.0))
        for h in sorted(set(targets) | set(values)):
            if h < start or 2.0 * h not in set(targets) | set(values):
                continue
            label = f"ratio value(2h)/value(h) at h={format(h, 'g')}"
            if h not in values or 2.0 * h not in values:
                rows.append(ComparisonRow(label, None, None, None, f"[{lo}, {hi}]", None))
                continue
            ratio = values[2.0 * h] / values[h]
            rows.append(ComparisonRow(label, ratio, None, None, f"[{lo}, {hi}]",
                                      bool(lo <= ratio <= hi)))
    if trend.get("increasing"):
        hs = sorted(set(values) & set(targets))
        seq = [values[h] for h in hs]
        ok = all(seq[i] < seq[i + 1] for i in range(len(seq) - 1))
        rows.append(ComparisonRow("strictly increasing over reference h", None, None, None, "strict",
                                  ok if len(seq) >= 2 else None))
        if "growth_min" in trend:
            gmin = trend["growth_min"]
            for i in range(len(hs) - 1):
                r = seq[i + 1] / seq[i] if seq[i] != 0 else float("inf")
                rows.append(ComparisonRow(f"growth h={hs[i]:g} -> h={hs[i+1]:g}", r, None, None,
                                          f"> {gmin:g}", bool(r > gmin)))
    # ratio column for trend inspection mirrors the reference doubling ratios
    return rows, []


def _tol_text(tol) -> str:
    if tol is None:
        return "-"
    if tol["type"] == "rel":
        return f"rel {tol['value']:g}"
    if tol["type"] == "abs":
        return f"abs {tol['value']:g}"
    if tol["type"] == "noise":
        return f"<= {tol['frac']:g}*|{tol['against'][0]}/{tol['against'][1]}|"
    return "-"


def build_table(target_name: str, runs_dir: Path, normalize: bool = True):
    """Comparison rows plus header notes for one named table."""
    targets = load_targets()
    if target_name not in targets:
        raise ValueError(f"unknown report target {target_name!r}; expected one of {sorted(targets)}")
    spec = targets[target_name]
    if spec["kind"] == "linear":
        runs = _read_json_runs(runs_dir, "linear")
        return spec, *_entry_table(spec, runs, normalize)
    if spec["kind"] == "nonlinear":
        runs = _read_json_runs(runs_dir, "nonlinear")
        return spec, *_entry_table(spec, runs, normalize)
    if spec["kind"] == "sweep-linear":
        sweep = _read_sweep_csv(runs_dir, "linear", spec["shape"], spec["force"])
        return spec, *_sweep_table(spec, sweep)
    if spec["kind"] == "sweep-nonlinear":
        sweep = _read_sweep_csv(runs_dir, "nonlinear", spec["shape"], spec["force"])
        return spec, *_sweep_table(spec, sweep)
    raise ValueError(f"unknown table kind {spec['kind']!r}")


# ---------------------------------------------------------------------------
# rendering


def render_markdown(spec: dict, rows: list, notes: list) -> str:
    lines = [f"# {spec['title']}", ""]
    for note in notes:
        lines.append(f"- {note}")
    if notes:
        lines.append("")
    lines.append("| quantity | computed | reference | deviation | tolerance | status |")
    lines.append("|---|---|---|---|---|---|")
    for row in rows:
        lines.append(
            f"| {row.label} | {_disp(row.computed)} | {_disp(row.reference)} | "
            f"{_disp(row.deviation)} | {row.tolerance} | {row.status}"
            + (f" ({row.note})" if row.note else "")
            + " |"
        )
    lines.append("")
    n_missing = sum(1 for r in rows if r.status == "MISSING")
    n_fail = sum(1 for r in rows if r.passed is False)
    lines.append(f"rows: {len(rows)}; failing: {n_fail}; missing: {n_missing}")
    return "\n".join(lines) + "\n"


def render_csv(spec: dict, rows: list) -> str:
    lines = ["label,computed,reference,deviation,tolerance,status"]
    for row in rows:
        cells = [
            row.label,
            _fmt(row.computed) if row.computed is not None else "NA",
            _fmt(row.reference) if row.reference is not None else "NA",
            _fmt(row.deviation) if row.deviation is not None else "NA",
            row.tolerance.replace(",", ";"),
            row.status,
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def render_figure(spec: dict, rows: list, path: Path) -> None:
    """One PNG per table: bars for fixed-h tables, log-log curves for sweeps."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=130)
    if spec["kind"] in ("linear", "nonlinear"):
        data = [r for r in rows if r.reference is not None and "/" in r.label and "+" not in r.label]
        labels = [r.label for r in data]
        comp = [r.computed if r.computed is not None else float("nan") for r in data]
        ref = [r.reference for r in data]
        xs = range(len(data))
        ax.bar([x - 0.2 for x in xs], comp, width=0.4, label="computed")
        ax.bar([x + 0.2 for x in xs], ref, width=0.4, label="reference")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.axhline(0.0, color="k", lw=0.6)
        ax.set_ylabel(spec["value"])
    else:
        pts = [(float(r.label[2:]), r.computed, r.reference) for r in rows if r.label.startswith("h=")]
        hs = [p[0] for p in pts if p[1] is not None]
        cs = [p[1] for p in pts if p[1] is not None]
        hr = [p[0] for p in pts if p[2] is not None]
        rf = [p[2] for p in pts if p[2] is not None]
        ax.loglog(hs, [abs(c) for c in cs], "o-", label="computed")
        ax.loglog(hr, [abs(r) for r in rf], "s--", label="reference")
        ax.set_xlabel("Stokes number h")
        ax.set_ylabel(f"|{spec['value']}|")
    ax.set_title(spec["title"], fontsize=10)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_report(target: str, runs_dir: Path, out_path: Path, normalize: bool = True) -> int:
    """Build one table and write markdown, CSV, and PNG next to out_path."""
    spec, rows, notes = build_table(target, runs_dir, normalize=normalize)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(render_markdown(spec, rows, notes))
    csv_path = out_path.with_suffix(".csv")
    csv_path.write_text(render_csv(spec, rows))
    try:
        render_figure(spec, rows, out_path.with_suffix(".png"))
    except Exception as exc:  # figures are best-effort companions to the tables
        print(f"figure rendering failed: {exc}")
    missing = [r.label for r in rows if r.status == "MISSING"]
    for label in missing:
        print(f"MISSING: {label}")
    print(f"wrote {out_path} and {csv_path.name}")
    return 1 if missing else 0
