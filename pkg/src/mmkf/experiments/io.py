"""CSV and JSON output of experiment records."""
import csv
import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
BASE_COLUMNS = ["cycle", "phase", "method", "lead", "block", "rmse", "crps", "lambda"]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def summarize(records, burn_in):
    """Time mean and standard error per (method, phase, lead, block, metric).

    Only cycles after ``burn_in`` enter the statistics.
    """
    groups = {}
    for r in records:
        if r.cycle <= burn_in:
            continue
        key = (r.method, r.phase, round(float(r.lead), 10), r.block)
        groups.setdefault(key, {"rmse": [], "crps": []})
        groups[key]["rmse"].append(r.rmse)
        groups[key]["crps"].append(r.crps)
    out = []
    for (method, phase, lead, block), metrics in groups.items():
        for metric, values in metrics.items():
            v = np.asarray(values)
            stderr = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
            out.append({"method": method, "phase": phase, "lead": lead, "block": block,
                        "metric": metric, "mean": float(v.mean()), "stderr": stderr, "n": int(v.size)})
    return out


def lookup(summary, method, phase="analysis", metric="crps", block="all", lead=None):
    """Mean of one summary entry; ``lead=None`` matches any lead."""
    for row in summary:
        if (row["method"], row["phase"], row["metric"], row["block"]) == (method, phase, metric, block) \
                and (lead is None or abs(row["lead"] - lead) < 1e-9):
            return row["mean"]
    raise KeyError((method, phase, metric, block, lead))


def write_records(result, out_dir):
    """Write ``records.csv`` and ``summary.json`` into ``out_dir``.

    Returns the two paths. The CSV has a header and columns ``cycle, phase,
    method, lead, block, rmse, crps, lambda, qtrace_1..M``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M = result.n_models
    csv_path = out / "records.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BASE_COLUMNS + [f"qtrace_{m + 1}" for m in range(M)])
        for r in result.records:
            writer.writerow([r.cycle, r.phase, r.method, _fmt(float(r.lead)), r.block, _fmt(r.rmse),
                             _fmt(r.crps), _fmt(float(r.lam))] + [_fmt(float(q)) for q in r.qtrace])
    cfg = result.config
    summary = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.name,
        "kind": cfg.kind,
        "seed": cfg.seed,
        "cycles": cfg.cycles,
        "burn_in": cfg.burn_in,
        "statistics": summarize(result.records, cfg.burn_in),
    }
    json_path = out / "summary.json"
    json_path.write_text(json.dumps(summary, indent=2, allow_nan=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def read_records(path):
    """Read a records CSV back as a list of dicts (numbers as floats)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# schema_version="):
            raise ValueError("missing schema_version header line")
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key, value in row.items():
            if key not in ("phase", "method", "block"):
                row[key] = float(value)
    return rows
