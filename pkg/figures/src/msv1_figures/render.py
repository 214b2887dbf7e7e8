"""Render the two result figures from msv1-results JSON documents.

Inputs come from the evaluation harness: a single results file or a
directory of them (sections are merged across files). Two figures are
produced:

  * robustness_bars.pdf - grouped decode / WM-only / MSv1 verified rates
    per transform condition, in the order the results list them
    (mildest to harshest), with Wilson 95% error bars;
  * tradeoff_curve.pdf - WM-only verified rate under 20 dB noise against
    embedding SNR, one point per QIM step size, sorted by step size.

Each figure writes a CSV sidecar containing exactly the plotted numbers,
so regressions are byte-comparable without image diffing.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

SCHEMA = "msv1-results"
SCHEMA_VERSION = 1


class ResultsError(ValueError):
    pass


def _check_schema(doc: dict, source: str) -> None:
    meta = doc.get("meta", {})
    if meta.get("schema") != SCHEMA or meta.get("schema_version") != SCHEMA_VERSION:
        raise ResultsError(
            f"{source}: expected schema {SCHEMA!r} version {SCHEMA_VERSION}, "
            f"got {meta.get('schema')!r} version {meta.get('schema_version')!r}"
        )


def load_results(path: str | Path) -> dict:
    """Load one results file, or merge every *.json in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise ResultsError(f"{path}: no results JSON files found")
        merged: dict = {}
        for f in files:
            doc = json.loads(f.read_text(encoding="utf-8"))
            _check_schema(doc, str(f))
            for key, value in doc.items():
                if key == "meta":
                    merged.setdefault("meta", value)
                elif key in merged and merged[key] != value:
                    raise ResultsError(f"{f}: section {key!r} conflicts with an earlier file")
                else:
                    merged[key] = value
        return merged
    doc = json.loads(path.read_text(encoding="utf-8"))
    _check_schema(doc, str(path))
    return doc


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def render_robustness(robustness: list[dict], fig_dir: Path) -> None:
    conditions = [row["condition"] for row in robustness]
    series = ("decode", "wm_only", "msv1")
    labels = {"decode": "decode", "wm_only": "WM-only verified", "msv1": "MSv1 verified"}

    rows = []
    for row in robustness:
        out = [row["condition"]]
        for s in series:
            lo, hi = row[s]["wilson_ci"]
            out += [f"{row[s]['rate']:.6f}", f"{lo:.6f}", f"{hi:.6f}"]
        out.append(row[series[0]]["n"])
        rows.append(out)
    header = ["condition"]
    for s in series:
        header += [f"{s}_rate", f"{s}_lo", f"{s}_hi"]
    header.append("n")
    _write_csv(fig_dir / "robustness_bars.csv", header, rows)

    x = range(len(conditions))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(7.0, 1.1 * len(conditions)), 4.0))
    for k, s in enumerate(series):
        rates = [row[s]["rate"] for row in robustness]
        los = [row[s]["rate"] - row[s]["wilson_ci"][0] for row in robustness]
        his = [row[s]["wilson_ci"][1] - row[s]["rate"] for row in robustness]
        ax.bar(
            [xi + (k - 1) * width for xi in x],
            rates,
            width,
            yerr=[los, his],
            capsize=2,
            label=labels[s],
        )
    ax.set_xticks(list(x))
    ax.set_xticklabels(conditions, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("verified rate")
    ax.set_ylim(0, 1.05)
    ax.set_title("Verification rates under distribution transforms (Wilson 95% CIs)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(fig_dir / "robustness_bars.pdf")
    plt.close(fig)


def render_tradeoff(alpha_sweep: list[dict], fig_dir: Path) -> None:
    points = sorted(alpha_sweep, key=lambda row: row["alpha"])
    rows = []
    for row in points:
        entry = row["wm_only_noise20"]
        lo, hi = entry["wilson_ci"]
        rows.append(
            [
                f"{row['alpha']:.3f}",
                f"{row['snr_db']:.3f}",
                f"{entry['rate']:.6f}",
                f"{lo:.6f}",
                f"{hi:.6f}",
                entry["n"],
            ]
        )
    _write_csv(
        fig_dir / "tradeoff_curve.csv",
        ["alpha", "snr_db", "wm_only_rate", "wm_only_lo", "wm_only_hi", "n"],
        rows,
    )

    snrs = [row["snr_db"] for row in points]
    rates = [row["wm_only_noise20"]["rate"] for row in points]
    los = [row["wm_only_noise20"]["rate"] - row["wm_only_noise20"]["wilson_ci"][0] for row in points]
    his = [row["wm_only_noise20"]["wilson_ci"][1] - row["wm_only_noise20"]["rate"] for row in points]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(snrs, rates, yerr=[los, his], marker="o", capsize=3)
    for row in points:
        ax.annotate(
            f"α={row['alpha']:g}",
            (row["snr_db"], row["wm_only_noise20"]["rate"]),
            textcoords="offset points",
            xytext=(6, 4),
            fontsize=8,
        )
    ax.set_xlabel("embedding SNR (dB)")
    ax.set_ylabel("WM-only verified rate under 20 dB noise")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("Quality-robustness trade-off")
    ax.invert_xaxis()  # stronger embedding (lower SNR) to the right
    fig.tight_layout()
    fig.savefig(fig_dir / "tradeoff_curve.pdf")
    plt.close(fig)


def render(results_path: str | Path, fig_dir: str | Path) -> list[Path]:
    """Render both figures plus their CSV sidecars; returns written paths."""
    doc = load_results(results_path)
    missing = [key for key in ("robustness", "alpha_sweep") if key not in doc]
    if missing:
        raise ResultsError(f"results document lacks required sections: {', '.join(missing)}")
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    render_robustness(doc["robustness"], fig_dir)
    render_tradeoff(doc["alpha_sweep"], fig_dir)
    return [
        fig_dir / "robustness_bars.pdf",
        fig_dir / "robustness_bars.csv",
        fig_dir / "tradeoff_curve.pdf",
        fig_dir / "tradeoff_curve.csv",
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="make_results_figures",
        description="Render result figures from msv1-results JSON (file or directory).",
    )
    parser.add_argument("--results", required=True, help="Results JSON file, or directory of them.")
    parser.add_argument("--fig_dir", required=True, help="Output directory for figures and sidecars.")
    args = parser.parse_args(argv)
    try:
        written = render(args.results, args.fig_dir)
    except (ResultsError, OSError, json.JSONDecodeError) as exc:
        print(f"make_results_figures: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
