"""Aggregate result directories into markdown and CSV tables.

IQ runs become rows of UAR / κ / ρ per model and context length; RL runs
become rows of task success and average turns, mean ± sample standard
deviation over seeds.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .experiment import RESULTS_FILE, ResultsFile
from .models import IqRunResult, RlRunResult

IQ_COLUMNS = ["model", "max_context_turns", "n_dialogues", "n_turns", "uar", "kappa", "rho"]
RL_COLUMNS = [
    "domain", "reward", "estimator", "n_seeds",
    "success_mean", "success_std", "turns_mean", "turns_std",
    "return_mean", "return_std", "final_iq_mean",
]


class Report(NamedTuple):
    markdown: str
    iq_rows: list[dict]
    rl_rows: list[dict]


def load_results(dirs: Sequence[Union[str, Path]]) -> list[Union[IqRunResult, RlRunResult]]:
    if not dirs:
        raise ValueError("report needs at least one result directory")
    runs: list[Union[IqRunResult, RlRunResult]] = []
    for d in dirs:
        folder = Path(d)
        if not folder.is_dir():
            raise FileNotFoundError(f"result directory not found: {folder}")
        path = folder / RESULTS_FILE
        if not path.is_file():
            raise FileNotFoundError(f"{folder} holds no {RESULTS_FILE}")
        runs.extend(ResultsFile.model_validate_json(path.read_text()).runs)
    return runs


def mean_std(values: Sequence[float]) -> tuple[float, Optional[float]]:
    """Mean and sample standard deviation (None for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values to summarise")
    std = float(arr.std(ddof=1)) if arr.size > 1 else None
    return float(arr.mean()), std


def iq_row(run: IqRunResult) -> dict:
    return {
        "model": run.model,
        "max_context_turns": run.max_context_turns,
        "n_dialogues": run.n_dialogues,
        "n_turns": run.n_turns,
        "uar": run.uar,
        "kappa": run.kappa,
        "rho": run.rho,
    }


def rl_row(run: RlRunResult) -> dict:
    success = mean_std([s.success_rate for s in run.seeds])
    turns = mean_std([s.avg_turns for s in run.seeds])
    returns = mean_std([s.avg_return for s in run.seeds])
    return {
        "domain": run.domain,
        "reward": run.reward,
        "estimator": run.estimator,
        "n_seeds": len(run.seeds),
        "success_mean": success[0],
        "success_std": success[1],
        "turns_mean": turns[0],
        "turns_std": turns[1],
        "return_mean": returns[0],
        "return_std": returns[1],
        "final_iq_mean": mean_std([s.avg_final_iq for s in run.seeds])[0],
    }


def _pm(mean: float, std: Optional[float], scale: float = 1.0, digits: int = 2) -> str:
    text = f"{mean * scale:.{digits}f}"
    return text if std is None else f"{text} ± {std * scale:.{digits}f}"


def _percent(value: Optional[float]) -> str:
    return "n/a" if value is None or math.isnan(value) else f"{100 * value:.1f}%"


def markdown_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = [
        "| " + " | ".join(h.ljust(w) for h, w in zip(headers, widths)) + " |",
        "|" + "|".join("-" * (w + 2) for w in widths) + "|",
    ]
    lines += ["| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |" for r in rows]
    return "\n".join(lines)


def iq_markdown(rows: Sequence[dict]) -> str:
    return markdown_table(
        ["Model", "Context", "UAR", "κ", "ρ"],
        [
            [r["model"], str(r["max_context_turns"]), _percent(r["uar"]), _percent(r["kappa"]), _percent(r["rho"])]
            for r in rows
        ],
    )


def rl_markdown(rows: Sequence[dict]) -> str:
    return markdown_table(
        ["Domain", "Reward", "Estimator", "Task success (%)", "Avg. turns", "Avg. return", "Final IQ"],
        [
            [
                r["domain"], r["reward"].upper(), r["estimator"],
                _pm(r["success_mean"], r["success_std"], scale=100, digits=1),
                _pm(r["turns_mean"], r["turns_std"]),
                _pm(r["return_mean"], r["return_std"]),
                f"{r['final_iq_mean']:.2f}",
            ]
            for r in rows
        ],
    )


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """CSV with full-precision floats; missing values are empty cells."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in columns})
    return buffer.getvalue()


def build_report(dirs: Sequence[Union[str, Path]]) -> Report:
    runs = load_results(dirs)
    iq_rows = [iq_row(r) for r in runs if isinstance(r, IqRunResult)]
    rl_rows = [rl_row(r) for r in runs if isinstance(r, RlRunResult)]
    sections = []
    if iq_rows:
        sections.append("## IQ estimation\n\n" + iq_markdown(iq_rows))
    if rl_rows:
        sections.append("## Simulated dialogue policy learning\n\n" + rl_markdown(rl_rows))
    return Report("\n\n".join(sections) + "\n", iq_rows, rl_rows)


def write_report(report: Report, output_dir: Union[str, Path]) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.md"]
    written[0].write_text(report.markdown)
    if report.iq_rows:
        written.append(out / "iq_results.csv")
        written[-1].write_text(to_csv(report.iq_rows, IQ_COLUMNS))
    if report.rl_rows:
        written.append(out / "rl_results.csv")
        written[-1].write_text(to_csv(report.rl_rows, RL_COLUMNS))
    return written
