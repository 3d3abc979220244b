"""
Report writer
Key-value metrics reports, per-user CSV, paired ablation reports and
sensitivity sweep tables.

Report schema (one `key=value` per line, fixed order):
    method, seed, config_hash, n_users, then `<metric>@<K>` for every cutoff
    with metric in hr, ndcg, div, nov and one f<beta> entry per beta.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from evaluation import MetricsReport, PairedComparison

REPORT = "report.txt"
PER_USER = "per_user.csv"
ABLATION = "ablation.txt"
ABLATION_PER_USER = "ablation_per_user.csv"
SWEEP = "sweep.csv"

SWEEP_COLUMNS = ["parameter", "value", "f1@5", "f2@5", "f1@10", "f2@10", "mean_hypervolume",
                 "training_seconds", "run_seconds"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def report_lines(report: MetricsReport) -> List[str]:
    lines = [
        f"method={report.method}",
        f"seed={report.seed}",
        f"config_hash={report.config_hash}",
        f"n_users={report.n_users}",
    ]
    for k in sorted(report.values):
        for name, value in report.values[k].items():
            lines.append(f"{name}@{k}={value:.6f}")
    return lines


@dataclass
class AblationSummary:
    """Paired comparison of a transfer run against a no-transfer run"""
    hypervolume: PairedComparison
    fbeta: Dict[str, PairedComparison]
    per_user_hv: Dict[int, tuple]
    config_hash_transfer: str
    config_hash_plain: str
    report_transfer: MetricsReport
    report_plain: MetricsReport


class ReportWriter:
    """Writes evaluation reports into an output directory"""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.logger = logging.getLogger(self.__class__.__name__)

    def _write_text(self, name: str, lines: Sequence[str]) -> Path:
        path = self.out_dir / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def _write_csv(self, name: str, header: List[str], rows) -> Path:
        path = self.out_dir / name
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        return path

    def write_report(self, report: MetricsReport, name: str = REPORT) -> Path:
        path = self._write_text(name, report_lines(report))
        self.logger.info(f"Report written to {path}")
        return path

    def write_per_user(self, report: MetricsReport, name: str = PER_USER) -> Optional[Path]:
        if not report.per_user:
            return None
        header = list(report.per_user[0].keys())
        rows = [[_fmt(row[col]) for col in header] for row in report.per_user]
        return self._write_csv(name, header, rows)

    def write_ablation(self, summary: AblationSummary) -> List[Path]:
        """Both runs' provenance, hypervolume and F_beta win rates, per-user hypervolume"""
        hv = summary.hypervolume
        lines = [
            f"config_hash_transfer={summary.config_hash_transfer}",
            f"config_hash_plain={summary.config_hash_plain}",
            f"n_users={hv.n_users}",
            f"hypervolume_mean_transfer={hv.mean_a:.6f}",
            f"hypervolume_mean_plain={hv.mean_b:.6f}",
            f"hypervolume_wins={hv.wins}",
            f"hypervolume_ties={hv.ties}",
            f"hypervolume_losses={hv.losses}",
            f"hypervolume_win_rate={hv.win_rate:.6f}",
        ]
        for key, cmp in summary.fbeta.items():
            lines += [
                f"{key}_mean_transfer={cmp.mean_a:.6f}",
                f"{key}_mean_plain={cmp.mean_b:.6f}",
                f"{key}_win_rate={cmp.win_rate:.6f}",
            ]
        lines += [f"transfer.{line}" for line in report_lines(summary.report_transfer)]
        lines += [f"plain.{line}" for line in report_lines(summary.report_plain)]
        paths = [self._write_text(ABLATION, lines)]

        rows = [[user, f"{a:.6f}", f"{b:.6f}", f"{a - b:.6f}"]
                for user, (a, b) in sorted(summary.per_user_hv.items())]
        paths.append(self._write_csv(ABLATION_PER_USER,
                                     ["user", "hv_transfer", "hv_plain", "difference"], rows))
        self.logger.info(f"Ablation: transfer wins {hv.wins}/{hv.n_users} users on hypervolume")
        return paths

    def write_sweep(self, rows: Sequence[Mapping[str, object]], name: str = SWEEP) -> Path:
        """Sensitivity table; training_seconds and run_seconds are wall clock and vary between runs"""
        body = [[_fmt(row.get(col, "")) for col in SWEEP_COLUMNS] for row in rows]
        return self._write_csv(name, SWEEP_COLUMNS, body)
