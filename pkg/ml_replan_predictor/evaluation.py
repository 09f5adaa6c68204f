"""
Replanning decisions and their evaluation.

A record is replanned when the predicted saving reaches the threshold tau;
it truly benefits when its measured saving y reaches tau. Reports compare
realized savings (true y summed over replanned records) with the potential
(true y summed over truly beneficial records).
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix

import config
from features import FEATURE_NAMES

logger = logging.getLogger(__name__)

UNDEFINED = 'undefined'

FIGURE_FILES = [
    'fig_soc_scenarios.csv', 'fig_soc_increase_hist.csv', 'fig_savings_hist.csv',
    'fig_pred_vs_true.csv', 'fig_realized_abs.csv', 'fig_realized_rel.csv',
    'fig_perm_importance.csv',
]


def decide(pred: float, tau: float = config.DECISION_THRESHOLD) -> bool:
    """Replan iff the predicted saving is at least tau."""
    return pred >= tau


def _ratio(numerator: float, denominator: float) -> Optional[float]:
    return numerator / denominator if denominator else None


@dataclass
class ConfusionMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    sensitivity: Optional[float]
    specificity: Optional[float]
    precision: Optional[float]
    f1: Optional[float]


def confusion_metrics(decisions: Sequence[bool], truths: Sequence[float],
                      tau: float = config.DECISION_THRESHOLD) -> ConfusionMetrics:
    """
    Confusion counts and rates; the true class of a record is y >= tau.

    Rates with a zero denominator are None.
    """
    if len(decisions) != len(truths):
        raise ValueError(f"{len(decisions)} decisions for {len(truths)} truths")
    actual = [float(y) >= tau for y in truths]
    if not actual:
        tn = fp = fn = tp = 0
    else:
        tn, fp, fn, tp = (int(v) for v in confusion_matrix(actual, [bool(d) for d in decisions],
                                                            labels=[False, True]).ravel())
    sensitivity = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    if sensitivity is None or precision is None or sensitivity + precision == 0:
        f1 = None
    else:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    return ConfusionMetrics(tp, fp, tn, fn, sensitivity, _ratio(tn, tn + fp), precision, f1)


@dataclass
class RecordDecision:
    key: tuple
    predicted: Optional[float]
    y: float
    decision: bool
    cls: str  # TP, FP, TN, FN


@dataclass
class DecisionReport:
    tau: float
    rows: List[RecordDecision]
    metrics: ConfusionMetrics
    realized_savings: float
    potential_savings: float
    realized_savings_overhead: float
    recovery_rate: Optional[float]
    replan_count: int
    positive_count: int
    mean_saving_per_replan: Optional[float]
    mean_potential_per_positive: Optional[float]
    mean_relative_saving: Optional[float]
    no_increase_count: int
    relative_savings: List[float] = field(default_factory=list)


def build_report(records, decisions: Sequence[bool], tau: float = config.DECISION_THRESHOLD,
                 predictions: Optional[Sequence[float]] = None,
                 truth_threshold: Optional[float] = None) -> DecisionReport:
    """DecisionReport for given per-record decisions; the truth threshold defaults to tau."""
    truth_tau = tau if truth_threshold is None else truth_threshold
    ys = [record.y for record in records]
    metrics = confusion_metrics(decisions, ys, truth_tau)

    rows = []
    realized = potential = realized_overhead = 0.0
    relative = []
    no_increase = 0
    for i, (record, decision) in enumerate(zip(records, decisions)):
        positive = record.y >= truth_tau
        cls = ('TP' if positive else 'FP') if decision else ('FN' if positive else 'TN')
        rows.append(RecordDecision(record.key, None if predictions is None else float(predictions[i]),
                                   record.y, bool(decision), cls))
        if positive:
            potential += record.y
        if decision:
            realized += record.y
            realized_overhead += record.soc_ei - record.soc_eirp
            increase = record.soc_ei - record.soc_e
            if increase == 0:
                no_increase += 1
            else:
                relative.append(record.y / increase)

    replans = sum(1 for d in decisions if d)
    positives = sum(1 for y in ys if y >= truth_tau)
    return DecisionReport(
        tau=tau, rows=rows, metrics=metrics,
        realized_savings=realized, potential_savings=potential,
        realized_savings_overhead=realized_overhead,
        recovery_rate=_ratio(realized, potential) if potential > 0 else None,
        replan_count=replans, positive_count=positives,
        mean_saving_per_replan=_ratio(realized, replans),
        mean_potential_per_positive=_ratio(potential, positives),
        mean_relative_saving=float(np.mean(relative)) if relative else None,
        no_increase_count=no_increase, relative_savings=relative,
    )


def savings_report(records, model, tau: float = config.DECISION_THRESHOLD) -> DecisionReport:
    """Evaluate ``model`` as a replanning trigger on ``records``."""
    X = np.vstack([record.features for record in records]) if records else np.zeros((0, len(FEATURE_NAMES)))
    predictions = model.predict(X) if len(records) else np.zeros(0)
    decisions = [decide(p, tau) for p in predictions]
    return build_report(records, decisions, tau, predictions)


def random_trigger_report(records, replan_count: int, seed: int = 0,
                          tau: float = config.DECISION_THRESHOLD) -> DecisionReport:
    """Baseline: replan a uniformly random subset of ``replan_count`` records."""
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(records), size=min(replan_count, len(records)), replace=False).tolist()) \
        if records else set()
    return build_report(records, [i in chosen for i in range(len(records))], tau)


def threshold_sweep(records, predictions: Sequence[float], taus: Sequence[float],
                    truth_threshold: Optional[float] = config.DECISION_THRESHOLD) -> List[DecisionReport]:
    """Reports over a grid of decision thresholds against a fixed truth threshold."""
    return [build_report(records, [decide(p, tau) for p in predictions], tau, predictions, truth_threshold)
            for tau in taus]


def _fmt(value) -> str:
    if value is None:
        return UNDEFINED
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def report_lines(report: DecisionReport, prefix: str = '') -> List[str]:
    m = report.metrics
    entries = [
        ('tau', report.tau), ('records', len(report.rows)),
        ('tp', m.tp), ('fp', m.fp), ('tn', m.tn), ('fn', m.fn),
        ('sensitivity', m.sensitivity), ('specificity', m.specificity),
        ('precision', m.precision), ('f1', m.f1),
        ('replan_count', report.replan_count), ('positive_count', report.positive_count),
        ('realized_savings', report.realized_savings), ('potential_savings', report.potential_savings),
        ('recovery_rate', report.recovery_rate),
        ('realized_savings_with_overhead', report.realized_savings_overhead),
        ('mean_saving_per_replan', report.mean_saving_per_replan),
        ('mean_potential_per_positive', report.mean_potential_per_positive),
        ('mean_relative_saving', report.mean_relative_saving),
        ('no_increase_count', report.no_increase_count),
    ]
    return [f"{prefix}{key}: {_fmt(value)}" for key, value in entries]


def write_report(path: str, model_report: DecisionReport, baseline: Optional[DecisionReport] = None,
                 sweep: Sequence[DecisionReport] = (), extra: Optional[dict] = None):
    """Structured key: value text report."""
    lines = report_lines(model_report)
    if baseline is not None:
        lines += report_lines(baseline, 'random_trigger.')
    for report in sweep:
        lines.append(f"sweep tau={_fmt(float(report.tau))} replans={report.replan_count} "
                     f"recovery={_fmt(report.recovery_rate)} sensitivity={_fmt(report.metrics.sensitivity)} "
                     f"specificity={_fmt(report.metrics.specificity)}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {_fmt(value)}")
    _ensure_parent(path)
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')
    logger.info(f"Report written to {path}")


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def _write_csv(path: str, header: List[str], rows):
    _ensure_parent(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)


def histogram(values: Sequence[float], bins: int = config.HISTOGRAM_BINS):
    """(edges, counts) via numpy; empty input gives no bins."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return np.zeros(0), np.zeros(0, dtype=int)
    counts, edges = np.histogram(values, bins=bins)
    return edges, counts


def _histogram_rows(values, bins):
    edges, counts = histogram(values, bins)
    return [[_fmt(float(edges[i])), _fmt(float(edges[i + 1])), int(counts[i])] for i in range(len(counts))]


def write_figures(directory: str, records, report: DecisionReport,
                  importances=None, bins: int = config.HISTOGRAM_BINS) -> List[str]:
    """Data behind each evaluation figure, one CSV per figure. Returns the written paths."""
    paths = []

    def out(name):
        path = os.path.join(directory, name)
        paths.append(path)
        return path

    _write_csv(out('fig_soc_scenarios.csv'), ['map', 'agents', 'inst_seed', 'obs_seed', 'replan_seed',
                                               'soc_e', 'soc_ei', 'soc_eir', 'soc_eirp'],
               [list(map(str, r.key)) + [_fmt(r.soc_e), _fmt(r.soc_ei), _fmt(r.soc_eir), _fmt(r.soc_eirp)]
                for r in records])
    _write_csv(out('fig_soc_increase_hist.csv'), ['bin_left', 'bin_right', 'count'],
               _histogram_rows([r.soc_ei - r.soc_e for r in records], bins))
    _write_csv(out('fig_savings_hist.csv'), ['bin_left', 'bin_right', 'count'],
               _histogram_rows([r.y for r in records], bins))
    _write_csv(out('fig_pred_vs_true.csv'), ['map', 'agents', 'inst_seed', 'obs_seed', 'replan_seed',
                                              'predicted', 'y', 'decision', 'class'],
               [list(map(str, row.key)) + [_fmt(row.predicted), _fmt(row.y), int(row.decision), row.cls]
                for row in report.rows])

    decided = [(r.y, r.soc_ei - r.soc_eirp) for r, row in zip(records, report.rows) if row.decision]
    abs_rows = []
    if decided:
        values = np.array(decided)
        edges = np.histogram_bin_edges(values.ravel(), bins=bins)
        counts, _ = np.histogram(values[:, 0], bins=edges)
        counts_overhead, _ = np.histogram(values[:, 1], bins=edges)
        abs_rows = [[_fmt(float(edges[i])), _fmt(float(edges[i + 1])), int(counts[i]), int(counts_overhead[i])]
                    for i in range(len(counts))]
    _write_csv(out('fig_realized_abs.csv'), ['bin_left', 'bin_right', 'count', 'count_with_overhead'], abs_rows)
    rel_rows = _histogram_rows(report.relative_savings, bins)
    rel_rows.append(['no_increase', '', report.no_increase_count])
    _write_csv(out('fig_realized_rel.csv'), ['bin_left', 'bin_right', 'count'], rel_rows)

    if importances is not None:
        write_importance(out('fig_perm_importance.csv'), importances)
    logger.info(f"Wrote {len(paths)} figure files to {directory}")
    return paths


def write_importance(path: str, importances):
    """Per-feature MAE increase: mean, spread and every raw repeat."""
    mean, raw = importances
    _write_csv(path, ['feature', 'importance_mean', 'importance_std'] + [f'repeat_{i}' for i in range(raw.shape[1])],
               [[name, _fmt(float(mean[i])), _fmt(float(np.std(raw[i])))] + [_fmt(float(v)) for v in raw[i]]
                for i, name in enumerate(FEATURE_NAMES)])
