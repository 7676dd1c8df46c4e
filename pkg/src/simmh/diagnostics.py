"""Post-hoc summaries of stored chains.

Everything here is a pure function of trace arrays, so recomputing the
diagnostics from files written by a run reproduces the run-time summary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import traceio

__all__ = [
    "PIPTable",
    "ACF",
    "pip",
    "bayes_fdr_threshold",
    "cutoff_selection",
    "hamming_histogram",
    "autocorrelation",
    "total_variation",
    "empirical_distribution",
    "linear_summary",
    "dm_summary",
    "write_json",
]

HAMMING_LABELS = ("0", "1", "2", "3+")


@dataclass
class PIPTable:
    probabilities: np.ndarray
    n_samples: int


@dataclass
class ACF:
    lags: np.ndarray
    values: np.ndarray
    constant: bool = False


def _samples(trace) -> np.ndarray:
    """Per-iteration states (initial state excluded) from a trace or an array."""
    if hasattr(trace, "configs"):
        return trace.configs[1:]
    if hasattr(trace, "xi_matrices"):
        return trace.xi_matrices()[1:]
    return np.asarray(trace)


def pip(trace, burn_in: int) -> PIPTable:
    """Mean of the binary samples after ``burn_in`` iterations."""
    s = _samples(trace)
    if not 0 <= burn_in < s.shape[0]:
        raise ValueError("burn_in must be smaller than the number of samples")
    kept = s[burn_in:]
    return PIPTable(kept.mean(axis=0, dtype=float), kept.shape[0])


def bayes_fdr_threshold(pips, alpha: float = 0.05):
    """Largest PIP-ranked prefix whose mean ``1 - PIP`` stays at or below ``alpha``.

    Returns ``(selected flat indices in rank order, threshold)``; the
    threshold is the smallest selected PIP, or 1 when nothing is selected.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    flat = np.asarray(pips, dtype=float).ravel()
    order = np.argsort(-flat, kind="stable")
    fdr = np.cumsum(1.0 - flat[order]) / np.arange(1, flat.size + 1)
    ok = np.flatnonzero(fdr <= alpha + 1e-12)
    k = int(ok[-1]) + 1 if ok.size else 0
    sel = order[:k]
    return sel, float(flat[sel[-1]]) if k else 1.0


def cutoff_selection(pips, cutoff: float = 0.5) -> np.ndarray:
    """Flat indices with PIP strictly above ``cutoff``."""
    return np.flatnonzero(np.asarray(pips, dtype=float).ravel() > cutoff)


def hamming_histogram(d_h) -> np.ndarray:
    """Counts of jump sizes 0, 1, 2 and 3 or more."""
    d = np.asarray(getattr(d_h, "d_h", d_h), dtype=np.int64)
    return np.bincount(np.minimum(d, 3), minlength=4)[:4]


def autocorrelation(series, max_lag: int) -> ACF:
    """Biased sample autocorrelation up to ``max_lag``; constant series are flagged."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if not 0 <= max_lag < n:
        raise ValueError("need 0 <= max_lag < len(series)")
    lags = np.arange(max_lag + 1)
    xc = x - x.mean()
    c0 = float(xc @ xc) / n
    if c0 <= 0.0:
        return ACF(lags, np.full(max_lag + 1, np.nan), True)
    vals = np.array([float(xc[: n - k] @ xc[k:]) / n for k in lags]) / c0
    return ACF(lags, vals, False)


def empirical_distribution(configs: np.ndarray, P: int) -> np.ndarray:
    """Visit frequencies over the 2^P states, state index = sum_p bit_p 2^p."""
    codes = configs.astype(np.int64) @ (1 << np.arange(P, dtype=np.int64))
    return np.bincount(codes, minlength=2 ** P) / configs.shape[0]


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _rate(a: np.ndarray) -> float | None:
    return float(a.mean()) if a.size else None


def linear_summary(trace, burn_in: int, outdir=None, acf_maxlag: int = 50,
                   alpha: float = 0.05, extra: dict | None = None) -> dict:
    """Acceptance, Hamming, PIP and ACF summaries of a linear-model chain.

    With ``outdir`` the plot-ready CSV files and ``summary.json`` are written.
    """
    table = pip(trace, burn_in)
    sel, thr = bayes_fdr_threshold(table.probabilities, alpha)
    hist = hamming_histogram(trace.d_h[burn_in:])
    swaps = trace.swap_acc[burn_in:]
    acf = autocorrelation(trace.model_size[burn_in:], min(acf_maxlag, trace.T - burn_in - 1))
    summary = {
        "iterations": int(trace.T),
        "burn_in": int(burn_in),
        "flip_acceptance": float(trace.flip_acc[burn_in:].mean()),
        "swap_acceptance": _rate(swaps[swaps >= 0]),
        "hamming_histogram": dict(zip(HAMMING_LABELS, map(int, hist))),
        "final_lambda": float(trace.lam[-1]),
        "mean_model_size": float(trace.model_size[burn_in:].mean()),
        "fdr_alpha": alpha,
        "fdr_threshold": thr,
        "selected_fdr": sorted(int(i) for i in sel),
        "selected_cutoff_0.5": [int(i) for i in cutoff_selection(table.probabilities)],
        "acf_constant": acf.constant,
    }
    if extra:
        summary.update(extra)
    if outdir is not None:
        out = Path(outdir)
        traceio.write_columns(out / "pip.csv", {"predictor": np.arange(table.probabilities.size),
                                                "pip": table.probabilities})
        traceio.write_columns(out / "hamming_hist.csv",
                              {"dH": np.arange(4), "count": hist})
        traceio.write_columns(out / "lambda_trajectory.csv",
                              {"iteration": np.arange(1, trace.T + 1), "lambda": trace.lam})
        traceio.write_columns(out / "acf.csv", {"lag": acf.lags, "acf": acf.values})
        write_json(out / "summary.json", summary)
    return summary


def dm_summary(trace, burn_in: int, outdir=None, acf_maxlag: int = 50, alpha: float = 0.05,
               extra: dict | None = None) -> dict:
    """Acceptance, PIP matrix, FDR-selected associations and ACF for a DM chain."""
    table = pip(trace, burn_in)
    P, J = trace.P, trace.J
    sel, thr = bayes_fdr_threshold(table.probabilities, alpha)
    swaps = trace.swap_acc[burn_in:]
    acf = autocorrelation(trace.model_size[burn_in:], min(acf_maxlag, trace.T - burn_in - 1))
    assoc = sorted((int(i // J), int(i % J)) for i in sel)
    summary = {
        "iterations": int(trace.T),
        "burn_in": int(burn_in),
        "beta0_acceptance": float(trace.beta0_acc[burn_in:].mean()),
        "category_acceptance": [float(v) for v in trace.cat_acc[burn_in:].mean(axis=0)],
        "swap_acceptance": _rate(swaps[swaps >= 0]),
        "final_lambda": [float(v) for v in trace.lam[-1]],
        "mean_model_size": float(trace.model_size[burn_in:].mean()),
        "fdr_alpha": alpha,
        "fdr_threshold": thr,
        "selected_fdr": [list(a) for a in assoc],
        "selected_cutoff_0.5": [[int(i // J), int(i % J)]
                                for i in cutoff_selection(table.probabilities)],
        "acf_constant": acf.constant,
    }
    if extra:
        summary.update(extra)
    if outdir is not None:
        out = Path(outdir)
        pp, jj = np.divmod(np.arange(P * J), J)
        traceio.write_columns(out / "pip.csv", {"predictor": pp, "category": jj,
                                                "pip": table.probabilities.ravel()})
        lam_cols = {"iteration": np.arange(1, trace.T + 1)}
        lam_cols.update({f"lambda_{j}": trace.lam[:, j] for j in range(J)})
        traceio.write_columns(out / "lambda_trajectory.csv", lam_cols)
        traceio.write_columns(out / "selected.csv",
                              {"predictor": [a[0] for a in assoc],
                               "category": [a[1] for a in assoc],
                               "pip": [float(table.probabilities[a]) for a in assoc]})
        traceio.write_columns(out / "acf.csv", {"lag": acf.lags, "acf": acf.values})
        write_json(out / "summary.json", summary)
    return summary
