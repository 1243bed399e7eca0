"""Fidelity and drug-response metrics.

Distribution distance between feature sets uses the Gaussian Frechet form
  d^2 = |mu_A - mu_B|^2 + Tr(S_A + S_B - 2 (S_A S_B)^{1/2});
the matrix square root is taken by eigendecomposition of the symmetrized
product sqrt(S_A) S_B sqrt(S_A), with a small diagonal jitter applied only
when that product has eigenvalues below -1e-8.

Concordance scores agreement between real and generated reports on an
indicator's normal/abnormal status; "abnormal" is the positive class, so
recall measures sensitivity to drug effects.  The composite rule marks a
pair correct only when every indicator in the regimen's rule set agrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .delineation import IntervalReport
from .ode import EcgSignal

_JITTER = 1e-6
_NEGATIVE_EIG_TOL = -1e-8

INDICATORS = ("qtc", "pr", "tpte")


def _mean_cov(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError(f"feature set must be 2-D (n, dim), got {feats.shape}")
    if feats.shape[0] == 0:
        raise ValueError("empty feature set")
    mu = feats.mean(axis=0)
    if feats.shape[0] == 1:
        cov = np.zeros((feats.shape[1], feats.shape[1]))
    else:
        cov = np.cov(feats, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
    return mu, cov


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Squared Frechet distance between Gaussian fits of two feature sets."""
    mu_a, cov_a = _mean_cov(feats_a)
    mu_b, cov_b = _mean_cov(feats_b)
    if mu_a.shape != mu_b.shape:
        raise ValueError(f"feature dimensions differ: {mu_a.shape} vs {mu_b.shape}")

    diff = mu_a - mu_b
    for attempt in range(2):
        sa = _sqrtm_psd(cov_a)
        product = sa @ cov_b @ sa
        product = (product + product.T) / 2.0
        eigs = np.linalg.eigvalsh(product)
        if eigs.min(initial=0.0) < _NEGATIVE_EIG_TOL and attempt == 0:
            jitter = _JITTER * np.eye(cov_a.shape[0])
            cov_a = cov_a + jitter
            cov_b = cov_b + jitter
            continue
        trace_sqrt = float(np.sqrt(np.clip(eigs, 0.0, None)).sum())
        d2 = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
        return max(d2, 0.0)
    raise AssertionError("unreachable")


def rmse(gen, real) -> float:
    """Root mean squared error between two equal-length signals."""
    if isinstance(gen, EcgSignal) and isinstance(real, EcgSignal):
        if gen.fs != real.fs:
            raise ValueError(f"sampling rates differ: {gen.fs} vs {real.fs}")
        g, r = gen.samples, real.samples
    else:
        g = np.asarray(gen, dtype=np.float64)
        r = np.asarray(real, dtype=np.float64)
    if g.shape != r.shape:
        raise ValueError(f"length mismatch: {g.shape} vs {r.shape}")
    return float(np.sqrt(np.mean((g - r) ** 2)))


@dataclass
class ConcordanceResult:
    indicator: str
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n_pairs(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n_pairs

    @property
    def recall(self) -> float:
        positives = self.tp + self.fn
        return self.tp / positives if positives else float("nan")


def _indicator_normal(report: IntervalReport, indicator: str) -> bool:
    if report.flags is None:
        raise ValueError("report has no normality flags; classify it first")
    try:
        return {"qtc": report.flags.qtc_normal,
                "pr": report.flags.pr_normal,
                "tpte": report.flags.tpte_normal}[indicator]
    except KeyError:
        raise ValueError(f"unknown indicator {indicator!r}, expected one of {INDICATORS}") from None


def _check_paired(real_reports: dict, gen_reports: dict) -> list:
    unmatched = sorted(set(real_reports) ^ set(gen_reports))
    if unmatched:
        raise ValueError(f"unmatched report keys (present on one side only): {unmatched}")
    if not real_reports:
        raise ValueError("no report pairs to score")
    return sorted(real_reports)


def concordance(real_reports: dict, gen_reports: dict, indicator: str) -> ConcordanceResult:
    """Agreement on one indicator across paired reports (abnormal = positive)."""
    keys = _check_paired(real_reports, gen_reports)
    tp = fp = tn = fn = 0
    for key in keys:
        real_abnormal = not _indicator_normal(real_reports[key], indicator)
        gen_abnormal = not _indicator_normal(gen_reports[key], indicator)
        if real_abnormal and gen_abnormal:
            tp += 1
        elif real_abnormal and not gen_abnormal:
            fn += 1
        elif gen_abnormal:
            fp += 1
        else:
            tn += 1
    return ConcordanceResult(indicator=indicator, tp=tp, fp=fp, tn=tn, fn=fn)


def composite_concordance(
    real_reports: dict,
    gen_reports: dict,
    regimen_by_key: dict,
    regimen_rules: dict[str, list[str]],
) -> dict[str, float]:
    """Per-regimen accuracy under the all-indicators-must-agree rule."""
    keys = _check_paired(real_reports, gen_reports)
    correct: dict[str, int] = {}
    total: dict[str, int] = {}
    for key in keys:
        regimen = regimen_by_key[key]
        if regimen not in regimen_rules:
            raise ValueError(f"no indicator rule configured for regimen {regimen!r}")
        indicators = regimen_rules[regimen]
        ok = all(
            _indicator_normal(real_reports[key], ind) == _indicator_normal(gen_reports[key], ind)
            for ind in indicators
        )
        total[regimen] = total.get(regimen, 0) + 1
        correct[regimen] = correct.get(regimen, 0) + int(ok)
    return {reg: correct[reg] / total[reg] for reg in sorted(total)}
