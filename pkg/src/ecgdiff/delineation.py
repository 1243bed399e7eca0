"""Beat detection, fiducial-point delineation and interval measurement.

R peaks are found on a smoothed squared-derivative energy with an adaptive
threshold and a 200 ms refractory window; polarity is voted from the
detected beats.  Within each beat, Q and S are the nearest local minima
around R, wave onsets are found by walking the smoothed slope below a
fixed fraction of its local maximum, and the T end is located by the
tangent method: the steepest post-peak slope is extrapolated down to the
local baseline level.

The onset-slope fraction is 2*exp(-1.5) ~= 0.446: for an ideal Gaussian
wave of angular width b this lands the onset exactly 2b before the wave
center, and the tangent-method T end lands exactly 2b after it, so both
conventions are directly checkable against closed-form phase predictions.

Interval indicators per signal are medians across fully delineated beats:
QT (QRS onset to T end), PR (P onset to QRS onset), Tpeak-Tend, and the
rate-corrected QTc = QT / sqrt(RR) with RR in seconds.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .ode import EcgSignal

REFRACTORY_MS = 200.0
ENERGY_SMOOTH_MS = 15.0
SLOPE_SMOOTH_MS = 8.0
QS_WINDOW_MS = 60.0
ONSET_SLOPE_FRACTION = 2.0 * math.exp(-1.5)
T_SEARCH_START_MS = 120.0
T_SEARCH_END_FRACTION = 0.6
P_SEARCH_MIN_MS = 250.0
P_SEARCH_RR_FRACTION = 0.40
P_SEARCH_END_MS = 80.0
P_PROMINENCE_FRACTION = 0.03
BASELINE_WINDOW_RR = (0.48, 0.36)   # quiet diastolic zone before the R peak

QTC_NORMAL_MAX_MALE_MS = 450.0
QTC_NORMAL_MAX_FEMALE_MS = 470.0
PR_NORMAL_MS = (120.0, 200.0)
TPTE_NORMAL_MS = (80.0, 113.0)


@dataclass
class FiducialPoints:
    """Per-beat landmark sample indices (ms values derived via fs)."""

    r_peak: int
    p_onset: int | None
    p_peak: int | None
    qrs_onset: int
    s_point: int
    t_peak: int
    t_end: int
    has_p: bool
    fs: float

    def ms(self, index: int | None) -> float | None:
        return None if index is None else index * 1000.0 / self.fs

    def ordered(self) -> bool:
        points = [self.p_onset, self.p_peak, self.qrs_onset, self.r_peak,
                  self.s_point, self.t_peak, self.t_end]
        present = [p for p in points if p is not None]
        return all(a < b for a, b in zip(present, present[1:]))


@dataclass
class NormalityFlags:
    qtc_normal: bool
    pr_normal: bool
    tpte_normal: bool

    def as_dict(self) -> dict:
        return {"qtc_normal": self.qtc_normal, "pr_normal": self.pr_normal,
                "tpte_normal": self.tpte_normal}


@dataclass
class IntervalReport:
    """Median interval indicators of one signal plus normality flags."""

    rr_s: float
    qt_ms: float
    qtc_ms: float
    pr_ms: float | None
    tpte_ms: float
    n_beats: int
    sex: str | None = None
    flags: NormalityFlags | None = None


class SignalTooShort(ValueError):
    pass


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.full(width, 1.0 / width)
    return np.convolve(x, kernel, mode="same")


def _win(fs: float, ms: float) -> int:
    return max(1, round(ms * fs / 1000.0))


def detect_r_peaks(signal: EcgSignal) -> np.ndarray:
    """Indices of R peaks; raises SignalTooShort below 2 s of samples."""
    x = np.asarray(signal.samples, dtype=np.float64)
    fs = signal.fs
    n = x.size
    if n < 2 * fs:
        raise SignalTooShort(f"need at least 2 s of samples, got {n / fs:.3f} s")

    slope = np.gradient(x) * fs
    energy = _moving_average(slope * slope, _win(fs, ENERGY_SMOOTH_MS))

    # threshold from the median of per-second energy maxima
    sec = int(fs)
    block_max = [energy[i:i + sec].max() for i in range(0, n, sec) if i + sec // 2 <= n]
    level = float(np.median(block_max))
    if level <= 0.0:
        return np.array([], dtype=int)
    thr = 0.2 * level

    above = energy > thr
    if not np.any(above):
        return np.array([], dtype=int)
    idx = np.flatnonzero(above)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    region_starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    region_stops = np.concatenate([idx[breaks], [idx[-1]]])

    candidates = []
    for a, b in zip(region_starts, region_stops):
        c = a + int(np.argmax(energy[a:b + 1]))
        candidates.append(c)

    # polarity vote around the energy peaks
    half = _win(fs, 40.0)
    pos_score = neg_score = 0.0
    for c in candidates:
        lo, hi = max(0, c - half), min(n, c + half + 1)
        seg = x[lo:hi]
        base = float(np.median(x[max(0, c - _win(fs, 200.0)):min(n, c + _win(fs, 200.0))]))
        pos_score += seg.max() - base
        neg_score += base - seg.min()
    polarity = 1.0 if pos_score >= neg_score else -1.0

    # refine to the apex and enforce the refractory window
    refined = []
    for c in candidates:
        lo, hi = max(0, c - half), min(n, c + half + 1)
        refined.append(lo + int(np.argmax(polarity * x[lo:hi])))
    refined = sorted(set(refined))
    refractory = _win(fs, REFRACTORY_MS)
    peaks: list[int] = []
    for r in refined:
        if peaks and r - peaks[-1] < refractory:
            if polarity * x[r] > polarity * x[peaks[-1]]:
                peaks[-1] = r
        else:
            peaks.append(r)
    return np.array(peaks, dtype=int)


def _local_minima(seg: np.ndarray) -> np.ndarray:
    if seg.size < 3:
        return np.array([], dtype=int)
    inner = (seg[1:-1] <= seg[:-2]) & (seg[1:-1] <= seg[2:])
    return np.flatnonzero(inner) + 1


def _onset_by_slope(slope: np.ndarray, search_lo: int, search_hi: int, lower_bound: int) -> int:
    """Walk left from the steepest point until |slope| drops below the
    fixed fraction of that maximum; returns the first sub-threshold index."""
    window = np.abs(slope[search_lo:search_hi + 1])
    if window.size == 0:
        return search_lo
    steepest = search_lo + int(np.argmax(window))
    thr = ONSET_SLOPE_FRACTION * abs(slope[steepest])
    i = steepest
    while i > lower_bound and abs(slope[i]) >= thr:
        i -= 1
    return i


def delineate(signal: EcgSignal, r_peaks: np.ndarray) -> list[FiducialPoints]:
    """Fiducial points for every beat with enough surrounding context.

    The first beat (no preceding RR) and beats whose T window would run
    past the end of the record are dropped rather than padded.
    """
    x = np.asarray(signal.samples, dtype=np.float64)
    fs = signal.fs
    n = x.size
    r_peaks = np.asarray(r_peaks, dtype=int)
    beats: list[FiducialPoints] = []
    if r_peaks.size < 2:
        return beats

    slope = _moving_average(np.gradient(x) * fs, _win(fs, SLOPE_SMOOTH_MS))

    for k in range(1, r_peaks.size):
        r = int(r_peaks[k])
        rr = int(r - r_peaks[k - 1])
        if rr <= 0:
            continue
        if r + int(0.75 * rr) >= n:
            continue

        base_lo = r - int(BASELINE_WINDOW_RR[0] * rr)
        base_hi = r - int(BASELINE_WINDOW_RR[1] * rr)
        if base_lo < 0:
            continue
        baseline_level = float(np.median(x[base_lo:base_hi + 1]))
        polarity = 1.0 if x[r] >= baseline_level else -1.0
        y = polarity * x
        y_base = polarity * baseline_level
        y_slope = polarity * slope
        r_height = y[r] - y_base

        # Q and S: nearest local minima within +-60 ms of R
        qs = _win(fs, QS_WINDOW_MS)
        lo = max(0, r - qs)
        pre = y[lo:r + 1]
        minima = _local_minima(pre)
        q = lo + int(minima[-1]) if minima.size else lo + int(np.argmin(pre))
        hi = min(n, r + qs + 1)
        post = y[r:hi]
        minima = _local_minima(post)
        s = r + int(minima[0]) if minima.size else r + int(np.argmin(post))

        # QRS onset: last sub-threshold slope point before Q
        qrs_onset = _onset_by_slope(y_slope, max(0, q - _win(fs, 50.0)), q,
                                    max(0, r - _win(fs, 150.0)))

        # P wave: positive peak in the adaptive pre-R window
        p_lo = r - max(_win(fs, P_SEARCH_MIN_MS), int(P_SEARCH_RR_FRACTION * rr))
        p_hi = r - _win(fs, P_SEARCH_END_MS)
        p_peak = p_onset = None
        has_p = False
        if p_lo >= 0 and p_hi > p_lo:
            seg = y[p_lo:p_hi + 1]
            p_candidate = p_lo + int(np.argmax(seg))
            prominence = y[p_candidate] - y_base
            if prominence >= P_PROMINENCE_FRACTION * r_height and p_candidate < qrs_onset:
                p_peak = p_candidate
                up_lo = max(p_lo, p_peak - _win(fs, 150.0))
                p_onset = _onset_by_slope(y_slope, up_lo, p_peak, max(0, p_lo - _win(fs, 40.0)))
                has_p = p_onset < p_peak
                if not has_p:
                    p_peak = p_onset = None

        # T wave: largest deflection from baseline in the post-QRS window
        t_lo = r + _win(fs, T_SEARCH_START_MS)
        t_hi = min(n - 2, r + int(T_SEARCH_END_FRACTION * rr))
        if t_hi <= t_lo:
            continue
        t_seg = np.abs(x[t_lo:t_hi + 1] - baseline_level)
        t_peak = t_lo + int(np.argmax(t_seg))
        t_sign = 1.0 if x[t_peak] >= baseline_level else -1.0

        # T end by the tangent method on the post-peak limb
        d_lo = t_peak + 1
        d_hi = min(n - 1, t_peak + max(_win(fs, 40.0), int(0.30 * rr)))
        if d_hi <= d_lo:
            continue
        limb = t_sign * slope[d_lo:d_hi + 1]
        steepest = d_lo + int(np.argmin(limb))
        drop = slope[steepest]
        if t_sign * drop >= 0.0:
            continue
        run_s = (baseline_level - x[steepest]) / drop
        t_end = steepest + int(round(run_s * fs))
        if t_end <= t_peak:
            continue
        t_end = min(t_end, n - 1)

        beat = FiducialPoints(
            r_peak=r, p_onset=p_onset, p_peak=p_peak, qrs_onset=qrs_onset,
            s_point=s, t_peak=t_peak, t_end=t_end, has_p=has_p, fs=fs,
        )
        if beat.ordered():
            beats.append(beat)
    return beats


def qtc_bazett(qt_ms: float, rr_s: float) -> float:
    """Rate-corrected QT: qt_ms / sqrt(rr_s) with RR in seconds."""
    if rr_s <= 0:
        raise ValueError(f"RR must be positive (seconds), got {rr_s}")
    return qt_ms / math.sqrt(rr_s)


def _normalize_sex(sex: str) -> str:
    s = str(sex).strip().lower()
    if s in ("m", "male"):
        return "M"
    if s in ("f", "female"):
        return "F"
    raise ValueError(f"cannot interpret sex {sex!r} (expected M/F/male/female)")


def classify_normality(report: IntervalReport, sex: str | None = None) -> NormalityFlags:
    """Inclusive-bound normality flags for QTc, PR and Tpeak-Tend."""
    sex = sex if sex is not None else report.sex
    if sex is None:
        raise ValueError("sex is required to classify QTc normality")
    sex = _normalize_sex(sex)
    qtc_max = QTC_NORMAL_MAX_MALE_MS if sex == "M" else QTC_NORMAL_MAX_FEMALE_MS
    pr_normal = report.pr_ms is not None and PR_NORMAL_MS[0] <= report.pr_ms <= PR_NORMAL_MS[1]
    return NormalityFlags(
        qtc_normal=report.qtc_ms <= qtc_max,
        pr_normal=pr_normal,
        tpte_normal=TPTE_NORMAL_MS[0] <= report.tpte_ms <= TPTE_NORMAL_MS[1],
    )


def interval_report(
    signal: EcgSignal,
    sex: str | None = None,
    r_peaks: np.ndarray | None = None,
) -> IntervalReport:
    """Detect, delineate and reduce one signal to median interval indicators."""
    if r_peaks is None:
        r_peaks = detect_r_peaks(signal)
    beats = delineate(signal, r_peaks)
    if not beats:
        raise ValueError("no fully delineated beats in signal")
    fs = signal.fs
    r_list = np.asarray([b.r_peak for b in beats], dtype=float)
    rr_all = np.diff(np.asarray(r_peaks, dtype=float)) / fs
    rr_s = float(np.median(rr_all)) if rr_all.size else math.nan
    qt = [(b.t_end - b.qrs_onset) * 1000.0 / fs for b in beats]
    tpte = [(b.t_end - b.t_peak) * 1000.0 / fs for b in beats]
    pr = [(b.qrs_onset - b.p_onset) * 1000.0 / fs for b in beats if b.has_p]
    qt_ms = float(np.median(qt))
    report = IntervalReport(
        rr_s=rr_s,
        qt_ms=qt_ms,
        qtc_ms=qtc_bazett(qt_ms, rr_s),
        pr_ms=float(np.median(pr)) if pr else None,
        tpte_ms=float(np.median(tpte)),
        n_beats=len(beats),
        sex=sex,
    )
    if sex is not None:
        report.flags = classify_normality(report, sex)
    return report


def write_interval_csv(path, reports: dict[str, IntervalReport]) -> None:
    """One row per signal: file, rr_s, qt_ms, qtc_ms, pr_ms, tpte_ms, flags."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["file", "rr_s", "qt_ms", "qtc_ms", "pr_ms", "tpte_ms",
                         "qtc_normal", "pr_normal", "tpte_normal"])
        for name in sorted(reports):
            rep = reports[name]
            flags = rep.flags
            writer.writerow([
                name,
                f"{rep.rr_s:.4f}",
                f"{rep.qt_ms:.2f}",
                f"{rep.qtc_ms:.2f}",
                "" if rep.pr_ms is None else f"{rep.pr_ms:.2f}",
                f"{rep.tpte_ms:.2f}",
                "" if flags is None else int(flags.qtc_normal),
                "" if flags is None else int(flags.pr_normal),
                "" if flags is None else int(flags.tpte_normal),
            ])
