"""Objective evaluation battery: duration RMSE/correlation, F0 RMSE in Hz,
mel-cepstral distortion, band aperiodicity distortion, voiced/unvoiced error
rate, and per-coefficient global variance.

Correlations over constant sequences are reported as None ("NA" on disk)
rather than silently coerced to a number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import AcousticFeatureSequence

MCD_SCALE = 10.0 * math.sqrt(2.0) / math.log(10.0)
VUV_THRESHOLD = 0.5

# report keys, in presentation order
REPORT_KEYS = (
    "Dur RMSE",
    "Dur CORR",
    "F0 RMSE (Hz)",
    "F0 CORR",
    "MCD (dB)",
    "BAPD (dB)",
    "V/UV Error (%)",
)

NA = "NA"


def rmse_corr(pred, gt) -> tuple[float, float | None]:
    """Root mean square error and Pearson correlation of two sequences.

    Correlation is None when either input is constant (it is undefined).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError(f"rmse_corr: bad shapes {pred.shape} vs {gt.shape}")
    rmse = math.sqrt(float(np.mean((pred - gt) ** 2)))
    dp = pred - pred.mean()
    dg = gt - gt.mean()
    denom = math.sqrt(float((dp * dp).sum()) * float((dg * dg).sum()))
    if denom == 0.0:
        return rmse, None
    return rmse, float((dp * dg).sum()) / denom


def f0_metrics(pred: AcousticFeatureSequence, gt: AcousticFeatureSequence
               ) -> tuple[float | None, float | None]:
    """F0 RMSE in Hz and correlation over commonly-voiced frames.

    Prediction voicing is thresholded at 0.5; with no commonly-voiced frames
    both values are None.
    """
    if pred.num_frames != gt.num_frames:
        raise ValueError(
            f"f0_metrics: frame counts differ: {pred.num_frames} vs {gt.num_frames}"
        )
    both = pred.voiced_mask(VUV_THRESHOLD) & gt.voiced_mask(VUV_THRESHOLD)
    if not both.any():
        return None, None
    pred_hz = np.exp(pred.logf0[both])
    gt_hz = np.exp(gt.logf0[both])
    if pred_hz.size == 1:
        return math.sqrt(float((pred_hz[0] - gt_hz[0]) ** 2)), None
    return rmse_corr(pred_hz, gt_hz)


def mcd(pred_mgc: np.ndarray, gt_mgc: np.ndarray) -> float:
    """Mel-cepstral distortion in dB, excluding the 0th (energy) coefficient:
    mean over frames of (10 sqrt(2) / ln 10) * ||delta c_{1..59}||."""
    pred_mgc = np.asarray(pred_mgc, dtype=np.float64)
    gt_mgc = np.asarray(gt_mgc, dtype=np.float64)
    if pred_mgc.shape != gt_mgc.shape or pred_mgc.ndim != 2:
        raise ValueError(f"mcd: bad shapes {pred_mgc.shape} vs {gt_mgc.shape}")
    diff = pred_mgc[:, 1:] - gt_mgc[:, 1:]
    return float(MCD_SCALE * np.mean(np.sqrt((diff * diff).sum(axis=1))))


def bapd(pred_bap: np.ndarray, gt_bap: np.ndarray) -> float:
    """Band aperiodicity distortion: RMS difference over all frames and bands."""
    pred_bap = np.asarray(pred_bap, dtype=np.float64)
    gt_bap = np.asarray(gt_bap, dtype=np.float64)
    if pred_bap.shape != gt_bap.shape or pred_bap.ndim != 2:
        raise ValueError(f"bapd: bad shapes {pred_bap.shape} vs {gt_bap.shape}")
    return float(np.sqrt(np.mean((pred_bap - gt_bap) ** 2)))


def vuv_error(pred_vuv, gt_vuv) -> float:
    """Percentage of frames whose thresholded voicing decision differs."""
    pred_vuv = np.asarray(pred_vuv, dtype=np.float64)
    gt_vuv = np.asarray(gt_vuv, dtype=np.float64)
    if pred_vuv.shape != gt_vuv.shape or pred_vuv.ndim != 1:
        raise ValueError(f"vuv_error: bad shapes {pred_vuv.shape} vs {gt_vuv.shape}")
    pred_flags = pred_vuv >= VUV_THRESHOLD
    gt_flags = gt_vuv >= VUV_THRESHOLD
    return 100.0 * float(np.mean(pred_flags != gt_flags))


def gv(mgc_per_utterance: list[np.ndarray]) -> np.ndarray:
    """Per-coefficient population variance across frames, averaged over
    utterances; single-frame utterances are skipped with a warning."""
    import warnings

    variances = []
    for i, mgc_matrix in enumerate(mgc_per_utterance):
        mgc_matrix = np.asarray(mgc_matrix, dtype=np.float64)
        if mgc_matrix.shape[0] < 2:
            warnings.warn(f"gv: skipping utterance {i} with fewer than 2 frames")
            continue
        variances.append(mgc_matrix.var(axis=0))  # population variance
    if not variances:
        raise ValueError("gv: no utterance has at least 2 frames")
    return np.mean(variances, axis=0)


# ---------------------------------------------------------------------------
# corpus-level report

@dataclass
class UtteranceEval:
    utt_id: str
    num_frames: int
    values: dict[str, float | None]


@dataclass
class EvalReport:
    """Corpus-level metrics (frames and phonemes pooled across utterances)
    plus a per-utterance breakdown."""

    values: dict[str, float | None]
    per_utterance: list[UtteranceEval] = field(default_factory=list)
    header_notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        for key in self.values:
            if key not in REPORT_KEYS:
                raise ValueError(f"unknown report key {key!r}")
        corr_keys = ("Dur CORR", "F0 CORR")
        for key, value in self.values.items():
            if value is None:
                continue
            if key in corr_keys and not -1.0 <= value <= 1.0 + 1e-12:
                raise ValueError(f"{key} out of [-1, 1]: {value}")
            if key == "V/UV Error (%)" and not 0.0 <= value <= 100.0:
                raise ValueError(f"{key} out of [0, 100]: {value}")
            if key in ("Dur RMSE", "F0 RMSE (Hz)", "MCD (dB)", "BAPD (dB)") \
                    and value < 0.0:
                raise ValueError(f"{key} negative: {value}")

    def format(self) -> str:
        lines = [f"# {note}" for note in self.header_notes]
        for key in REPORT_KEYS:
            value = self.values.get(key)
            cell = NA if value is None else repr(value)
            lines.append(f"{key}\t{cell}")
        return "\n".join(lines) + "\n"


def format_per_utterance_table(rows: list[UtteranceEval]) -> str:
    header = ["utt_id", "frames"] + list(REPORT_KEYS)
    lines = ["\t".join(header)]
    for row in rows:
        cells = [row.utt_id, str(row.num_frames)]
        for key in REPORT_KEYS:
            value = row.values.get(key)
            cells.append(NA if value is None else repr(value))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def format_gv_table(gv_values: np.ndarray) -> str:
    lines = [f"{i}\t{value!r}" for i, value in enumerate(gv_values.tolist())]
    return "\n".join(lines) + "\n"
