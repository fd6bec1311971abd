"""Training objectives: phoneme and syllable duration losses, L1 spectral
losses, masked log-F0 loss, and binary cross-entropy voicing loss, all
weighted and summed into one jointly trained scalar."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .features import AcousticFeatureSequence
from .model import DecoderOutput, TrainForward


@dataclass(frozen=True)
class LossWeights:
    w_pd: float = 1.0   # phoneme duration
    w_sd: float = 1.0   # syllable duration
    w_m: float = 1.0    # mgc
    w_b: float = 1.0    # bap
    w_f: float = 1.0    # log-F0
    w_u: float = 1.0    # voicing

    def __post_init__(self):
        values = (self.w_pd, self.w_sd, self.w_m, self.w_b, self.w_f, self.w_u)
        if any(w < 0 for w in values):
            raise ValueError("loss weights must be nonnegative")
        if all(w == 0 for w in values):
            raise ValueError("at least one loss weight must be positive")


def _zero() -> Node:
    return ad.constant(np.asarray(0.0))


def mae(pred: Node, target: np.ndarray) -> Node:
    return ad.reduce_mean(ad.absolute(ad.sub(pred, ad.constant(target))))


def masked_abs_error(pred: Node, target: np.ndarray,
                     mask: np.ndarray) -> tuple[Node, int]:
    """(sum of |pred - target| over mask==1, count); count 0 gives a 0 sum."""
    mask = np.asarray(mask, dtype=np.float64)
    count = int(mask.sum())
    if count == 0:
        return _zero(), 0
    total = ad.reduce_sum(
        ad.mul(ad.absolute(ad.sub(pred, ad.constant(target))), ad.constant(mask))
    )
    return total, count


def bce_with_logits(logits: Node, targets: np.ndarray) -> Node:
    """Per-element binary cross entropy, numerically stable in the logit
    domain: max(z, 0) - z*y + log(1 + exp(-|z|))."""
    targets = np.asarray(targets, dtype=np.float64)
    hinge = ad.sub(ad.relu(logits), ad.mul(logits, ad.constant(targets)))
    softplus = ad.log(
        ad.add(ad.exp(ad.scale(ad.absolute(logits), -1.0)),
               ad.constant(np.ones(targets.shape)))
    )
    return ad.add(hinge, softplus)


def syllable_indicator(syllable_spans, n: int) -> np.ndarray:
    """0/1 matrix with one row per syllable selecting its phoneme indices."""
    matrix = np.zeros((len(syllable_spans), n))
    for row, (start, end) in enumerate(syllable_spans):
        if not 0 <= start < end <= n:
            raise ValueError(f"syllable span ({start}, {end}) out of range [0, {n})")
        matrix[row, start:end] = 1.0
    return matrix


def linear_durations(pred_log_durations: Node) -> Node:
    """Back out frame-domain durations from log(frames + 1) predictions."""
    n = pred_log_durations.shape[0]
    return ad.sub(ad.exp(pred_log_durations), ad.constant(np.ones(n)))


def duration_loss(pred_log_durations: Node, gt_durations, syllable_spans,
                  weights: LossWeights) -> tuple[Node, dict[str, Node]]:
    """Phoneme-level L1 in the log(frames + 1) domain plus syllable-level L1
    between ground-truth syllable frames and the summed linear predictions."""
    gt = np.asarray(gt_durations, dtype=np.float64)
    n = gt.shape[0]
    if pred_log_durations.shape != (n,):
        raise ValueError(
            f"duration prediction shape {pred_log_durations.shape} does not "
            f"match {n} ground-truth durations"
        )
    l_pd = mae(pred_log_durations, np.log(gt + 1.0))
    indicator = syllable_indicator(syllable_spans, n)
    syl_pred = ad.reshape(
        ad.matmul(ad.constant(indicator),
                  ad.reshape(linear_durations(pred_log_durations), (n, 1))),
        (len(syllable_spans),),
    )
    l_sd = mae(syl_pred, indicator @ gt)
    total = ad.add(ad.scale(l_pd, weights.w_pd), ad.scale(l_sd, weights.w_sd))
    return total, {"L_pd": l_pd, "L_sd": l_sd}


def spectral_loss(pred_mgc: Node, pred_bap: Node, gt_mgc: np.ndarray,
                  gt_bap: np.ndarray,
                  weights: LossWeights) -> tuple[Node, dict[str, Node]]:
    """Mean absolute error over all frames and coefficients, per stream."""
    if pred_mgc.shape != np.shape(gt_mgc) or pred_bap.shape != np.shape(gt_bap):
        raise ValueError(
            f"spectral shapes differ: pred {pred_mgc.shape}/{pred_bap.shape} vs "
            f"gt {np.shape(gt_mgc)}/{np.shape(gt_bap)}"
        )
    l_m = mae(pred_mgc, np.asarray(gt_mgc, dtype=np.float64))
    l_b = mae(pred_bap, np.asarray(gt_bap, dtype=np.float64))
    total = ad.add(ad.scale(l_m, weights.w_m), ad.scale(l_b, weights.w_b))
    return total, {"L_m": l_m, "L_b": l_b}


def decoder_loss(pred: DecoderOutput, gt: AcousticFeatureSequence,
                 frame_nonrest_mask: np.ndarray,
                 weights: LossWeights) -> tuple[Node, dict[str, Node]]:
    """Spectral loss plus masked log-F0 L1 and voicing cross entropy.

    The log-F0 term only sees frames that are voiced in the ground truth and
    not rests; an all-unvoiced utterance contributes a zero loss, not NaN.
    """
    t = gt.num_frames
    if pred.logf0.shape != (t,):
        raise ValueError(
            f"decoder output length {pred.logf0.shape} vs {t} reference frames"
        )
    spec_total, comps = spectral_loss(pred.mgc, pred.bap, gt.mgc, gt.bap, weights)
    f0_mask = gt.vuv * np.asarray(frame_nonrest_mask, dtype=np.float64)
    f0_sum, f0_count = masked_abs_error(pred.logf0, gt.logf0, f0_mask)
    l_f = ad.scale(f0_sum, 1.0 / f0_count) if f0_count else f0_sum
    l_u = ad.reduce_mean(bce_with_logits(pred.vuv_logit, gt.vuv))
    total = ad.add(spec_total,
                   ad.add(ad.scale(l_f, weights.w_f), ad.scale(l_u, weights.w_u)))
    comps = dict(comps)
    comps["L_f"] = l_f
    comps["L_u"] = l_u
    return total, comps


def total_loss(forward: TrainForward, tokens, gt: AcousticFeatureSequence,
               frame_nonrest_mask: np.ndarray,
               weights: LossWeights) -> tuple[Node, dict[str, Node]]:
    """Joint objective: decoder loss plus duration loss, sharing the encoder."""
    dec_total, comps = decoder_loss(forward.decoder, gt, frame_nonrest_mask, weights)
    dur_total, dur_comps = duration_loss(
        forward.log_durations, tokens.gt_phoneme_durations,
        tokens.syllable_spans, weights,
    )
    comps = dict(comps)
    comps.update(dur_comps)
    return ad.add(dec_total, dur_total), comps
