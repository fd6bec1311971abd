"""Command-line entry point: ``gen-data``, ``train``, ``synth`` and ``eval``
subcommands tying the corpus generator, trainer, synthesizer and metric
battery together.

Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .corpus import OracleConfig, generate_corpus, load_corpus_items, \
    load_manifest
from .features import load_features, save_features
from .losses import LossWeights
from .metrics import EvalReport, REPORT_KEYS, UtteranceEval, bapd, f0_metrics, \
    format_gv_table, format_per_utterance_table, gv, mcd, rmse_corr, vuv_error
from .model import ModelConfig, predicted_durations, synthesize, \
    synthesize_with_durations
from .score import PhonemeLexicon, demo_lexicon, load_lexicon, parse_score, \
    score_to_tokens
from .training import CorpusValidationError, TrainConfig, train, \
    params_from_checkpoint


class CliError(RuntimeError):
    pass


@dataclass
class RunConfig:
    """Flat view of every tunable: model, optimizer, loss weights, oracle.

    Defaults are desk scale; the full-size values live in the plain
    ModelConfig / TrainConfig constructors.
    """

    hidden_dim: int = 32
    encoder_blocks: int = 1
    decoder_blocks: int = 1
    attention_heads: int = 2
    conv_kernel_size: int = 3
    conv_filter_dim: int = 64
    phoneme_vocab_size: int = 72
    pitch_vocab_size: int = 128
    max_note_frames: int = 256
    dropout: float = 0.1
    batch_size: int = 8
    total_steps: int = 2000
    warmup_steps: int = 200
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_epsilon: float = 1e-9
    w_pd: float = 1.0
    w_sd: float = 1.0
    w_m: float = 1.0
    w_b: float = 1.0
    w_f: float = 1.0
    w_u: float = 1.0
    vibrato_rate_hz: float = 5.5
    vibrato_depth_log: float = 0.03
    transition_frames: int = 3
    consonant_fraction: float = 0.25

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden_dim=self.hidden_dim, encoder_blocks=self.encoder_blocks,
            decoder_blocks=self.decoder_blocks,
            attention_heads=self.attention_heads,
            conv_kernel_size=self.conv_kernel_size,
            conv_filter_dim=self.conv_filter_dim,
            phoneme_vocab_size=self.phoneme_vocab_size,
            pitch_vocab_size=self.pitch_vocab_size,
            max_note_frames=self.max_note_frames, dropout=self.dropout,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, total_steps=self.total_steps,
            warmup_steps=self.warmup_steps, adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2, adam_epsilon=self.adam_epsilon,
            seed=self.seed, loss_weights=self.loss_weights(),
            model=self.model_config(),
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(w_pd=self.w_pd, w_sd=self.w_sd, w_m=self.w_m,
                           w_b=self.w_b, w_f=self.w_f, w_u=self.w_u)

    def oracle_config(self) -> OracleConfig:
        return OracleConfig(
            seed=self.seed, vibrato_rate_hz=self.vibrato_rate_hz,
            vibrato_depth_log=self.vibrato_depth_log,
            transition_frames=self.transition_frames,
            consonant_fraction=self.consonant_fraction,
        )

    def format(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            lines.append(f"{f.name} {value!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.format(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        known = {f.name: f.type for f in fields(cls)}
        values = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise CliError(f"{path}:{line_no}: expected 'key value'")
                key, text = parts
                if key not in known:
                    raise CliError(f"{path}:{line_no}: unknown config key {key!r}")
                parser = int if known[key] in ("int", int) else float
                try:
                    values[key] = parser(text)
                except ValueError:
                    raise CliError(
                        f"{path}:{line_no}: bad value {text!r} for {key}"
                    ) from None
        return cls(**values)


def _load_run_config(args, flag_overrides: dict) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    for key, text in getattr(args, "overrides", None) or []:
        if key not in known:
            raise CliError(f"--set: unknown config key {key!r}")
        parser = int if known[key] in ("int", int) else float
        try:
            setattr(config, key, parser(text))
        except ValueError:
            raise CliError(f"--set: bad value {text!r} for {key}") from None
    for key, value in flag_overrides.items():
        if value is not None:
            setattr(config, key, value)
    return config


def _load_lexicon(args) -> PhonemeLexicon:
    return load_lexicon(args.lexicon) if args.lexicon else demo_lexicon()


def _check_vocab(ckpt: Checkpoint, lexicon: PhonemeLexicon) -> None:
    stored = ckpt.config.get("phoneme_vocab")
    if stored is not None and tuple(stored) != lexicon.phoneme_vocab:
        raise CliError(
            "checkpoint was trained with a different phoneme vocabulary than "
            "the supplied lexicon"
        )


def _model_from_checkpoint(ckpt: Checkpoint):
    train_cfg = TrainConfig.from_dict(ckpt.config["train"])
    params = params_from_checkpoint(ckpt, train_cfg.model)
    return params, train_cfg


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_data(args) -> int:
    run = _load_run_config(args, {"seed": args.seed})
    lexicon = _load_lexicon(args)
    out_dir = Path(args.out)
    manifest = generate_corpus(args.songs, run.seed, run.oracle_config(),
                               out_dir, lexicon)
    run.save(out_dir / "config.txt")
    print(out_dir / "manifest.tsv")
    print(f"{len(manifest.entries)} songs "
          f"({len(manifest.subset('train'))} train, "
          f"{len(manifest.subset('holdout'))} holdout)")
    return 0


def cmd_train(args) -> int:
    run = _load_run_config(args, {
        "seed": args.seed, "total_steps": args.steps,
        "batch_size": args.batch_size,
    })
    lexicon = _load_lexicon(args)
    if len(lexicon.phoneme_vocab) > run.phoneme_vocab_size:
        raise CliError(
            f"lexicon has {len(lexicon.phoneme_vocab)} phonemes but "
            f"phoneme_vocab_size is {run.phoneme_vocab_size}"
        )
    manifest = load_manifest(args.manifest)
    corpus = load_corpus_items(manifest, split="train")
    if not corpus:
        raise CliError("manifest has no utterances tagged 'train'")

    resume = load_checkpoint(args.resume) if args.resume else None
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    run.save(run_dir / "config.txt")

    config = run.train_config()
    extra = {"phoneme_vocab": list(lexicon.phoneme_vocab)}
    with open(run_dir / "loss_log.tsv", "w", encoding="utf-8") as log_fh:
        result = train(config, corpus, resume_from=resume, log_stream=log_fh,
                       extra_config=extra)
    ckpt_path = run_dir / "checkpoint.bin"
    save_checkpoint(ckpt_path, result.checkpoint)
    print(ckpt_path)
    print(f"trained {len(result.records)} steps on {len(corpus)} utterances; "
          f"final loss {result.records[-1].total:.6f}"
          if result.records else "no steps to run")
    return 0


def cmd_synth(args) -> int:
    lexicon = _load_lexicon(args)
    ckpt = load_checkpoint(args.checkpoint)
    _check_vocab(ckpt, lexicon)
    params, train_cfg = _model_from_checkpoint(ckpt)
    score = parse_score(Path(args.score).read_text(encoding="utf-8"))
    tokens = score_to_tokens(score, lexicon)
    feats, durations = synthesize(tokens, params, train_cfg.model)
    save_features(args.out, feats)
    print(args.out)
    print(f"{feats.num_frames} frames from {len(tokens)} phonemes")
    return 0


def _pooled_report(rows: list[dict]) -> dict[str, float | None]:
    """Corpus-level metrics from per-utterance prediction/reference arrays."""
    values: dict[str, float | None] = {key: None for key in REPORT_KEYS}
    dur_pred = [r["dur_pred"] for r in rows if r.get("dur_pred") is not None]
    if dur_pred:
        pred = np.concatenate(dur_pred).astype(float)
        gt = np.concatenate([r["dur_gt"] for r in rows
                             if r.get("dur_pred") is not None]).astype(float)
        values["Dur RMSE"], values["Dur CORR"] = rmse_corr(pred, gt)
    pred_feats = [r["pred"] for r in rows]
    gt_feats = [r["gt"] for r in rows]
    values["MCD (dB)"] = mcd(np.concatenate([p.mgc for p in pred_feats]),
                             np.concatenate([g.mgc for g in gt_feats]))
    values["BAPD (dB)"] = bapd(np.concatenate([p.bap for p in pred_feats]),
                               np.concatenate([g.bap for g in gt_feats]))
    values["V/UV Error (%)"] = vuv_error(
        np.concatenate([p.vuv for p in pred_feats]),
        np.concatenate([g.vuv for g in gt_feats]))
    hz_pairs = []
    for pred, gt in zip(pred_feats, gt_feats):
        both = pred.voiced_mask() & gt.voiced_mask()
        if both.any():
            hz_pairs.append((np.exp(pred.logf0[both]), np.exp(gt.logf0[both])))
    if hz_pairs:
        pred_hz = np.concatenate([p for p, _ in hz_pairs])
        gt_hz = np.concatenate([g for _, g in hz_pairs])
        if pred_hz.size >= 2:
            values["F0 RMSE (Hz)"], values["F0 CORR"] = rmse_corr(pred_hz, gt_hz)
    return values


def _utterance_row(utt_id, pred, gt, dur_pred=None, dur_gt=None) -> UtteranceEval:
    values: dict[str, float | None] = {key: None for key in REPORT_KEYS}
    values["MCD (dB)"] = mcd(pred.mgc, gt.mgc)
    values["BAPD (dB)"] = bapd(pred.bap, gt.bap)
    values["V/UV Error (%)"] = vuv_error(pred.vuv, gt.vuv)
    values["F0 RMSE (Hz)"], values["F0 CORR"] = f0_metrics(pred, gt)
    if dur_pred is not None:
        values["Dur RMSE"], values["Dur CORR"] = rmse_corr(
            np.asarray(dur_pred, float), np.asarray(dur_gt, float))
    return UtteranceEval(utt_id=utt_id, num_frames=gt.num_frames, values=values)


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    table_rows: list[UtteranceEval] = []
    notes: list[str] = []
    failures: list[str] = []

    if args.manifest:
        if not args.checkpoint:
            raise CliError("eval over a manifest needs --checkpoint")
        lexicon = _load_lexicon(args)
        ckpt = load_checkpoint(args.checkpoint)
        _check_vocab(ckpt, lexicon)
        params, train_cfg = _model_from_checkpoint(ckpt)
        manifest = load_manifest(args.manifest)
        items = load_corpus_items(manifest, split=args.split)
        if not items:
            raise CliError(f"no utterances in split {args.split!r}")
        notes.append("spectral, F0 and V/UV metrics use ground-truth durations "
                     "(frame-aligned synthesis)")
        notes.append("duration metrics use free-running duration predictions")
        for utt in items:
            pred = synthesize_with_durations(
                utt.tokens, params, train_cfg.model,
                utt.tokens.gt_phoneme_durations)
            dur_pred = predicted_durations(utt.tokens, params, train_cfg.model)
            row = {"utt_id": utt.utt_id, "pred": pred, "gt": utt.features,
                   "dur_pred": dur_pred,
                   "dur_gt": np.asarray(utt.tokens.gt_phoneme_durations)}
            rows.append(row)
            table_rows.append(_utterance_row(
                utt.utt_id, pred, utt.features, dur_pred, row["dur_gt"]))
    elif args.pair:
        notes.append("feature-pair mode: duration metrics unavailable")
        for idx, (pred_path, gt_path) in enumerate(args.pair):
            try:
                pred = load_features(pred_path)
                gt = load_features(gt_path)
                if pred.num_frames != gt.num_frames:
                    raise ValueError(
                        f"frame counts differ: {pred.num_frames} vs {gt.num_frames}"
                    )
            except (OSError, ValueError) as exc:
                failures.append(f"{pred_path} vs {gt_path}: {exc}")
                continue
            utt_id = Path(pred_path).stem
            rows.append({"utt_id": utt_id, "pred": pred, "gt": gt})
            table_rows.append(_utterance_row(utt_id, pred, gt))
        for failure in failures:
            print(f"error: {failure}", file=sys.stderr)
        if not rows:
            raise CliError("every feature pair failed to evaluate")
    else:
        raise CliError("eval needs --manifest or at least one --pair")

    report = EvalReport(values=_pooled_report(rows), per_utterance=table_rows,
                        header_notes=notes)
    (out_dir / "eval_report.txt").write_text(report.format(), encoding="utf-8")
    (out_dir / "per_utterance.tsv").write_text(
        format_per_utterance_table(table_rows), encoding="utf-8")
    gv_values = gv([r["pred"].mgc for r in rows])
    (out_dir / "gv.tsv").write_text(format_gv_table(gv_values), encoding="utf-8")
    print(out_dir / "eval_report.txt")
    for key in REPORT_KEYS:
        value = report.values[key]
        print(f"{key}\t{'NA' if value is None else value}")
    return 1 if failures and not rows else 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singsynth",
        description="Singing voice synthesis: scores in, vocoder features out.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic oracle corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--songs", type=int, required=True, help="number of songs")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="key-value config file")
    p.add_argument("--set", nargs=2, action="append", dest="overrides",
                   metavar=("KEY", "VALUE"), help="override one config field")
    p.add_argument("--lexicon", default=None, help="lexicon file (default built-in)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the acoustic model on a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", default=None)
    p.add_argument("--set", nargs=2, action="append", dest="overrides",
                   metavar=("KEY", "VALUE"), help="override one config field")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--lexicon", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize features for a score")
    p.add_argument("--score", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output feature file")
    p.add_argument("--lexicon", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="objective metrics against ground truth")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--manifest", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="holdout",
                   choices=["train", "holdout", "all"])
    p.add_argument("--pair", nargs=2, action="append", default=None,
                   metavar=("PRED", "GT"))
    p.add_argument("--lexicon", default=None)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CorpusValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def console_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_entry()
