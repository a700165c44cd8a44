"""Pipeline orchestration CLI.

Subcommands mirror the experiment stages: prepare, features, train-lm,
train, decode, evaluate, augment-preview (plus make-fixture to generate
the synthetic stand-in corpus). Every stage reads one shared config file,
overridable with --set section.key=value flags; exit codes are 0 success,
1 runtime error, 2 validation error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, corpus, ctc, dsp, lm as lm_mod, metrics, synth
from .augment import (
    AugmentPolicy,
    augment,
    default_confusion_table,
    derived_seed,
    load_confusion_table,
)
from .config import PipelineConfig, ValidationError, load_config
from .nn import model as nn_model
from .nn import train as nn_train
from .phoneset import default_alphabet, load_alphabet

SPLITS = ("train", "validation", "test")


def _paths(cfg: PipelineConfig) -> dict[str, str]:
    w = cfg.work_dir
    return {
        "manifest": os.path.join(w, "manifest.json"),
        "data": os.path.join(w, "data"),
        "archive": os.path.join(w, "fbank.ark"),
        "index": os.path.join(w, "fbank.scp"),
        "cmvn": os.path.join(w, "cmvn.txt"),
        "lm": os.path.join(w, "lm_phone.arpa"),
        "checkpoint": os.path.join(w, "model.ckpt"),
        "train_log": os.path.join(w, "train.log"),
    }


def _alphabet(cfg: PipelineConfig):
    if cfg.alphabet:
        if not os.path.isfile(cfg.alphabet):
            raise ValidationError(f"alphabet file {cfg.alphabet!r} not found")
        return load_alphabet(cfg.alphabet)
    return default_alphabet()


def _confusions(cfg: PipelineConfig, alphabet):
    if cfg.confusion_table:
        if not os.path.isfile(cfg.confusion_table):
            raise ValidationError(f"confusion table {cfg.confusion_table!r} not found")
        return load_confusion_table(cfg.confusion_table, alphabet)
    return default_confusion_table(alphabet)


def _manifest(cfg: PipelineConfig, alphabet):
    path = _paths(cfg)["manifest"]
    if not os.path.isfile(path):
        raise ValidationError(f"manifest {path!r} not found; run `prepare` first")
    return corpus.load_manifest(path, alphabet)


def _fbank_config(cfg: PipelineConfig) -> dsp.FbankConfig:
    return dsp.FbankConfig(
        sample_rate_hz=cfg.sample_rate,
        frame_length_s=cfg.frame_length_ms / 1000.0,
        frame_shift_s=cfg.frame_shift_ms / 1000.0,
        num_filters=cfg.num_filters,
    )


def _model_config(cfg: PipelineConfig, alphabet) -> nn_model.ModelConfig:
    input_dim = 3 * (cfg.num_filters + 1)
    return nn_model.ModelConfig(
        vocab_size=alphabet.size,
        variant=cfg.variant,
        input_dim=input_dim,
        conv_channels=cfg.conv_channels,
        rnn_layers=cfg.rnn_layers,
        rnn_hidden=cfg.rnn_hidden,
        embed_dim=cfg.embed_dim,
        sentence_hidden=cfg.sentence_hidden,
        dropout=cfg.dropout,
    )


# ---------------------------------------------------------------------------
# stages

def cmd_prepare(cfg: PipelineConfig) -> int:
    if not cfg.corpus_dir:
        raise ValidationError("paths.corpus_dir is not set")
    alphabet = _alphabet(cfg)
    manifest = corpus.parse_kaldi_dir(cfg.corpus_dir, alphabet)
    missing = []
    for utt in manifest.utterances:
        if "|" in utt.wav_path:
            raise ValidationError(
                f"{utt.utterance_id}: wav.scp entry {utt.wav_path!r} is a command pipe; "
                "SPHERE conversion is out of scope, provide PCM WAV files"
            )
        if not os.path.isfile(utt.wav_path):
            missing.append((utt.utterance_id, utt.wav_path))
    if missing:
        for utt_id, path in missing:
            print(f"missing wav for {utt_id}: {path}", file=sys.stderr)
        raise ValidationError(f"{len(missing)} wav files referenced by wav.scp are missing")

    manifest = corpus.default_split(manifest)
    paths = _paths(cfg)
    os.makedirs(cfg.work_dir, exist_ok=True)
    for split in SPLITS:
        utts = manifest.by_split(split)
        sub = corpus.CorpusManifest(
            tuple(utts), {u.utterance_id: split for u in utts}
        )
        corpus.emit_kaldi_dir(sub, os.path.join(paths["data"], split), alphabet)
    corpus.save_manifest(manifest, paths["manifest"], alphabet)
    counts = {split: len(manifest.by_split(split)) for split in SPLITS}
    print(
        f"prepared {len(manifest)} utterances "
        f"(train={counts['train']} validation={counts['validation']} test={counts['test']})"
    )
    return 0


def _extract_one(utt, fbank_cfg):
    wave = dsp.load_wav(utt.wav_path)
    if utt.segment is not None:
        wave = dsp.crop_segment(wave, *utt.segment)
    if wave.sample_rate_hz != fbank_cfg.sample_rate_hz:
        wave = dsp.resample(wave, fbank_cfg.sample_rate_hz)
    return dsp.compute_fbank(wave, fbank_cfg)


def cmd_features(cfg: PipelineConfig) -> int:
    alphabet = _alphabet(cfg)
    manifest = _manifest(cfg, alphabet)
    fbank_cfg = _fbank_config(cfg)
    paths = _paths(cfg)

    utts = sorted(manifest.utterances, key=lambda u: u.utterance_id)
    raw: dict[str, np.ndarray] = {}
    warnings = 0

    def worker(utt):
        try:
            return utt.utterance_id, _extract_one(utt, fbank_cfg), None
        except (dsp.AudioError, OSError) as exc:
            return utt.utterance_id, None, str(exc)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(worker, utts))
    else:
        results = [worker(u) for u in utts]
    for utt_id, feats, error in results:
        if error is not None:
            warnings += 1
            print(f"warning: skipping {utt_id}: {error}", file=sys.stderr)
        else:
            raw[utt_id] = feats

    train_ids = [u.utterance_id for u in manifest.by_split("train")]
    stats = dsp.accumulate_cmvn(raw[i] for i in sorted(train_ids) if i in raw)
    if stats.count == 0:
        raise ValidationError("no training-split features extracted; cannot compute CMVN")
    dsp.save_cmvn(stats, paths["cmvn"])

    with dsp.FeatureArchiveWriter(paths["archive"], paths["index"]) as writer:
        for utt_id in sorted(raw):
            writer.write(utt_id, dsp.apply_cmvn(raw[utt_id], stats, cfg.norm_vars))
    print(f"extracted {len(raw)} utterances ({warnings} warnings), dim {fbank_cfg.feature_dim}")
    return 0


def _target_sequences(manifest, alphabet, split):
    out = []
    for utt, canonical, actual in corpus.sequences_for_training(manifest, alphabet):
        if manifest.split.get(utt.utterance_id, "train") == split:
            out.append((utt, canonical, actual))
    return out


def cmd_train_lm(cfg: PipelineConfig) -> int:
    alphabet = _alphabet(cfg)
    manifest = _manifest(cfg, alphabet)
    rows = _target_sequences(manifest, alphabet, "train")
    if not rows:
        raise ValidationError("no training-split utterances with phoneme transcripts")
    model = lm_mod.train_lm([actual for _, _, actual in rows], cfg.order, alphabet, cfg.smoothing)
    paths = _paths(cfg)
    lm_mod.write_arpa(model, paths["lm"])
    sizes = {n: sum(1 for h in model.table if len(h) == n - 1) for n in range(1, cfg.order + 1)}
    print(f"trained {cfg.order}-gram LM ({cfg.smoothing}); histories per order: {sizes}")
    return 0


def _train_items(cfg, manifest, alphabet, reader, split):
    items = []
    for utt, canonical, actual in _target_sequences(manifest, alphabet, split):
        if utt.utterance_id not in reader:
            continue
        feats = dsp.stack_frames(reader.read(utt.utterance_id))
        items.append(
            nn_train.TrainItem(utt.utterance_id, feats, list(canonical), list(actual))
        )
    return items


def cmd_train(cfg: PipelineConfig) -> int:
    alphabet = _alphabet(cfg)
    manifest = _manifest(cfg, alphabet)
    paths = _paths(cfg)
    if not os.path.isfile(paths["archive"]):
        raise ValidationError(f"feature archive {paths['archive']!r} not found; run `features`")
    reader = dsp.FeatureArchiveReader(paths["archive"], paths["index"])

    model_cfg = _model_config(cfg, alphabet)
    stacked_dim = 3 * _fbank_config(cfg).feature_dim
    if stacked_dim != model_cfg.input_dim:
        raise ValidationError(
            f"stacked feature dim {stacked_dim} != model input dim {model_cfg.input_dim}"
        )

    train_items = _train_items(cfg, manifest, alphabet, reader, "train")
    val_items = _train_items(cfg, manifest, alphabet, reader, "validation")
    if not train_items:
        raise ValidationError("no training items (check phn_text and the feature archive)")

    policy = None
    table = None
    if cfg.strategy != "none" and cfg.rate > 0:
        policy = AugmentPolicy(cfg.strategy, cfg.rate, derived_seed(cfg.seed, "augment"))
        if cfg.strategy == "confusion_pair":
            table = _confusions(cfg, alphabet)
    hyper = nn_train.Hyper(
        lr=cfg.lr,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        clip_norm=cfg.clip_norm,
        augment_policy=policy,
        augment_once=cfg.augment_once,
        confusion_table=table,
    )
    params = nn_model.ModelParams.init(model_cfg, seed=derived_seed(cfg.seed, "init"))
    print(f"training {cfg.variant} model, {nn_model.count_params(model_cfg)} parameters")
    result = nn_train.train(
        params,
        train_items,
        val_items,
        hyper,
        alphabet=alphabet,
        checkpoint_path=paths["checkpoint"],
        log_path=paths["train_log"],
        on_epoch=lambda e: print(
            f"epoch {e.epoch}: loss {e.loss:.4f}"
            + (f" val_per {e.val_per:.4f}" if e.val_per is not None else "")
        ),
    )
    if result.best_epoch is not None:
        print(f"best epoch {result.best_epoch} (val_per {result.best_val_per})")
    return 0


def cmd_decode(cfg: PipelineConfig, split: str) -> int:
    alphabet = _alphabet(cfg)
    manifest = _manifest(cfg, alphabet)
    paths = _paths(cfg)
    if not os.path.isfile(paths["checkpoint"]):
        raise ValidationError(f"checkpoint {paths['checkpoint']!r} not found; run `train` first")
    if not os.path.isfile(paths["archive"]):
        raise ValidationError(f"feature archive {paths['archive']!r} not found; run `features`")
    params = nn_model.load_checkpoint(paths["checkpoint"])
    reader = dsp.FeatureArchiveReader(paths["archive"], paths["index"])

    ngram = None
    if cfg.use_lm:
        if not os.path.isfile(paths["lm"]):
            raise ValidationError(
                f"LM {paths['lm']!r} not found; run `train-lm` or set decode.use_lm=false"
            )
        ngram = lm_mod.read_arpa(paths["lm"], alphabet)

    lines = []
    for utt, canonical, _actual in _target_sequences(manifest, alphabet, split):
        if utt.utterance_id not in reader:
            continue
        feats = dsp.stack_frames(reader.read(utt.utterance_id))
        trace = nn_model.forward(params, feats, canonical, mode="eval")
        hyp = ctc.beam_decode(
            trace.logp,
            params.config.blank_id,
            beam=cfg.beam,
            lm=ngram,
            lm_weight=cfg.lm_weight,
            insertion_bonus=cfg.insertion_bonus,
        )
        lines.append(" ".join([utt.utterance_id] + alphabet.decode(hyp)))
    out_path = os.path.join(cfg.work_dir, f"decode_{split}.txt")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    print(f"decoded {len(lines)} utterances -> {out_path}")
    return 0


def cmd_evaluate(cfg: PipelineConfig, split: str) -> int:
    alphabet = _alphabet(cfg)
    manifest = _manifest(cfg, alphabet)
    decode_path = os.path.join(cfg.work_dir, f"decode_{split}.txt")
    if not os.path.isfile(decode_path):
        raise ValidationError(f"decode output {decode_path!r} not found; run `decode` first")
    recognized: dict[str, list[int]] = {}
    with open(decode_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts:
                recognized[parts[0]] = alphabet.encode(parts[1:])

    counts = metrics.MddCounts()
    distance = 0
    ref_len = 0
    n_utts = 0
    for utt, canonical, actual in _target_sequences(manifest, alphabet, split):
        if utt.utterance_id not in recognized:
            continue
        hyp = recognized[utt.utterance_id]
        counts = counts + metrics.hierarchical_eval(
            canonical, actual, hyp, events=list(utt.annotation or ())
        )
        distance += metrics.edit_distance(actual, hyp)
        ref_len += len(actual)
        n_utts += 1
    if n_utts == 0:
        raise ValidationError(f"no decoded utterances match the {split} split")

    report = metrics.summarize(counts, per_value=(distance / ref_len if ref_len else None))
    text = metrics.format_report(report)
    print(f"evaluated {n_utts} utterances on {split}")
    print(text, end="")
    report_path = os.path.join(cfg.work_dir, f"report_{split}.txt")
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return 0


def cmd_augment_preview(cfg: PipelineConfig, limit: int) -> int:
    if cfg.strategy == "none":
        raise ValidationError("augment-preview needs augment.strategy set")
    alphabet = _alphabet(cfg)
    manifest = _manifest(cfg, alphabet)
    policy = AugmentPolicy(cfg.strategy, cfg.rate, derived_seed(cfg.seed, "augment"))
    table = _confusions(cfg, alphabet) if cfg.strategy == "confusion_pair" else None
    shown = 0
    for utt, canonical, _actual in _target_sequences(manifest, alphabet, "train"):
        rng = np.random.default_rng(derived_seed(policy.seed, utt.utterance_id, 0))
        out = augment(canonical, policy, alphabet, table=table, rng=rng)
        before = " ".join(alphabet.decode(canonical))
        after = " ".join(alphabet.decode(out))
        marker = "" if out == list(canonical) else "  *"
        print(f"{utt.utterance_id}: {before} -> {after}{marker}")
        shown += 1
        if shown >= limit:
            break
    if shown == 0:
        raise ValidationError("no training utterances with phoneme transcripts to preview")
    return 0


def cmd_make_fixture(args) -> int:
    manifest, _ = synth.make_fixture(
        args.dir,
        seed=args.seed,
        n_train=args.train,
        n_val=args.val,
        n_test=args.test,
        error_rate=args.error_rate,
    )
    print(f"fixture corpus with {len(manifest)} utterances in {args.dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mddkit",
        description="Mispronunciation detection and diagnosis pipeline",
    )
    parser.add_argument("--version", action="version", version=f"mddkit {__version__}")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text, **extra):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="pipeline config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable; flag wins over file)",
        )
        p.add_argument("--threads", type=int, default=None, help="stage-internal parallelism")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument(
            "--config-dump",
            action="store_true",
            help="print the fully resolved configuration and exit",
        )
        return p

    add("prepare", "parse + validate the corpus, split it, emit Kaldi-style dirs")
    add("features", "extract fbank features, compute and apply global CMVN")
    add("train-lm", "train the phone n-gram LM and write it in ARPA form")
    add("train", "train the acoustic model")
    p = add("decode", "beam-search decode a split with optional LM fusion")
    p.add_argument("--split", default="test", choices=SPLITS)
    p = add("evaluate", "score decoded output with PER and hierarchical MDD metrics")
    p.add_argument("--split", default="test", choices=SPLITS)
    p = add("augment-preview", "show augmented sentence inputs for training utterances")
    p.add_argument("--limit", type=int, default=10)

    p = sub.add_parser("make-fixture", help="generate the synthetic fixture corpus")
    p.add_argument("dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", type=int, default=20)
    p.add_argument("--val", type=int, default=4)
    p.add_argument("--test", type=int, default=6)
    p.add_argument("--error-rate", type=float, default=0.1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        if args.command == "make-fixture":
            return cmd_make_fixture(args)
        overrides = list(args.overrides)
        if args.threads is not None:
            overrides.append(f"run.threads={args.threads}")
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        if args.config_dump:
            print(cfg.dump(), end="")
            return 0
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "features":
            return cmd_features(cfg)
        if args.command == "train-lm":
            return cmd_train_lm(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "decode":
            return cmd_decode(cfg, args.split)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.split)
        if args.command == "augment-preview":
            return cmd_augment_preview(cfg, args.limit)
        parser.error(f"unknown command {args.command!r}")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
