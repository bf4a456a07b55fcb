"""Command-line interface.

Subcommands: detect (spot keywords in a WAV), train (two-stage
training), cost (multiplication budget report), eval (ROC sweep),
synth (synthetic datasets and streams).

Exit codes: 0 success, 2 bad arguments or bad input data, 3 I/O
failure, 4 unreadable model file.  Set KWS_LOG=INFO or DEBUG for
progress logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import wave

import numpy as np

from .cost import measured_mulps, mulps
from .errors import ConfigError, InputError, KwsError, ModelFormatError
from .evaluation import (
    GroundTruth,
    MixSpec,
    make_derivative_stream,
    mix_noise,
    pink_noise,
    roc_sweep,
    white_noise,
)
from .features import AudioStream, extract_fbank, fit_normalizer, read_wav, write_wav
from .inference import PosteriorTrace, batch_forward, stream_detect
from .model import build_default, build_model, load_model, save_model
from .synthesis import (
    GSC10_KEYWORDS,
    clip_set,
    load_clip_directory,
    make_language,
    phone_corpus,
    write_clip_directory,
)
from .training import (
    LabeledFrameSet,
    TrainConfig,
    train_phone_stage,
    train_word_stage,
    word_output_count,
)

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MODEL = 4

DEFAULT_THRESHOLDS = tuple(round(t, 4) for t in np.linspace(0.98, 0.02, 49))


def _setup_logging() -> None:
    name = os.environ.get("KWS_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _threshold_arg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("threshold must lie in [0, 1]")
    return value


def _threshold_list_arg(text: str) -> tuple:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad threshold list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty threshold list")
    return values


def _keyword_list_arg(text: str) -> tuple:
    names = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    if not names:
        raise argparse.ArgumentTypeError("empty keyword list")
    return names


def _hidden_arg(text: str) -> tuple:
    try:
        dims = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer sizes {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("layer sizes must be positive integers")
    return dims


def _resolve_keywords(args, data_dir=None) -> tuple:
    """Keyword list from --preset, --keywords, or folder names."""
    if getattr(args, "preset", None) == "gsc10":
        return GSC10_KEYWORDS
    if getattr(args, "keywords", None):
        return args.keywords
    if data_dir is None:
        raise ConfigError("need --keywords or --preset to name the keywords")
    folders = sorted(
        name for name in os.listdir(data_dir)
        if os.path.isdir(os.path.join(data_dir, name))
        and name not in ("filler", "_background_noise_")
    )
    if not folders:
        raise InputError(f"{data_dir}: no keyword folders found")
    return tuple(folders)


def cmd_detect(args) -> int:
    model = load_model(args.model)
    stream = read_wav(args.wav)
    features = extract_fbank(stream, model.frontend)
    trace, events, state = stream_detect(
        model, features, skip=args.skip, threshold=args.threshold,
        count_mults=True,
    )
    for ev in events:
        sys.stdout.write(json.dumps({
            "keyword": ev.keyword,
            "frame": int(ev.frame),
            "time_s": round(float(ev.time_s), 6),
            "score": float(ev.score),
        }) + "\n")
    if args.trace_out:
        trace.to_csv(args.trace_out)
    if len(features) and logger.isEnabledFor(logging.INFO):
        report = measured_mulps(state)
        logger.info("instrumented rate: %s multiplications/s",
                     report.display_total)
    return 0


def cmd_cost(args) -> int:
    model = load_model(args.model) if args.model else build_default(1)
    report = mulps(model, args.skip)
    if args.json:
        print(json.dumps(report.to_json(), indent=2))
    else:
        print(report.render_table())
    return 0


def _last_log_record(path):
    try:
        with open(path) as f:
            lines = [line for line in f if line.strip()]
        return json.loads(lines[-1]) if lines else None
    except OSError:
        return None


def _train_phone(args, config, log_path):
    data = np.load(args.data)
    if "features" not in data or "phone_labels" not in data:
        raise InputError(
            f"{args.data}: phone corpus needs 'features' and 'phone_labels' arrays"
        )
    features = data["features"]
    labels = np.asarray(data["phone_labels"], dtype=np.int64)
    if features.ndim != 2 or len(features) != len(labels):
        raise InputError(
            f"{args.data}: features {features.shape} do not match "
            f"{labels.shape[0]} labels"
        )
    num_phones = int(labels.max()) + 1 if len(labels) else 0
    if num_phones < 2:
        raise InputError("phone corpus needs at least two phone classes")
    template = build_model(
        ("kw1",), seed=config.seed,
        normalizer=fit_normalizer(features),
        phone_hidden=args.phone_hidden,
        num_phones=num_phones,
    )
    dataset = [LabeledFrameSet(features=features, phone_labels=labels)]
    return train_phone_stage(dataset, config, template=template,
                             log_path=log_path)


def _train_word(args, config, log_path):
    if not args.init_from:
        raise ConfigError(
            "--stage word needs --init-from with a phone-stage checkpoint"
        )
    phone_model = load_model(args.init_from)
    keywords = _resolve_keywords(args, args.data)
    clips = load_clip_directory(args.data, keywords)
    datasets = []
    skipped = 0
    for clip in clips:
        features = extract_fbank(
            AudioStream(samples=clip.samples, sample_rate=clip.sample_rate),
            phone_model.frontend,
        )
        n_out = word_output_count(phone_model, len(features))
        if n_out == 0:
            skipped += 1
            continue
        # unsegmented clips: the word is taken to span the whole clip;
        # clip labels are 1-based, output slots 0-based with filler last
        slot = clip.label - 1 if clip.label else len(keywords)
        labels = np.full(n_out, slot, dtype=np.int64)
        datasets.append(LabeledFrameSet(features=features, word_labels=labels))
    if skipped:
        logger.warning("skipped %d clips shorter than the receptive field",
                       skipped)
    if not datasets:
        raise InputError(f"{args.data}: no clip is long enough to train on")
    return train_word_stage(phone_model, datasets, keywords, config,
                            word_hidden=args.word_hidden, log_path=log_path)


def cmd_train(args) -> int:
    config = TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        freeze_phone_nn=args.freeze_phone,
    )
    log_path = args.log or args.out + ".log.jsonl"
    if args.stage == "phone":
        model = _train_phone(args, config, log_path)
    else:
        model = _train_word(args, config, log_path)
    save_model(model, args.out)
    line = f"wrote {args.out} ({args.stage} stage, {args.epochs} epochs"
    record = _last_log_record(log_path)
    if record:
        line += f", loss {record['loss']:.4f}, accuracy {record['accuracy']:.3f}"
    print(line + ")")
    return 0


def cmd_eval(args) -> int:
    if bool(args.trace) == bool(args.wav):
        raise ConfigError("give exactly one of --trace or --wav")
    truth = GroundTruth.load(args.truth)
    if args.trace:
        trace = PosteriorTrace.from_csv(args.trace)
    else:
        if not args.model:
            raise ConfigError("--wav needs --model to compute posteriors")
        model = load_model(args.model)
        stream = read_wav(args.wav)
        features = extract_fbank(stream, model.frontend)
        trace = batch_forward(model, features, skip=args.skip)
    roc = roc_sweep(trace, truth, args.thresholds)
    if args.out:
        roc.to_csv(args.out)
    frr05 = roc.frr_at(0.5)
    if args.json:
        print(json.dumps({
            "frr_percent_at_0.5_fa_per_hour": frr05,
            "points": [
                {"threshold": t, "frr_percent": frr, "fa_per_hour": fa}
                for t, frr, fa in roc.points
            ],
        }, indent=2))
    else:
        print(f"{'threshold':>10} {'frr%':>8} {'fa/hr':>8}")
        for t, frr, fa in roc.points:
            print(f"{t:>10.4f} {frr:>8.2f} {fa:>8.2f}")
        print(f"frr at 0.5 fa/hr: {frr05:.2f}%")
    return 0


def _toy_clips(args):
    language = make_language(seed=args.language_seed)
    clips, _ = clip_set(language, per_keyword=args.per_keyword,
                        num_fillers=args.fillers, seed=args.seed)
    return language, clips


def _synth_stream(args) -> int:
    if args.clips:
        keywords = _resolve_keywords(args, args.clips)
        clips = load_clip_directory(args.clips, keywords)
    else:
        language, clips = _toy_clips(args)
        keywords = language.keyword_names
    spec = MixSpec(snr_db=args.snr_db, seed=args.seed)
    stream, truth = make_derivative_stream(clips, spec, keywords)
    if args.snr_db is not None:
        rng = np.random.default_rng(spec.seed + 1)
        if args.noise.endswith(".wav"):
            noise = read_wav(args.noise)
        else:
            maker = white_noise if args.noise == "white" else pink_noise
            noise = AudioStream(samples=maker(len(stream.samples), rng),
                                sample_rate=stream.sample_rate)
        stream = mix_noise(stream, noise, args.snr_db, rng)
    write_wav(args.out_wav, stream)
    truth_path = args.out_truth or args.out_wav + ".truth.json"
    truth.save(truth_path)
    print(f"wrote {args.out_wav} ({truth.total_audio_seconds:.1f} s, "
          f"{len(truth.spans)} keyword spans) and {truth_path}")
    return 0


def _synth_clips(args) -> int:
    language, clips = _toy_clips(args)
    write_clip_directory(args.out, language, clips)
    print(f"wrote {len(clips)} clips under {args.out} "
          f"(keywords: {', '.join(language.keyword_names)})")
    return 0


def _synth_phones(args) -> int:
    language = make_language(seed=args.language_seed)
    corpus = phone_corpus(language, num_frames=args.frames, seed=args.seed)
    np.savez(args.out, features=corpus.features,
             phone_labels=corpus.phone_labels)
    out = args.out if args.out.endswith(".npz") else args.out + ".npz"
    print(f"wrote {out} ({len(corpus.features)} labeled frames, "
          f"{language.num_phone_classes} phone classes)")
    return 0


def cmd_synth(args) -> int:
    if args.kind == "stream":
        return _synth_stream(args)
    if args.kind == "clips":
        return _synth_clips(args)
    return _synth_phones(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdkws",
        description="Streaming keyword spotting with a two-stage TDNN.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="spot keywords in a WAV file")
    p.add_argument("wav", help="16 kHz mono 16-bit WAV file")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--threshold", type=_threshold_arg, default=0.5)
    p.add_argument("--skip", choices=("none", "2", "4"), default="none")
    p.add_argument("--trace-out", help="write the posterior trace as CSV")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("cost", help="multiplications-per-second report")
    p.add_argument("--model", help="model file (default: reference architecture)")
    p.add_argument("--skip", choices=("none", "2", "4"), default="none")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("train", help="train a stage of the model")
    p.add_argument("data", help="phone stage: .npz corpus; word stage: clip directory")
    p.add_argument("--stage", choices=("phone", "word"), required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--init-from", help="phone-stage checkpoint (word stage)")
    p.add_argument("--keywords", type=_keyword_list_arg,
                   help="comma-separated keyword folder names")
    p.add_argument("--preset", choices=("gsc10",),
                   help="named keyword split (gsc10: ten-command set)")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze-phone", action="store_true",
                   help="word stage: leave phone layers untouched")
    p.add_argument("--phone-hidden", type=_hidden_arg, default=(128, 128, 128))
    p.add_argument("--word-hidden", type=_hidden_arg, default=(64,))
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ROC sweep against ground truth")
    p.add_argument("--truth", required=True, help="ground-truth JSON")
    p.add_argument("--trace", help="posterior trace CSV")
    p.add_argument("--wav", help="stream WAV (needs --model)")
    p.add_argument("--model")
    p.add_argument("--skip", choices=("none", "2", "4"), default="none")
    p.add_argument("--thresholds", type=_threshold_list_arg,
                   default=DEFAULT_THRESHOLDS,
                   help="comma-separated, sorted descending")
    p.add_argument("--out", help="ROC CSV path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate synthetic data")
    p.add_argument("--kind", choices=("stream", "clips", "phones"),
                   default="stream")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--language-seed", type=int, default=7,
                   help="seed fixing the toy phone inventory and lexicon")
    p.add_argument("--clips", help="clip directory (stream kind; default: toy clips)")
    p.add_argument("--keywords", type=_keyword_list_arg)
    p.add_argument("--preset", choices=("gsc10",))
    p.add_argument("--per-keyword", type=int, default=20,
                   help="toy clips per keyword")
    p.add_argument("--fillers", type=int, default=40,
                   help="toy filler clip count")
    p.add_argument("--snr-db", type=float, help="mix noise at this SNR")
    p.add_argument("--noise", default="white",
                   help="white, pink, or a WAV path (with --snr-db)")
    p.add_argument("--out-wav", help="stream kind: output WAV")
    p.add_argument("--out-truth", help="stream kind: truth JSON path")
    p.add_argument("--out", help="clips kind: directory; phones kind: .npz path")
    p.add_argument("--frames", type=int, default=40000,
                   help="phones kind: labeled frame count")
    p.set_defaults(func=cmd_synth)
    return parser


def _check_synth_args(parser, args) -> None:
    if args.command != "synth":
        return
    if args.kind == "stream" and not args.out_wav:
        parser.error("synth --kind stream needs --out-wav")
    if args.kind in ("clips", "phones") and not args.out:
        parser.error(f"synth --kind {args.kind} needs --out")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    _check_synth_args(parser, args)
    try:
        return args.func(args)
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (OSError, wave.Error, EOFError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KwsError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
