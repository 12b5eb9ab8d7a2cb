#!/usr/bin/env python3
"""
las-asr command line: feature extraction, augmentation, word pieces, training, LMs,
decoding, rescoring and scoring.

    python app.py <subcommand> [options]
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

from pydantic import ValidationError

from utils.config import LASConfig, config, load_config
from utils.errors import InvalidArgumentError, LASError
from utils.logger import logger, set_level

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _read_lines(path: str) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _write_lines(path: str, lines: Sequence[str]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(line + "\n" for line in lines))


def _parallel_map(fn, items, jobs: int) -> list:
    """Order-preserving map over a thread pool."""
    with ThreadPoolExecutor(max_workers=max(jobs, 1)) as pool:
        return list(pool.map(fn, items))


# Subcommands

def cmd_features(args, cfg: LASConfig) -> int:
    from core.frontend import FbankOptions, compute_fbank, read_audio, write_features
    from core.manifest import ManifestRecord, read_manifest, write_manifest

    opts = FbankOptions.from_config(cfg)
    if args.manifest:
        if not (args.out_dir and args.out_manifest):
            raise InvalidArgumentError("--manifest needs --out-dir and --out-manifest")
        records = read_manifest(args.manifest)

        def extract(record: ManifestRecord) -> ManifestRecord:
            if record.audio is None:
                return record
            path = os.path.join(args.out_dir, f"{record.id}.fbnk")
            write_features(path, compute_fbank(read_audio(record.audio), opts, utt_id=record.id))
            return ManifestRecord(id=record.id, feats=os.path.abspath(path), text=record.text)

        write_manifest(args.out_manifest, _parallel_map(extract, records, args.jobs))
        logger.info(f"Extracted features for {len(records)} utterances into {args.out_dir}")
        return EXIT_OK
    if not (args.input and args.output):
        raise InvalidArgumentError("give an input WAV and an output path, or --manifest")
    feats = compute_fbank(read_audio(args.input), opts, utt_id=os.path.basename(args.input))
    write_features(args.output, feats)
    logger.info(f"Wrote {feats.num_frames} frames to {args.output}")
    return EXIT_OK


def cmd_augment(args, cfg: LASConfig) -> int:
    from core.frontend import read_audio, speed_perturb, write_audio
    from core.manifest import ManifestRecord, read_manifest, write_manifest

    factors = [args.factor] if args.factor is not None else list(cfg.speed_factor_list)
    if args.manifest:
        if not (args.out_dir and args.out_manifest):
            raise InvalidArgumentError("--manifest needs --out-dir and --out-manifest")
        jobs = [(r, f) for r in read_manifest(args.manifest) if r.audio is not None for f in factors]

        def perturb(job) -> ManifestRecord:
            record, factor = job
            utt_id = f"{record.id}-sp{factor:g}"
            path = os.path.join(args.out_dir, f"{utt_id}.wav")
            write_audio(path, speed_perturb(read_audio(record.audio), factor))
            return ManifestRecord(id=utt_id, audio=os.path.abspath(path), text=record.text)

        write_manifest(args.out_manifest, _parallel_map(perturb, jobs, args.jobs))
        logger.info(f"Wrote {len(jobs)} speed-perturbed copies to {args.out_dir}")
        return EXIT_OK
    if not (args.input and args.output):
        raise InvalidArgumentError("give an input WAV and an output WAV, or --manifest")
    if len(factors) != 1:
        raise InvalidArgumentError("single-file mode takes exactly one --factor")
    waveform = speed_perturb(read_audio(args.input), factors[0])
    write_audio(args.output, waveform)
    logger.info(f"Wrote {len(waveform)} samples to {args.output}")
    return EXIT_OK


def cmd_bpe_learn(args, cfg: LASConfig) -> int:
    from core.wordpiece import learn_bpe

    size = args.size if args.size is not None else cfg.wp_size
    learn_bpe(_read_lines(args.corpus), size, lowercase=cfg.lowercase).save(args.out)
    return EXIT_OK


def cmd_bpe_apply(args, cfg: LASConfig) -> int:
    from core.wordpiece import WordPieceVocab, encode, encode_pieces

    vocab = WordPieceVocab.load(args.vocab, lowercase=cfg.lowercase)
    lines = _read_lines(args.input)
    if args.ids:
        out = [" ".join(str(i) for i in encode(line, vocab)) for line in lines]
    else:
        out = [" ".join(encode_pieces(line, vocab)) for line in lines]
    _write_lines(args.output, out)
    return EXIT_OK


def _load_utterances(path: str, vocab, cfg: LASConfig):
    from core.frontend import FbankOptions
    from core.manifest import load_corpus, read_manifest
    from core.training.trainer import prepare_utterances

    return prepare_utterances(load_corpus(read_manifest(path), FbankOptions.from_config(cfg)), vocab)


def cmd_train(args, cfg: LASConfig) -> int:
    from core.training.trainer import fit
    from core.wordpiece import WordPieceVocab

    vocab = WordPieceVocab.load(args.vocab, lowercase=cfg.lowercase)
    train = _load_utterances(args.train, vocab, cfg)
    val = _load_utterances(args.val, vocab, cfg) if args.val else None
    augmented = _load_utterances(args.augmented, vocab, cfg) if args.augmented else None
    fit(train, vocab, cfg, args.out_dir, val=val, augmented=augmented)
    return EXIT_OK


def cmd_mwer_train(args, cfg: LASConfig) -> int:
    from core.model.las import LASModel
    from core.numerics.prng import make_prng
    from core.training.trainer import fit_mwer
    from core.wordpiece import WordPieceVocab

    vocab = WordPieceVocab.load(args.vocab, lowercase=cfg.lowercase)
    train = _load_utterances(args.train, vocab, cfg)
    data = list(train)
    if args.augmented and cfg.mwer_augment:
        data += _load_utterances(args.augmented, vocab, cfg)
    model = LASModel.load(args.init, attention_history=cfg.attention_history)
    result = fit_mwer(model, data, vocab, cfg, args.out_dir, make_prng(cfg.seed), eval_data=train)
    model.save(os.path.join(args.out_dir, "final.lasf"), dtype=cfg.checkpoint_dtype)
    logger.info(f"MWER training wrote {len(result.checkpoints)} checkpoints")
    return EXIT_OK


def cmd_ngram_build(args, cfg: LASConfig) -> int:
    from core.lm.ngram import train_ngram, write_arpa

    order = args.order if args.order is not None else cfg.ngram_order
    lm = train_ngram(_read_lines(args.corpus), order=order, discount=cfg.ngram_discount, lowercase=cfg.lowercase)
    write_arpa(lm, args.out)
    return EXIT_OK


def cmd_nnlm_train(args, cfg: LASConfig) -> int:
    from core.lm.nnlm import NeuralLM, train_nnlm
    from core.numerics.prng import make_prng
    from core.wordpiece import WordPieceVocab, WordVocab, encode, normalize_text

    lines = [line for line in _read_lines(args.corpus) if line.strip()]
    if args.level == "word":
        vocab = WordVocab.build(lines, min_count=cfg.word_min_count, lowercase=cfg.lowercase)
        vocab.save(args.out + ".words")
        sentences = [vocab.ids(normalize_text(line, cfg.lowercase).split()) for line in lines]
        size = vocab.size
    else:
        if not args.vocab:
            raise InvalidArgumentError("--level wordpiece needs --vocab")
        wp_vocab = WordPieceVocab.load(args.vocab, lowercase=cfg.lowercase)
        sentences = [encode(line, wp_vocab) for line in lines]
        size = wp_vocab.size
    rng = make_prng(cfg.seed)
    lm = NeuralLM.initialize(size, hidden=cfg.nnlm_hidden, num_layers=cfg.nnlm_layers, embed_dim=cfg.nnlm_embed, rng=rng)
    train_nnlm(lm, sentences, epochs=cfg.nnlm_epochs, lr=cfg.nnlm_lr, clip=cfg.nnlm_clip, rng=rng)
    lm.save(args.out, dtype=cfg.checkpoint_dtype)
    return EXIT_OK


def cmd_decode(args, cfg: LASConfig) -> int:
    from core.decoder.beam_search import BeamConfig
    from core.decoder.corpus import decode_corpus
    from core.frontend import FbankOptions
    from core.lm.nnlm import NeuralLM
    from core.manifest import read_manifest
    from core.model.las import LASModel
    from core.wordpiece import WordPieceVocab

    vocab = WordPieceVocab.load(args.vocab, lowercase=cfg.lowercase)
    model = LASModel.load(args.model, attention_history=cfg.attention_history)
    if model.vocab_size != vocab.size:
        raise InvalidArgumentError(f"model vocab {model.vocab_size} does not match word-piece vocab {vocab.size}")
    fusion_lm = NeuralLM.load(args.lm) if args.lm else None
    if fusion_lm is not None and fusion_lm.vocab_size != vocab.size:
        raise InvalidArgumentError(f"fusion LM vocab {fusion_lm.vocab_size} does not match word-piece vocab {vocab.size}")
    updates = {k: v for k, v in (("beam", args.beam), ("nbest", args.nbest), ("lm_weight", args.lm_weight)) if v is not None}
    try:
        beam_cfg = BeamConfig(**{**BeamConfig.from_config(cfg).model_dump(), **updates})
    except ValidationError as e:
        raise InvalidArgumentError(f"bad beam settings: {e.errors()[0]['msg']}") from e
    decode_corpus(model, read_manifest(args.manifest), vocab, beam_cfg, args.out,
                  fusion_lm=fusion_lm, fbank=FbankOptions.from_config(cfg), jobs=args.jobs)
    return EXIT_OK


def cmd_rescore(args, cfg: LASConfig) -> int:
    from core.decoder.rescoring import read_nbest, rescore_nbest, write_nbest

    weight = args.weight if args.weight is not None else cfg.rescore_weight
    if args.lm_type == "ngram":
        from core.lm.ngram import load_arpa

        lm = load_arpa(args.lm, unk_penalty=cfg.unk_penalty)
        level = "word"
    else:
        from core.lm.nnlm import NeuralLM, WordLevelLM
        from core.wordpiece import WordVocab

        lm = NeuralLM.load(args.lm)
        level = args.level
        if level == "word":
            lm = WordLevelLM(lm, WordVocab.load(args.words or args.lm + ".words"))
    grouped = read_nbest(args.nbest)
    entries = []
    for utt_id, nbest in grouped.items():
        entries.extend(rescore_nbest(nbest, lm, weight, level=level))
    write_nbest(args.out, entries)
    logger.info(f"Rescored {len(grouped)} utterances with weight {weight}")
    return EXIT_OK


def cmd_wer(args, cfg: LASConfig) -> int:
    from core.training.metrics import corpus_errors, wer

    refs = [line.split() for line in _read_lines(args.ref)]
    hyps = [line.split() for line in _read_lines(args.hyp)]
    value = wer(refs, hyps)
    errors, words = corpus_errors(refs, hyps)
    print(f"WER {value:.2f}%")
    logger.info(f"{errors} errors over {words} reference words")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value experiment config file")
    common.add_argument("--jobs", type=int, default=config.LAS_JOBS, help="parallel utterance workers")
    common.add_argument("--seed", type=int, help="overrides the config seed and LAS_SEED")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="las-asr", description="Listen, attend and spell speech recognizer")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    p = sub.add_parser("features", parents=[common], help="extract log-mel filter-bank features")
    p.add_argument("input", nargs="?", help="input WAV (single-file mode)")
    p.add_argument("output", nargs="?", help="output FBNK file (single-file mode)")
    p.add_argument("--manifest", help="input manifest (JSON Lines)")
    p.add_argument("--out-dir", help="feature directory (manifest mode)")
    p.add_argument("--out-manifest", help="manifest of the written features (manifest mode)")
    p.set_defaults(handler=cmd_features)

    p = sub.add_parser("augment", parents=[common], help="speed-perturb audio")
    p.add_argument("input", nargs="?", help="input WAV (single-file mode)")
    p.add_argument("output", nargs="?", help="output WAV (single-file mode)")
    p.add_argument("--factor", type=float, help="speed factor (default: config speed_factors)")
    p.add_argument("--manifest", help="input manifest (JSON Lines)")
    p.add_argument("--out-dir", help="audio directory (manifest mode)")
    p.add_argument("--out-manifest", help="manifest of the perturbed copies (manifest mode)")
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("bpe-learn", parents=[common], help="learn word-piece merges")
    p.add_argument("--corpus", required=True, help="text corpus, one sentence per line")
    p.add_argument("--size", type=int, help="target vocabulary size (default: config wp_size)")
    p.add_argument("--out", required=True, help="vocabulary file to write")
    p.set_defaults(handler=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", parents=[common], help="segment text into word pieces")
    p.add_argument("--vocab", required=True, help="word-piece vocabulary")
    p.add_argument("--input", required=True, help="text, one sentence per line")
    p.add_argument("--output", required=True, help="segmented text")
    p.add_argument("--ids", action="store_true", help="write ids instead of pieces")
    p.set_defaults(handler=cmd_bpe_apply)

    p = sub.add_parser("train", parents=[common], help="CE training, then MWER if mwer_epochs > 0")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--val", help="validation manifest (default: training set)")
    p.add_argument("--augmented", help="speed-perturbed manifest, used by the MWER stage only")
    p.add_argument("--vocab", required=True, help="word-piece vocabulary")
    p.add_argument("--out-dir", required=True, help="checkpoint and log directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("mwer-train", parents=[common], help="MWER fine-tuning from a CE checkpoint")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--augmented", help="speed-perturbed manifest")
    p.add_argument("--vocab", required=True, help="word-piece vocabulary")
    p.add_argument("--init", required=True, help="converged CE checkpoint")
    p.add_argument("--out-dir", required=True, help="checkpoint and log directory")
    p.set_defaults(handler=cmd_mwer_train)

    p = sub.add_parser("ngram-build", parents=[common], help="train a word n-gram LM and write ARPA")
    p.add_argument("--corpus", required=True, help="text corpus, one sentence per line")
    p.add_argument("--order", type=int, help="n-gram order (default: config ngram_order)")
    p.add_argument("--out", required=True, help="ARPA file to write")
    p.set_defaults(handler=cmd_ngram_build)

    p = sub.add_parser("nnlm-train", parents=[common], help="train an LSTM LM")
    p.add_argument("--corpus", required=True, help="text corpus, one sentence per line")
    p.add_argument("--level", choices=("word", "wordpiece"), default="wordpiece", help="LM units")
    p.add_argument("--vocab", help="word-piece vocabulary (wordpiece level)")
    p.add_argument("--out", required=True, help="LASF checkpoint to write; word level also writes <out>.words")
    p.set_defaults(handler=cmd_nnlm_train)

    p = sub.add_parser("decode", parents=[common], help="beam-search a manifest into an N-best file")
    p.add_argument("--model", required=True, help="LAS checkpoint")
    p.add_argument("--vocab", required=True, help="word-piece vocabulary")
    p.add_argument("--manifest", required=True, help="manifest to decode")
    p.add_argument("--out", required=True, help="N-best JSON Lines; the WER summary goes to <out>.wer.json")
    p.add_argument("--lm", help="word-piece LSTM LM for shallow fusion")
    p.add_argument("--beam", type=int, help="beam width (default: config beam)")
    p.add_argument("--nbest", type=int, help="N-best size (default: config nbest)")
    p.add_argument("--lm-weight", type=float, help="fusion weight (default: config lm_weight)")
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser("rescore", parents=[common], help="rescore an N-best file with an external LM")
    p.add_argument("--nbest", required=True, help="N-best JSON Lines")
    p.add_argument("--lm", required=True, help="ARPA file or LSTM LM checkpoint")
    p.add_argument("--lm-type", choices=("ngram", "nnlm"), default="ngram", help="kind of LM")
    p.add_argument("--level", choices=("word", "wordpiece"), default="wordpiece", help="LSTM LM units")
    p.add_argument("--words", help="word list of a word-level LSTM LM (default: <lm>.words)")
    p.add_argument("--weight", type=float, help="LM weight (default: config rescore_weight)")
    p.add_argument("--out", required=True, help="rescored N-best JSON Lines")
    p.set_defaults(handler=cmd_rescore)

    p = sub.add_parser("wer", parents=[common], help="score hypotheses against references")
    p.add_argument("--ref", required=True, help="reference transcripts, one per line")
    p.add_argument("--hyp", required=True, help="hypotheses, one per line")
    p.set_defaults(handler=cmd_wer)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse `argv`, dispatch, and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.verbose:
        set_level(logging.DEBUG)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        from core.numerics.tensor import set_default_dtype

        set_default_dtype(cfg.dtype)
        return args.handler(args, cfg)
    except (LASError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
