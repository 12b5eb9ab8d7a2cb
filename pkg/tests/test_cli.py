import numpy as np
import pytest

from app import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from core.decoder.rescoring import read_nbest
from core.frontend import FeatureSequence, Waveform, read_audio, read_features, write_audio, write_features
from core.lm.ngram import load_arpa
from core.lm.nnlm import NeuralLM
from core.manifest import read_manifest
from core.wordpiece import SPECIALS, WordPieceVocab, decode
from utils.config import load_config
from utils.errors import ConfigError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def _tone(n: int = 16000) -> Waveform:
    t = np.arange(n) / 16000
    return Waveform(samples=0.3 * np.sin(2 * np.pi * 220.0 * t), sample_rate=16000)


def test_wer_prints_percentage(tmp_path, capsys):
    ref = _write(tmp_path / "ref.txt", "a b c d\n")
    hyp = _write(tmp_path / "hyp.txt", "a b c x\n")
    assert run(["wer", "--ref", ref, "--hyp", ref]) == EXIT_OK
    assert "WER 0.00%" in capsys.readouterr().out.splitlines()
    assert run(["wer", "--ref", ref, "--hyp", hyp]) == EXIT_OK
    assert "WER 25.00%" in capsys.readouterr().out.splitlines()


def test_wer_line_count_mismatch_is_a_runtime_error(tmp_path):
    ref = _write(tmp_path / "ref.txt", "a b\nc\n")
    hyp = _write(tmp_path / "hyp.txt", "a b\n")
    assert run(["wer", "--ref", ref, "--hyp", hyp]) == EXIT_RUNTIME


def test_usage_errors_and_help():
    assert run(["frobnicate"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE
    assert run(["wer", "--ref", "only.txt"]) == EXIT_USAGE
    assert run(["--help"]) == EXIT_OK
    assert run(["decode", "--help"]) == EXIT_OK


def test_missing_input_file_is_a_runtime_error(tmp_path):
    assert run(["wer", "--ref", str(tmp_path / "none.txt"), "--hyp", str(tmp_path / "none.txt")]) == EXIT_RUNTIME


def test_augment_single_file(tmp_path):
    source = str(tmp_path / "in.wav")
    write_audio(source, _tone())
    target = str(tmp_path / "out.wav")
    assert run(["augment", source, target, "--factor", "1.1"]) == EXIT_OK
    assert len(read_audio(target)) == int(np.floor(16000 / 1.1 + 0.5))


def test_augment_manifest_writes_one_copy_per_factor(tmp_path):
    write_audio(str(tmp_path / "a.wav"), _tone(8000))
    manifest = _write(tmp_path / "m.jsonl", '{"id": "a", "audio": "a.wav", "text": "hi"}\n')
    out_manifest = str(tmp_path / "aug.jsonl")
    assert run(["augment", "--manifest", manifest, "--out-dir", str(tmp_path / "aug"), "--out-manifest", out_manifest]) == EXIT_OK
    lines = (tmp_path / "aug.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert '"a-sp0.9"' in lines[0] and '"a-sp1.1"' in lines[1]


def test_features_single_file(tmp_path):
    source = str(tmp_path / "in.wav")
    write_audio(source, _tone())
    assert run(["features", source, str(tmp_path / "in.fbnk")]) == EXIT_OK
    feats = read_features(str(tmp_path / "in.fbnk"))
    assert feats.dim == 40 and feats.num_frames == 98


def test_bpe_learn_then_apply(tmp_path):
    corpus = _write(tmp_path / "corpus.txt", "the cat sat\nthe cat ran\nthe dog sat\n")
    vocab_path = str(tmp_path / "wp.vocab")
    assert run(["bpe-learn", "--corpus", corpus, "--size", "30", "--out", vocab_path]) == EXIT_OK
    out = str(tmp_path / "ids.txt")
    assert run(["bpe-apply", "--vocab", vocab_path, "--input", corpus, "--output", out, "--ids"]) == EXIT_OK
    vocab = WordPieceVocab.load(vocab_path)
    lines = (tmp_path / "ids.txt").read_text(encoding="utf-8").splitlines()
    assert [decode([int(i) for i in line.split()], vocab) for line in lines] == ["the cat sat", "the cat ran", "the dog sat"]


def test_ngram_build_writes_loadable_arpa(tmp_path):
    corpus = _write(tmp_path / "corpus.txt", "a b\nb a\na a b\n")
    out = str(tmp_path / "lm.arpa")
    assert run(["ngram-build", "--corpus", corpus, "--order", "2", "--out", out]) == EXIT_OK
    assert load_arpa(out).order == 2


def _decode_setup(tmp_path, tiny_model):
    WordPieceVocab(list(SPECIALS) + ["▁a", "▁b"], []).save(str(tmp_path / "wp.vocab"))
    tiny_model.save(str(tmp_path / "model.lasf"))
    write_features(str(tmp_path / "u1.fbnk"), FeatureSequence(frames=np.random.default_rng(0).normal(size=(9, 3)), frame_shift=0.01))
    _write(tmp_path / "test.jsonl", '{"id": "u1", "feats": "u1.fbnk", "text": "a b"}\n')
    return ["--model", str(tmp_path / "model.lasf"), "--vocab", str(tmp_path / "wp.vocab"), "--manifest", str(tmp_path / "test.jsonl")]


def test_decode_then_rescore(tmp_path, tiny_model):
    common = _decode_setup(tmp_path, tiny_model)
    nbest = str(tmp_path / "nbest.jsonl")
    assert run(["decode", *common, "--out", nbest, "--beam", "3", "--nbest", "2"]) == EXIT_OK
    assert (tmp_path / "nbest.jsonl.wer.json").exists()
    corpus = _write(tmp_path / "lm.txt", "a b\nb a\n")
    assert run(["ngram-build", "--corpus", corpus, "--order", "2", "--out", str(tmp_path / "lm.arpa")]) == EXIT_OK
    rescored = str(tmp_path / "rescored.jsonl")
    assert run(["rescore", "--nbest", nbest, "--lm", str(tmp_path / "lm.arpa"), "--weight", "0.5", "--out", rescored]) == EXIT_OK
    entries = read_nbest(rescored)["u1"]
    assert [e.rank for e in entries] == list(range(1, len(entries) + 1))
    assert all(e.rescore_lm_logp is not None for e in entries)


def test_decode_rejects_nbest_above_beam(tmp_path, tiny_model):
    common = _decode_setup(tmp_path, tiny_model)
    assert run(["decode", *common, "--out", str(tmp_path / "n.jsonl"), "--beam", "2", "--nbest", "5"]) == EXIT_RUNTIME


def test_unknown_config_key_fails(tmp_path):
    cfg = _write(tmp_path / "bad.cfg", "beam = 4\nnonsense = 1\n")
    ref = _write(tmp_path / "ref.txt", "a\n")
    assert run(["wer", "--ref", ref, "--hyp", ref, "--config", cfg]) == EXIT_RUNTIME
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert (info.value.key, info.value.line_number) == ("nonsense", 2)


def test_out_of_range_config_value_names_the_key(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path / "c.cfg", "# smoothing\nlabel_smoothing = 2.0\n"))
    assert info.value.key == "label_smoothing"
    assert info.value.line_number == 2


def test_malformed_config_line(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path / "c.cfg", "just words\n"))
    assert info.value.line_number == 1


def test_empty_config_gives_defaults(tmp_path):
    assert load_config(_write(tmp_path / "empty.cfg", "\n# nothing\n")) == load_config(None)


def test_config_values_are_typed(tmp_path):
    cfg = load_config(_write(tmp_path / "c.cfg", "beam = 4  # narrower\nnbest = 2\noptimizer = adam\napply_cmvn = true\n"))
    assert (cfg.beam, cfg.nbest, cfg.optimizer, cfg.apply_cmvn) == (4, 2, "adam", True)


def test_nnlm_train_word_level_writes_word_list(tmp_path):
    cfg = _write(tmp_path / "lm.cfg", "nnlm_hidden = 4\nnnlm_layers = 1\nnnlm_epochs = 1\nword_min_count = 2\n")
    corpus = _write(tmp_path / "corpus.txt", "a b\nb a\nc\n")
    out = str(tmp_path / "words.lasf")
    assert run(["nnlm-train", "--corpus", corpus, "--level", "word", "--out", out, "--config", cfg]) == EXIT_OK
    assert (tmp_path / "words.lasf.words").read_text(encoding="utf-8").split() == ["a", "b"]


def test_features_manifest_mode(tmp_path):
    write_audio(str(tmp_path / "a.wav"), _tone(8000))
    write_audio(str(tmp_path / "b.wav"), _tone(4000))
    manifest = _write(tmp_path / "m.jsonl", '{"id": "a", "audio": "a.wav", "text": "x"}\n{"id": "b", "audio": "b.wav", "text": "y"}\n')
    out_manifest = str(tmp_path / "feats.jsonl")
    assert run(["features", "--manifest", manifest, "--out-dir", str(tmp_path / "feats"), "--out-manifest", out_manifest]) == EXIT_OK
    records = read_manifest(out_manifest)
    assert [r.id for r in records] == ["a", "b"]
    shapes = [(read_features(r.feats).num_frames, read_features(r.feats).dim) for r in records]
    assert shapes == [(48, 40), (23, 40)]


TINY_MODEL_CFG = (
    "feat_dim = 3\nlistener_layers = 1\nlistener_hidden = 2\nspeller_layers = 1\nspeller_hidden = 3\n"
    "embed_dim = 3\nattention_dim = 3\nconv_filters = 2\nconv_width = 3\nbatch_size = 2\n"
    "warmup_steps = 2\nbeam = 2\nnbest = 2\nmwer_n = 2\ncheckpoint_dtype = float64\n"
)


def _training_setup(tmp_path):
    WordPieceVocab(list(SPECIALS) + ["▁a", "▁b"], []).save(str(tmp_path / "wp.vocab"))
    rng = np.random.default_rng(0)
    lines = []
    for uid, text in [("u1", "a b"), ("u2", "b"), ("u3", "a")]:
        write_features(str(tmp_path / f"{uid}.fbnk"), FeatureSequence(frames=rng.normal(size=(9, 3)), frame_shift=0.01))
        lines.append(f'{{"id": "{uid}", "feats": "{uid}.fbnk", "text": "{text}"}}\n')
    _write(tmp_path / "train.jsonl", "".join(lines))
    return ["--train", str(tmp_path / "train.jsonl"), "--vocab", str(tmp_path / "wp.vocab")]


def test_train_then_repeated_mwer_train_is_byte_identical(tmp_path):
    common = _training_setup(tmp_path)
    ce_cfg = _write(tmp_path / "ce.cfg", TINY_MODEL_CFG + "max_epochs = 2\n")
    assert run(["train", *common, "--out-dir", str(tmp_path / "ce"), "--config", ce_cfg]) == EXIT_OK
    assert (tmp_path / "ce" / "final.lasf").exists()
    assert len((tmp_path / "ce" / "train_log.jsonl").read_text(encoding="utf-8").splitlines()) == 2

    mwer_cfg = _write(tmp_path / "mwer.cfg", TINY_MODEL_CFG + "mwer_epochs = 1\n")
    argv = ["mwer-train", *common, "--init", str(tmp_path / "ce" / "final.lasf"), "--out-dir", str(tmp_path / "mwer"), "--config", mwer_cfg]
    outputs = []
    for _ in range(2):
        assert run(argv) == EXIT_OK
        outputs.append(((tmp_path / "mwer" / "train_log.jsonl").read_bytes(), (tmp_path / "mwer" / "final.lasf").read_bytes()))
    assert outputs[0] == outputs[1]
    assert len(outputs[0][0].decode("utf-8").splitlines()) == 2


def test_decode_with_fusion_lm(tmp_path, tiny_model):
    common = _decode_setup(tmp_path, tiny_model)
    lm_cfg = _write(tmp_path / "lm.cfg", "nnlm_hidden = 4\nnnlm_layers = 1\nnnlm_epochs = 1\n")
    corpus = _write(tmp_path / "lm.txt", "a b\nb a\n")
    lm_path = str(tmp_path / "lm.lasf")
    assert run(["nnlm-train", "--corpus", corpus, "--vocab", str(tmp_path / "wp.vocab"), "--out", lm_path, "--config", lm_cfg]) == EXIT_OK
    nbest = str(tmp_path / "fused.jsonl")
    assert run(["decode", *common, "--out", nbest, "--beam", "3", "--nbest", "2", "--lm", lm_path, "--lm-weight", "0.3"]) == EXIT_OK
    entries = read_nbest(nbest)["u1"]
    assert all(e.lm_logp < 0.0 for e in entries)
    assert all(e.score == pytest.approx((e.las_logp + 0.3 * e.lm_logp) / ((5 + len(e.tokens)) / 6) ** 0.6) for e in entries)


def test_decode_rejects_fusion_lm_of_another_vocabulary(tmp_path, tiny_model):
    common = _decode_setup(tmp_path, tiny_model)
    lm_path = str(tmp_path / "lm.lasf")
    NeuralLM.initialize(vocab_size=9, hidden=4, num_layers=1, seed=1).save(lm_path)
    assert run(["decode", *common, "--out", str(tmp_path / "n.jsonl"), "--lm", lm_path]) == EXIT_RUNTIME
