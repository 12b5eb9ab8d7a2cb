import pytest
from hypothesis import given, strategies as st

from core.numerics.prng import make_prng
from core.wordpiece import (
    EOS_ID,
    MARKER,
    SPECIALS,
    UNK_ID,
    WordPieceVocab,
    WordVocab,
    decode,
    encode,
    encode_pieces,
    learn_bpe,
    normalize_text,
)
from utils.errors import InvalidArgumentError


def test_first_merge_matches_pair_counts():
    # (▁a,a), (a,a) and (a,b) all occur twice; "a" sorts before "▁a"
    vocab = learn_bpe(["aaab aaab"], target_size=100)
    assert vocab.merges[0] == ("a", "a")


def test_single_pair_corpus_merges_marked_pair():
    vocab = learn_bpe(["ab ab ab"], target_size=100)
    assert vocab.merges == [(MARKER + "a", "b")]
    assert encode_pieces("ab", vocab) == [MARKER + "ab"]


def test_most_frequent_pair_wins_over_lexicographic_order():
    vocab = learn_bpe(["ab ab zq zq zq"], target_size=100)
    assert vocab.merges[0] == (MARKER + "z", "q")


def test_frequency_ties_break_lexicographically():
    vocab = learn_bpe(["ba ba dc dc"], target_size=100)
    assert vocab.merges[:2] == [(MARKER + "b", "a"), (MARKER + "d", "c")]


def test_learning_is_deterministic():
    corpus = ["the cat sat", "the cat ran", "a dog sat"] * 3
    first, second = learn_bpe(corpus, 40), learn_bpe(list(corpus), 40)
    assert first.pieces == second.pieces and first.merges == second.merges


def test_specials_come_first():
    vocab = learn_bpe(["hello world"], target_size=30)
    assert tuple(vocab.pieces[:4]) == SPECIALS


def test_merges_stop_when_no_pair_repeats():
    vocab = learn_bpe(["abc"], target_size=100)
    assert vocab.merges == []
    assert vocab.size == len(SPECIALS) + 6


def test_target_below_base_inventory_raises():
    with pytest.raises(InvalidArgumentError):
        learn_bpe(["abcdef"], target_size=5)


def test_empty_corpus_raises():
    with pytest.raises(InvalidArgumentError):
        learn_bpe(["", "   "], target_size=50)


def _random_corpus(lines: int, seed: int = 0):
    rng = make_prng(seed)
    letters = "abcdefghij"
    out = []
    for _ in range(lines):
        words = ["".join(letters[int(i)] for i in rng.integers(0, len(letters), size=int(rng.integers(1, 7))))
                 for _ in range(int(rng.integers(1, 9)))]
        out.append(" ".join(words))
    return out


def test_round_trip_on_thousand_line_corpus():
    corpus = _random_corpus(1000)
    vocab = learn_bpe(corpus, target_size=120)
    for line in corpus:
        ids = encode(line, vocab)
        assert UNK_ID not in ids
        assert decode(ids, vocab) == normalize_text(line)


def test_decode_drops_specials():
    vocab = learn_bpe(["ab ab"], target_size=30)
    assert decode(encode("ab", vocab) + [EOS_ID], vocab) == "ab"


def test_unseen_characters_become_unk():
    vocab = learn_bpe(["ab ab"], target_size=30)
    assert UNK_ID in encode("abz", vocab)


def test_out_of_range_id_raises():
    vocab = learn_bpe(["ab ab"], target_size=30)
    with pytest.raises(InvalidArgumentError):
        decode([vocab.size], vocab)


def test_pieces_mark_word_starts():
    vocab = learn_bpe(["low lower lowest"] * 4, target_size=40)
    pieces = encode_pieces("lower", vocab)
    assert pieces[0].startswith(MARKER)
    assert all(not p.startswith(MARKER) for p in pieces[1:])


def test_vocab_file_round_trip(tmp_path):
    vocab = learn_bpe(_random_corpus(50, seed=3), target_size=60)
    path = str(tmp_path / "wp.vocab")
    vocab.save(path)
    loaded = WordPieceVocab.load(path)
    assert loaded.pieces == vocab.pieces and loaded.merges == vocab.merges


@given(st.lists(st.text(alphabet="abcde", min_size=1, max_size=6), min_size=1, max_size=6))
def test_round_trip_property(words):
    vocab = learn_bpe(["abc abd cde", "eab ba dd"] * 3, target_size=40)
    text = " ".join(words)
    assert decode(encode(text, vocab), vocab) == text


def test_word_vocab_maps_rare_words_to_unk(tmp_path):
    corpus = ["common common common common rare"]
    vocab = WordVocab.build(corpus, min_count=4)
    assert vocab.words[len(SPECIALS):] == ["common"]
    assert vocab.ids(["common", "rare"]) == [len(SPECIALS), UNK_ID]
    path = str(tmp_path / "words.txt")
    vocab.save(path)
    assert WordVocab.load(path).words == vocab.words
