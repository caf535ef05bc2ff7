import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlaser.bpe import EOS, EOW, PAD, RESERVED, STR_TAG, UNK, Vocabulary, VocabularyError, learn_bpe, normalize
from tlaser.synth import SynthSpec, build


def test_reserved_ids():
    assert (PAD, UNK, EOS, STR_TAG) == (0, 1, 2, 3)
    v = learn_bpe(["ab ab"], 10)
    assert v.tokens[:4] == list(RESERVED)


def test_first_merge_on_repeated_word():
    v = learn_bpe(["aa aa aa"], len(RESERVED) + 2 + 1)
    # base symbols are "a" and the word-final "a</w>"
    assert v.base_symbols == ["a", "a" + EOW]
    assert v.merges == [("a", "a" + EOW)]


def test_unique_characters_give_no_merges():
    v = learn_bpe(["a b c d"], 100)
    assert v.merges == []
    assert len(v) == len(RESERVED) + 4


def test_tie_break_is_lexicographic():
    # ("x","y</w>") and ("p","q</w>") both occur twice
    v = learn_bpe(["xy xy pq pq"], len(RESERVED) + 4 + 1)
    assert v.merges == [("p", "q" + EOW)]


def test_size_accounting():
    v = learn_bpe(["the cat sat on the mat", "the hat"], 30)
    assert len(v) == len(RESERVED) + len(v.base_symbols) + len(v.merges)
    assert len(v) <= 30


def test_learn_errors():
    with pytest.raises(VocabularyError):
        learn_bpe([], 100)
    with pytest.raises(VocabularyError):
        learn_bpe(["   "], 100)
    with pytest.raises(VocabularyError):
        learn_bpe(["abcdef"], 6)


def test_encode_examples():
    v = learn_bpe(["aa aa aa b"], len(RESERVED) + 3 + 1)
    assert v.encode("") == []
    assert v.encode("aa") == [v.index["aa" + EOW]]
    assert v.encode("aa b") == [v.index["aa" + EOW], v.index["b" + EOW]]
    assert v.decode(v.encode("aa b")) == "aa b"
    assert v.decode([]) == ""
    assert v.decode([EOS, *v.encode("aa"), EOS, PAD]) == "aa"


def test_unknown_characters_map_to_unk():
    v = learn_bpe(["ab ab"], 20)
    assert UNK in v.encode("az")


def test_decode_range_error():
    v = learn_bpe(["ab"], 20)
    with pytest.raises(IndexError):
        v.decode([len(v)])


def test_normalize():
    assert normalize("  a\t\tb \n c  ") == "a b c"
    assert normalize("x  y") == "x y"


def test_save_load_bitwise(tmp_path):
    v = learn_bpe(["hello world", "hello there world"], 40).with_languages(["en", "de"])
    path = tmp_path / "v.txt"
    v.save(path)
    w = Vocabulary.load(path)
    assert w.tokens == v.tokens and w.merges == v.merges and w.languages == v.languages
    path2 = tmp_path / "w.txt"
    w.save(path2)
    assert path.read_bytes() == path2.read_bytes()
    assert path.read_text().splitlines()[0] == f"BPEV1 {len(v)}"


def test_load_rejects_corruption():
    text = learn_bpe(["hello world"], 30).dumps()
    with pytest.raises(VocabularyError):
        Vocabulary.loads(text.replace("BPEV1", "BPEV2"))
    with pytest.raises(VocabularyError):
        Vocabulary.loads(text.replace("<unk>", "<unknown>"))
    header, rest = text.split("\n", 1)
    with pytest.raises(VocabularyError):
        Vocabulary.loads("BPEV1 999\n" + rest)


def test_language_table():
    v = learn_bpe(["a b"], 10).with_languages(["L1", "L0"])
    assert v.languages == {"L0": 0, "L1": 1}
    with pytest.raises(VocabularyError):
        v.lang_id("L9")


words = st.text(alphabet="abcdxyz", min_size=1, max_size=8)
lines = st.lists(words, min_size=1, max_size=6).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(lines, min_size=1, max_size=8), st.integers(0, 40))
def test_round_trip_and_id_range(corpus, extra):
    v = learn_bpe(corpus, len(RESERVED) + 14 + extra)
    for line in corpus:
        ids = v.encode(line)
        assert all(len(RESERVED) <= i < len(v) for i in ids)
        assert v.decode(ids) == normalize(line)


@settings(max_examples=30, deadline=None)
@given(st.lists(lines, min_size=1, max_size=8), st.integers(0, 40))
def test_learning_is_deterministic(corpus, extra):
    target = len(RESERVED) + 14 + extra
    assert learn_bpe(corpus, target).dumps() == learn_bpe(list(corpus), target).dumps()


def test_synthetic_corpus_round_trip():
    c = build(SynthSpec(sentences_per_split={"train": 300, "dev": 10, "test": 10}))
    tr = c.splits["train"]
    text = [s for lang in tr.languages for s in tr.sentences[lang]]
    v = learn_bpe(text, 600)
    assert all(v.decode(v.encode(s)) == s for s in text)
    assert np.all([UNK not in v.encode(s) for s in text])
