import numpy as np
import pytest

from promptrestore.corpus import (CATEGORIES, CLS, SEP, UNK, InstructionCorpus,
                                  generate_corpus, sample_instruction, tokenize,
                                  words_of)


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(seed=7, per_category=50)


def test_default_corpus_has_150_sentences(corpus):
    assert len(corpus.instructions) == 150
    for c in CATEGORIES:
        assert len(corpus.sentences(c)) == 50


def test_generation_is_deterministic(corpus):
    again = generate_corpus(seed=7, per_category=50)
    assert corpus.to_lines() == again.to_lines()
    assert corpus.vocabulary == again.vocabulary


def test_different_seed_changes_selection():
    a = generate_corpus(seed=1, per_category=50)
    b = generate_corpus(seed=2, per_category=50)
    assert a.to_lines() != b.to_lines()


def test_minimum_corpus_counts():
    small = generate_corpus(seed=3, per_category=10)
    assert len(small.instructions) == 30
    for c in CATEGORIES:
        assert len(small.sentences(c, "heldout")) >= 2
        assert len(small.sentences(c, "train")) + len(small.sentences(c, "heldout")) == 10


def test_per_category_below_minimum_rejected():
    with pytest.raises(ValueError):
        generate_corpus(seed=0, per_category=9)


def test_splits_disjoint_and_exhaustive(corpus):
    for c in CATEGORIES:
        train = {s.text for s in corpus.sentences(c, "train")}
        held = {s.text for s in corpus.sentences(c, "heldout")}
        assert not train & held
        assert len(train | held) == 50


def test_sentences_are_unique(corpus):
    texts = [s.text for s in corpus.instructions]
    assert len(set(texts)) == len(texts)


def test_sample_respects_category_and_split(corpus):
    rng = np.random.default_rng(0)
    for _ in range(20):
        s = sample_instruction(corpus, "rain", "train", rng)
        assert s.category == "rain" and s.split == "train"


def test_sample_single_instruction_cell():
    tiny = InstructionCorpus.from_lines(["rain\ttrain\tremove the rain"])
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert sample_instruction(tiny, "rain", "train", rng).text == "remove the rain"


def test_sample_empty_cell_raises():
    tiny = InstructionCorpus.from_lines(["rain\ttrain\tremove the rain"])
    with pytest.raises(LookupError):
        sample_instruction(tiny, "haze", "train", np.random.default_rng(0))


def test_sampling_is_roughly_uniform(corpus):
    # 40-sentence train cell, 10^4 draws: each within +-25% of 250
    cell = corpus.sentences("rain", "train")
    assert len(cell) == 40
    rng = np.random.default_rng(42)
    counts = {}
    for _ in range(10_000):
        s = sample_instruction(corpus, "rain", "train", rng)
        counts[s.text] = counts.get(s.text, 0) + 1
    assert len(counts) == 40
    for n in counts.values():
        assert 250 * 0.75 <= n <= 250 * 1.25


def test_tokenize_structure(corpus):
    ts = tokenize(corpus, "remove the rain")
    assert ts.length == 5
    assert ts.ids[0] == corpus.token_id(CLS)
    assert ts.ids[-1] == corpus.token_id(SEP)
    assert ts.attention_mask == [1] * 5


def test_tokenize_unknown_word_maps_to_unk(corpus):
    ts = tokenize(corpus, "remove the zebra")
    assert corpus.token_id(UNK) in ts.ids


def test_tokenize_deterministic(corpus):
    a = tokenize(corpus, "please clear the fog in this photo")
    b = tokenize(corpus, "please clear the fog in this photo")
    assert a.ids == b.ids


def test_tokenize_rejects_empty(corpus):
    with pytest.raises(ValueError):
        tokenize(corpus, "")


def test_tokenize_length_invariant(corpus):
    for s in corpus.instructions[::17]:
        assert tokenize(corpus, s.text).length == len(words_of(s.text)) + 2


def test_corpus_texts_tokenize_without_unk(corpus):
    unk = corpus.token_id(UNK)
    for s in corpus.instructions:
        assert unk not in tokenize(corpus, s.text).ids


def test_save_load_roundtrip(tmp_path, corpus):
    path = tmp_path / "corpus.tsv"
    corpus.save(path)
    loaded = InstructionCorpus.load(path)
    assert loaded.to_lines() == corpus.to_lines()
    assert loaded.vocabulary == corpus.vocabulary
    first = path.read_text(encoding="utf-8").splitlines()[0]
    assert len(first.split("\t")) == 3
