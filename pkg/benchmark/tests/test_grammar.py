import numpy as np

from benchmark.grammar import (
    CONTINUATION, TRIGGER_MARKER, TemplateGrammar,
)
from machine_learning.Vocabulary import normalize_words


def test_expand_every_filler():
    grammar = TemplateGrammar()
    assert len(grammar.expand("Call {person}")) == 6
    assert grammar.expand("Tell me a joke") == ["Tell me a joke"]
    assert len(grammar.expand("Play {artist} in the {room}")) == 16


def test_only_non_directed_sentences_continue():
    grammar = TemplateGrammar(continuation_probability = 0.9)
    stream = np.random.default_rng(0)
    continued = [
        normalize_words(grammar.sample_non_directed(stream))
        for _ in range(50)
    ]
    assert any(CONTINUATION in words for words in continued)
    assert all(
        words.count(CONTINUATION) <= grammar.max_continuations
        for words in continued
    )
    for _ in range(50):
        assert CONTINUATION not in normalize_words(
            grammar.sample_directed(stream)
        )
        assert CONTINUATION not in normalize_words(
            grammar.sample_ambiguous(stream)
        )


def test_support_truncates_to_max_tokens():
    grammar = TemplateGrammar(directed = ["Set an alarm for {time}"])
    assert ("set", "an") in grammar.support(grammar.directed, max_tokens = 2)
    assert len(grammar.support(grammar.directed, max_tokens = 2)) == 1


def test_words_cover_every_sample():
    grammar = TemplateGrammar()
    words = grammar.words()
    assert TRIGGER_MARKER in words
    stream = np.random.default_rng(1)
    for _ in range(100):
        for sample in [
            grammar.sample_directed, grammar.sample_non_directed,
            grammar.sample_ambiguous,
        ]:
            assert set(normalize_words(sample(stream))) <= words
