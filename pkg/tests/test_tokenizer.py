from hypothesis import given
from hypothesis import strategies as st

from vulnreach.tokenizer import DEFAULT_TOKENIZER, LexicalTokenizer


def test_statement_token_count():
    assert DEFAULT_TOKENIZER.tokenize("int x = 0;") == ["int", "x", "=", "0", ";"]
    assert DEFAULT_TOKENIZER.count("int x = 0;") == 5


def test_empty_and_whitespace():
    assert DEFAULT_TOKENIZER.count("") == 0
    assert DEFAULT_TOKENIZER.count("   \n\t ") == 0


def test_punctuation_counts_per_char():
    assert DEFAULT_TOKENIZER.count("a.b(c);") == 7  # a . b ( c ) ;


def test_identifiers_keep_underscores_and_digits():
    assert DEFAULT_TOKENIZER.tokenize("foo_bar2 += 1_000") == ["foo_bar2", "+", "=", "1_000"]


@given(st.text(), st.text())
def test_concatenation_over_whitespace_is_additive(a: str, b: str):
    tok = LexicalTokenizer()
    assert tok.count(a + " " + b) == tok.count(a) + tok.count(b)


@given(st.text())
def test_count_matches_tokenize_length(text: str):
    tok = LexicalTokenizer()
    assert tok.count(text) == len(tok.tokenize(text))
