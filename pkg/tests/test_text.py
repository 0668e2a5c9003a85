import numpy as np
import pytest

from unwarp.metrics.text import EditCounts, cer, edit_distance


def _random_strings(rng: np.random.Generator, count: int,
                    max_length: int) -> list[str]:
    return [
        "".join(rng.choice(list("abc"), size=rng.integers(0, max_length + 1)))
        for _ in range(count)
    ]


def _oracle(reference: str, hypothesis: str) -> EditCounts:
    '''Textbook DP with a substitution-first, then deletion, backtrace.'''
    rows, cols = len(hypothesis) + 1, len(reference) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            if i == 0 or j == 0:
                table[i][j] = i + j
                continue
            table[i][j] = min(
                table[i - 1][j - 1] +
                (hypothesis[i - 1] != reference[j - 1]),
                table[i][j - 1] + 1,
                table[i - 1][j] + 1,
            )

    d = ins = s = 0
    i, j = rows - 1, cols - 1
    while i or j:
        if i and j:
            step = int(hypothesis[i - 1] != reference[j - 1])
            if table[i][j] == table[i - 1][j - 1] + step:
                s += step
                i, j = i - 1, j - 1
                continue
        if j and table[i][j] == table[i][j - 1] + 1:
            d += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return EditCounts(table[-1][-1], d, ins, s)


def test_classic_example():
    counts = edit_distance("sitting", "kitten")
    assert counts == EditCounts(total=3,
                                deletions=1,
                                insertions=0,
                                substitutions=2)
    assert cer("sitting", "kitten") == pytest.approx(3 / 7)


def test_extra_recognized_characters_are_insertions():
    assert edit_distance("", "abc") == EditCounts(3, 0, 3, 0)
    assert cer("ab", "abcd") == 1.0


def test_missed_characters_are_deletions():
    assert edit_distance("abc", "") == EditCounts(3, 3, 0, 0)
    assert cer("ab", "") == 1.0


def test_ties_prefer_substitutions():
    assert edit_distance("ab", "ba") == EditCounts(2, 0, 0, 2)
    assert edit_distance("cca", "bab") == EditCounts(3, 0, 0, 3)


def test_exact_recognition():
    assert edit_distance("Straße", "Straße") == EditCounts(0, 0, 0, 0)
    assert cer("Straße", "Straße") == 0.0


def test_empty_reference():
    with pytest.raises(ValueError):
        cer("", "abc")


def test_counts_match_the_dp_oracle(rng):
    references = _random_strings(rng, 1000, 6)
    hypotheses = _random_strings(rng, 1000, 6)
    for reference, hypothesis in zip(references, hypotheses):
        counts = edit_distance(reference, hypothesis)
        assert counts == _oracle(reference, hypothesis), (reference,
                                                           hypothesis)
        assert counts.deletions - counts.insertions == \
            len(reference) - len(hypothesis)


def test_metric_axioms(rng):
    a_side, b_side, c_side = (_random_strings(rng, 1000, 5) for _ in range(3))
    for a, b, c in zip(a_side, b_side, c_side):
        assert (edit_distance(a, b).total == 0) == (a == b)
        assert edit_distance(a, b).total == edit_distance(b, a).total
        assert edit_distance(a, c).total <= \
            edit_distance(a, b).total + edit_distance(b, c).total


def test_cer_on_random_pairs(rng):
    references = _random_strings(rng, 100, 8)
    hypotheses = _random_strings(rng, 100, 8)
    for reference, hypothesis in zip(references, hypotheses):
        if not reference:
            continue
        expected = _oracle(reference, hypothesis).total / len(reference)
        assert cer(reference, hypothesis) == pytest.approx(expected)
