'''
Character-level edit distance and character error rate for OCR output.

Edits are counted while turning the hypothesis (recognized text) into the
reference (ground truth): a reference character the recognizer missed is a
deletion, an extra recognized character is an insertion. The split into
kinds comes from walking the DP table back from the end, taking a
substitution (or match) whenever it is optimal, else a deletion.
'''
import typing as t

import Levenshtein
import numpy as np


class EditCounts(t.NamedTuple):
    total: int
    deletions: int
    insertions: int
    substitutions: int


def edit_distance(reference: str, hypothesis: str) -> EditCounts:
    total = Levenshtein.distance(hypothesis, reference)
    if total == 0:
        return EditCounts(0, 0, 0, 0)

    table = _distance_table(hypothesis, reference)
    deletions = insertions = substitutions = 0
    i, j = len(hypothesis), len(reference)
    while i > 0 or j > 0:
        cost = table[i, j]
        if i > 0 and j > 0:
            mismatch = int(hypothesis[i - 1] != reference[j - 1])
            if cost == table[i - 1, j - 1] + mismatch:
                substitutions += mismatch
                i, j = i - 1, j - 1
                continue
        if j > 0 and cost == table[i, j - 1] + 1:
            deletions += 1
            j -= 1
        else:
            insertions += 1
            i -= 1

    assert deletions + insertions + substitutions == total == table[-1, -1]
    return EditCounts(total, deletions, insertions, substitutions)


def cer(reference: str, hypothesis: str) -> float:
    '''(d + i + s) / len(reference); can exceed 1 for long hypotheses.'''
    if not reference:
        raise ValueError("CER is undefined for an empty reference")
    return Levenshtein.distance(hypothesis, reference) / len(reference)


#
# Private helpers.
#


def _distance_table(hypothesis: str, reference: str) -> np.ndarray:
    '''
    Full unit-cost DP table; entry (i, j) is the distance between the first
    i hypothesis and the first j reference characters.
    '''
    ref_codes = np.array([ord(c) for c in reference], dtype=np.int64)
    columns = np.arange(len(reference) + 1, dtype=np.int64)
    table = np.empty((len(hypothesis) + 1, len(reference) + 1), dtype=np.int64)
    table[0] = columns
    for i, char in enumerate(hypothesis, start=1):
        previous = table[i - 1]
        # Best of substitution/match and dropping the hypothesis character.
        best = np.empty_like(previous)
        best[0] = previous[0] + 1
        best[1:] = np.minimum(previous[:-1] + (ref_codes != ord(char)),
                              previous[1:] + 1)
        # Runs of missed reference characters along the row.
        table[i] = np.minimum.accumulate(best - columns) + columns
    return table
