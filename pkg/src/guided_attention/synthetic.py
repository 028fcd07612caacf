"""Generator for the adjacent-bigram classification task.

Each example is a fixed-length sequence of filler words plus exactly one
occurrence of each of two trigger words. The label is positive iff the
first trigger is immediately followed by the second; negatives contain both
triggers at non-adjacent offsets (or reversed). Bag-of-words content is
therefore identical across classes and only local order carries the label,
which is what a relative-position attention head can exploit directly.
"""

from __future__ import annotations

import numpy as np

from .corpus import Sentence, Token

LABEL_POSITIVE = "match"
LABEL_NEGATIVE = "nomatch"
TRIGGER_A = "trigA"
TRIGGER_B = "trigB"


def generate_local_pattern_task(
    n_train: int = 2000,
    n_test: int = 500,
    vocab_size: int = 50,
    seq_len: int = 12,
    seed: int = 0,
) -> tuple[list[Sentence], list[Sentence]]:
    """Balanced train/test splits; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:02d}" for i in range(max(vocab_size - 2, 1))]
    train = [_example(rng, fillers, seq_len, f"train-{i + 1}") for i in range(n_train)]
    test = [_example(rng, fillers, seq_len, f"test-{i + 1}") for i in range(n_test)]
    return train, test


def _example(rng: np.random.Generator, fillers: list[str], n: int, sent_id: str) -> Sentence:
    positive = bool(rng.integers(0, 2))
    forms = [fillers[k] for k in rng.integers(0, len(fillers), size=n)]
    if positive:
        i = int(rng.integers(0, n - 1))
        j = i + 1
    else:
        while True:
            i, j = (int(v) for v in rng.integers(0, n, size=2))
            if i != j and j != i + 1:
                break
    forms[i] = TRIGGER_A
    forms[j] = TRIGGER_B
    tokens = [Token(form=f, index=k + 1) for k, f in enumerate(forms)]
    return Sentence(tokens=tokens, label=LABEL_POSITIVE if positive else LABEL_NEGATIVE, sent_id=sent_id)


def write_plain_with_labels(sentences: list[Sentence], text_path, labels_path) -> None:
    """Materialize as plain-text lines plus a sidecar id<TAB>label file.

    Plain-text sentence ids are line ordinals, so the sidecar is keyed by
    ordinal rather than the in-memory sentence id.
    """
    with open(text_path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(" ".join(s.forms) + "\n")
    with open(labels_path, "w", encoding="utf-8") as fh:
        for i, s in enumerate(sentences, start=1):
            fh.write(f"{i}\t{s.label}\n")
