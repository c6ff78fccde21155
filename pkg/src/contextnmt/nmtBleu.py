__doc__ = """
Corpus-level, case-sensitive BLEU on whitespace tokens, computed with
sacrebleu. Input is scored as given (no internal tokenization, no
smoothing). n-gram orders that no hypothesis is long enough to contain are
left out of the geometric mean, so identical corpora of short sentences
still score 100.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

from sacrebleu.metrics import BLEU

from contextnmt.nmtUtils import ContractError

__all__ = ["BleuScore", "bleu", "corpus_bleu", "read_lines"]


@dataclass
class BleuScore:
    score: float
    "0 to 100"
    precisions: List[float]
    "Modified n-gram precisions in %, n = 1..max_n"
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def __str__(self) -> str:
        precisions = "/".join(f"{p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.score:.2f} {precisions} "
            f"(BP = {self.brevity_penalty:.3f} hyp_len = {self.hyp_len} "
            f"ref_len = {self.ref_len})"
        )


def _metric(max_n: int) -> BLEU:
    return BLEU(
        lowercase=False,
        force=True,
        tokenize="none",
        smooth_method="none",
        max_ngram_order=max_n,
        effective_order=True,
    )


def corpus_bleu(
    hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4
) -> BleuScore:
    """BLEU with its components.

    Args:
        hypotheses (Sequence[str]): system output, one detokenized sentence each
        references (Sequence[str]): references, aligned with `hypotheses`
        max_n (int, optional): longest n-gram. Defaults to 4.

    Raises:
        ContractError: different number of hypotheses and references
        ValueError: max_n below 1
    """
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses but {len(references)} references"
        )
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")

    hyp_tokens = [h.split() for h in hypotheses]
    ref_tokens = [r.split() for r in references]
    if not any(hyp_tokens) and not any(ref_tokens):
        # nothing to match on either side: the corpora are identical
        return BleuScore(100.0, [100.0] * max_n, 1.0, 0, 0)

    result = _metric(max_n).corpus_score(
        [" ".join(t) for t in hyp_tokens], [[" ".join(t) for t in ref_tokens]]
    )
    return BleuScore(
        float(result.score),
        [float(p) for p in result.precisions],
        float(result.bp),
        int(result.sys_len),
        int(result.ref_len),
    )


def bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    "The BLEU score in [0, 100]"
    return corpus_bleu(hypotheses, references, max_n).score


def read_lines(path: Union[Path, str]) -> List[str]:
    with Path(path).open(encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]
