__doc__ = """
Token ↔ id maps.

The first ids are reserved and never change across save/load:

| id | token      | use                                     |
|----|------------|-----------------------------------------|
| 0  | `<pad>`    | padding                                 |
| 1  | `<unk>`    | out of vocabulary                       |
| 2  | `</s>`     | end of sentence                         |
| 3  | `<concat>` | separator of concatenated sentences     |
| 4  | `<empty>`  | context of a document's first sentence  |

A vocabulary file has one token per line; line n (0-based) holds the token
with id `n + len(RESERVED)`.
"""

import hashlib
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Union

PAD, UNK, EOS, CONCAT, EMPTY = range(5)
RESERVED = ("<pad>", "<unk>", "</s>", "<concat>", "<empty>")


class Vocabulary:
    """
    A bijective token ↔ id map with a fixed reserved block.
    """

    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self._id_to_token: List[str] = list(RESERVED)
        self._token_to_id: Dict[str, int] = {t: n for n, t in enumerate(RESERVED)}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        "Add a token if missing and return its id"
        if token in self._token_to_id:
            return self._token_to_id[token]
        if not token or any(c.isspace() for c in token):
            raise ValueError(f"Tokens must be non-empty and whitespace free: {token!r}")
        self._token_to_id[token] = len(self._id_to_token)
        self._id_to_token.append(token)
        return self._token_to_id[token]

    @staticmethod
    def build(
        tokens: Iterable[str], min_count: int = 1, max_size: Optional[int] = None
    ) -> "Vocabulary":
        """Build a vocabulary from a token stream, most frequent first.

        Ties are broken alphabetically so the result is deterministic.
        """
        counts = Counter(t for t in tokens if t not in RESERVED)
        ranked = sorted(
            (t for t, c in counts.items() if c >= min_count),
            key=lambda t: (-counts[t], t),
        )
        if max_size is not None:
            ranked = ranked[:max_size]
        return Vocabulary(ranked)

    def encode(self, tokens: Sequence[str], add_eos: bool = False) -> List[int]:
        "Map tokens to ids; unknown tokens map to UNK"
        ids = [self._token_to_id.get(t, UNK) for t in tokens]
        if add_eos:
            ids.append(EOS)
        return ids

    def decode(self, ids: Iterable[int], strip: bool = True) -> List[str]:
        """Map ids back to tokens.

        Args:
            ids (Iterable[int]): token ids
            strip (bool, optional): stop at EOS and drop PAD. Defaults to True.
        """
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i == PAD:
                continue
            out.append(self._id_to_token[i])
        return out

    def token(self, i: int) -> str:
        return self._id_to_token[i]

    def __getitem__(self, token: str) -> int:
        return self._token_to_id.get(token, UNK)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __iter__(self) -> Iterator[str]:
        return iter(self._id_to_token)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return False
        return self._id_to_token == other._id_to_token

    def save(self, path: Union[Path, str]) -> None:
        "Write the non-reserved tokens, one per line"
        with Path(path).open("w", encoding="utf-8") as f:
            for token in self._id_to_token[len(RESERVED) :]:
                f.write(token + "\n")

    @staticmethod
    def load(path: Union[Path, str]) -> "Vocabulary":
        with Path(path).open("r", encoding="utf-8") as f:
            return Vocabulary(line.rstrip("\n") for line in f if line.strip())

    @property
    def fingerprint(self) -> str:
        "Short digest of the tokens in id order"
        joined = "\n".join(self._id_to_token)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]

    def __repr__(self) -> str:
        return f"<Vocabulary size={len(self)}>"
