"""Word-embedding similarity between API field names."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path


class DimensionMismatch(ValueError):
    pass


class EmptyFile(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingTable:
    dimension: int
    vectors: dict[str, tuple[float, ...]]

    def __post_init__(self):
        if self.dimension <= 0:
            raise ValueError("dimension must be positive")
        for token, vec in self.vectors.items():
            if len(vec) != self.dimension:
                raise DimensionMismatch(f"{token!r} has {len(vec)} components, expected {self.dimension}")
            if token != token.lower():
                raise ValueError(f"tokens must be lowercase: {token!r}")

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass(frozen=True)
class NameVector:
    source_name: str
    vector: tuple[float, ...]
    oov: bool


def load_embeddings(file: str | Path) -> EmbeddingTable:
    """Read a GloVe-style text file: ``token f1 f2 ... fn`` per line.

    The dimension comes from the first record; any later record with a
    different arity raises :class:`DimensionMismatch`.
    """
    vectors: dict[str, tuple[float, ...]] = {}
    dimension = 0
    with open(file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0].lower(), parts[1:]
            if not dimension:
                dimension = len(values)
                if dimension == 0:
                    raise DimensionMismatch(f"line {lineno}: token {token!r} has no vector")
            elif len(values) != dimension:
                raise DimensionMismatch(f"line {lineno}: expected {dimension} floats, got {len(values)}")
            vectors[token] = tuple(float(v) for v in values)
    if not vectors:
        raise EmptyFile(f"{file} contains no embeddings")
    return EmbeddingTable(dimension, vectors)


def fixture_embeddings_path() -> Path:
    return Path(str(resources.files("restmarl") / "data" / "fixture_embeddings.txt"))


def load_fixture_embeddings() -> EmbeddingTable:
    """The small 8-dimensional table bundled with the package."""
    return load_embeddings(fixture_embeddings_path())


_SEPARATORS = re.compile(r"[_\-./\d\s]+")
_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def tokenize_identifier(name: str) -> list[str]:
    tokens = []
    for chunk in _SEPARATORS.split(name):
        tokens.extend(t.lower() for t in _CAMEL.split(chunk) if t)
    return tokens


def name_vector(table: EmbeddingTable, name: str) -> NameVector:
    hits = [table.vectors[t] for t in tokenize_identifier(name) if t in table.vectors]
    if not hits:
        return NameVector(name, (0.0,) * table.dimension, True)
    n = len(hits)
    mean = tuple(sum(col) / n for col in zip(*hits))
    return NameVector(name, mean, False)


def cosine(u, v) -> float:
    if len(u) != len(v):
        raise DimensionMismatch(f"cannot compare vectors of length {len(u)} and {len(v)}")
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(y * y for y in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * y for x, y in zip(u, v))
    # rounding can push |score| a hair past 1
    return max(-1.0, min(1.0, dot / (nu * nv)))


class NameSimilarity:
    """Memoizing similarity between field names under one table."""

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self._vectors: dict[str, NameVector] = {}

    def vector(self, name: str) -> NameVector:
        vec = self._vectors.get(name)
        if vec is None:
            vec = self._vectors[name] = name_vector(self.table, name)
        return vec

    def __call__(self, a: str, b: str) -> float:
        return cosine(self.vector(a).vector, self.vector(b).vector)
