"""Knowledge-graph storage: vocabularies, TSV ingestion, incident index, negatives.

Triples are kept both as a list of :class:`Triple` (for readable per-triple
code) and as an ``(n, 3)`` int64 array (for vectorised scoring).
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import CorruptCache, DegenerateGraph, IndexOutOfRange, MalformedLine, UnknownName

HEAD, TAIL = 0, 1
MAX_FILTER_RETRIES = 100
CACHE_MAGIC = b"RKGE01"


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class Vocab:
    entity_names: list = field(default_factory=list)
    relation_names: list = field(default_factory=list)
    entity_index: dict = field(default_factory=dict)
    relation_index: dict = field(default_factory=dict)

    @classmethod
    def from_names(cls, entities, relations):
        vocab = cls()
        for name in entities:
            vocab.add_entity(name)
        for name in relations:
            vocab.add_relation(name)
        return vocab

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def add_entity(self, name: str) -> int:
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entity_names)
            self.entity_names.append(name)
            self.entity_index[name] = idx
        return idx

    def add_relation(self, name: str) -> int:
        idx = self.relation_index.get(name)
        if idx is None:
            idx = len(self.relation_names)
            self.relation_names.append(name)
            self.relation_index[name] = idx
        return idx

    def copy(self) -> "Vocab":
        return Vocab.from_names(self.entity_names, self.relation_names)


def load_triples_tsv(path, vocab=None, strict=False):
    """Parse a ``head<TAB>relation<TAB>tail`` file.

    Parameters
    ----------
    path : str or os.PathLike
        UTF-8 file, one triple per line, no header.
    vocab : Vocab, optional
        Existing vocabulary. A fresh one is created when omitted.
    strict : bool
        If true, names missing from ``vocab`` raise :class:`UnknownName`
        instead of extending it (use for valid/test splits).

    Returns
    -------
    triples : list of Triple
        In file order.
    vocab : Vocab
        The (possibly extended) vocabulary; the same object when one was passed.
    """
    if vocab is None:
        vocab = Vocab()
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise MalformedLine(lineno, line)
            h, r, t = parts
            if strict:
                for name, table in ((h, vocab.entity_index), (r, vocab.relation_index),
                                    (t, vocab.entity_index)):
                    if name not in table:
                        raise UnknownName(name)
                triples.append(Triple(vocab.entity_index[h], vocab.relation_index[r],
                                      vocab.entity_index[t]))
            else:
                hi = vocab.add_entity(h)
                ri = vocab.add_relation(r)
                ti = vocab.add_entity(t)
                triples.append(Triple(hi, ri, ti))
    return triples, vocab


def write_triples_tsv(path, triples, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{vocab.entity_names[h]}\t{vocab.relation_names[r]}\t{vocab.entity_names[t]}\n")


def build_incident_index(triples, n_entities):
    """Per-entity ascending lists of the triple ids touching that entity.

    A self-loop ``(v, r, v)`` contributes its id twice to ``incident[v]``.
    """
    incident = [[] for _ in range(n_entities)]
    for i, (h, _, t) in enumerate(triples):
        if not (0 <= h < n_entities and 0 <= t < n_entities):
            raise IndexOutOfRange(f"triple {i} references entity outside [0, {n_entities})")
        incident[h].append(i)
        incident[t].append(i)
    return [np.asarray(sorted(lst), dtype=np.int64) for lst in incident]


def triples_to_array(triples) -> np.ndarray:
    if len(triples) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return np.asarray(triples, dtype=np.int64).reshape(-1, 3)


@dataclass
class KnowledgeGraph:
    vocab: Vocab
    triples: list
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)
    incident: list = field(default=None)

    def __post_init__(self):
        if self.incident is None:
            self.incident = build_incident_index(self.triples, self.vocab.n_entities)
        self.array = triples_to_array(self.triples)
        self._known = None

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @property
    def known(self) -> frozenset:
        """All true triples (train, valid and test) as plain tuples."""
        if self._known is None:
            self._known = frozenset(tuple(map(int, tr)) for tr in
                                    list(self.triples) + list(self.valid) + list(self.test))
        return self._known

    def split(self, name: str) -> list:
        return {"train": self.triples, "valid": self.valid, "test": self.test}[name]

    @classmethod
    def from_arrays(cls, n_entities, n_relations, train, valid=(), test=()):
        """Build a graph with synthetic names ``e0, e1, ...`` / ``r0, ...``."""
        vocab = Vocab.from_names([f"e{i}" for i in range(n_entities)],
                                 [f"r{i}" for i in range(n_relations)])
        conv = lambda rows: [Triple(int(h), int(r), int(t)) for h, r, t in rows]  # noqa: E731
        return cls(vocab, conv(train), conv(valid), conv(test))


def load_dataset(directory) -> KnowledgeGraph:
    """Load ``train.txt`` (extends vocab) plus optional strict ``valid.txt``/``test.txt``."""
    train, vocab = load_triples_tsv(os.path.join(directory, "train.txt"))
    splits = {}
    for name in ("valid", "test"):
        path = os.path.join(directory, f"{name}.txt")
        splits[name] = load_triples_tsv(path, vocab, strict=True)[0] if os.path.exists(path) else []
    return KnowledgeGraph(vocab, train, splits["valid"], splits["test"])


@dataclass
class NegativeBatch:
    """Corrupted triples with the index of their source positive and the corrupted side."""

    source: np.ndarray     # (m,) index into the positive batch
    triples: np.ndarray    # (m, 3)
    side: np.ndarray       # (m,) HEAD or TAIL

    def __len__(self):
        return len(self.source)


def sample_negatives(batch, n_per_positive, rng, n_entities, filter_set=None):
    """Corrupt the head or tail (fair coin) of every positive ``n_per_positive`` times.

    The replacement entity is uniform over entities other than the original,
    so each negative differs from its positive in exactly the flagged slot.
    With ``filter_set``, samples that hit a known triple are redrawn (same
    side) up to ``MAX_FILTER_RETRIES`` times and then accepted.
    """
    if n_per_positive < 1:
        raise ValueError("n_per_positive must be >= 1")
    if n_entities < 2:
        raise DegenerateGraph("cannot corrupt a triple in a graph with fewer than 2 entities")
    pos = triples_to_array(batch) if not isinstance(batch, np.ndarray) else batch
    n_pos = len(pos)
    source = np.repeat(np.arange(n_pos, dtype=np.int64), n_per_positive)
    neg = pos[source].copy()
    m = len(neg)
    side = rng.integers(0, 2, size=m)
    col = np.where(side == HEAD, 0, 2)
    rows = np.arange(m)
    orig = neg[rows, col]
    e = rng.integers(0, n_entities - 1, size=m)
    neg[rows, col] = e + (e >= orig)

    if filter_set:
        for i in range(m):
            tries = 0
            while (int(neg[i, 0]), int(neg[i, 1]), int(neg[i, 2])) in filter_set and tries < MAX_FILTER_RETRIES:
                orig = pos[source[i], col[i]]
                e = int(rng.integers(0, n_entities - 1))
                neg[i, col[i]] = e + (e >= orig)
                tries += 1
    return NegativeBatch(source=source, triples=neg, side=side.astype(np.int8))


# --- binary cache -------------------------------------------------------------

def _pack_names(names):
    blob = "\n".join(names).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def save_graph_cache(graph: KnowledgeGraph, path):
    """Write ``RKGE01`` + little-endian u32 counts, name blobs, index arrays, CRC32."""
    body = struct.pack("<5I", graph.n_entities, graph.n_relations,
                       len(graph.triples), len(graph.valid), len(graph.test))
    body += _pack_names(graph.vocab.entity_names) + _pack_names(graph.vocab.relation_names)
    for split in (graph.triples, graph.valid, graph.test):
        body += triples_to_array(split).astype("<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + body + struct.pack("<I", zlib.crc32(body)))


def load_graph_cache(path) -> KnowledgeGraph:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:6] != CACHE_MAGIC:
        raise CorruptCache("bad magic header")
    body, crc = raw[6:-4], raw[-4:]
    if len(raw) < 10 or struct.unpack("<I", crc)[0] != zlib.crc32(body):
        raise CorruptCache("checksum mismatch")
    n_ent, n_rel, n_tr, n_va, n_te = struct.unpack_from("<5I", body, 0)
    off = 20
    names = []
    for _ in range(2):
        (size,) = struct.unpack_from("<I", body, off)
        off += 4
        text = body[off:off + size].decode("utf-8")
        names.append(text.split("\n") if size else [])
        off += size
    splits = []
    for n in (n_tr, n_va, n_te):
        arr = np.frombuffer(body, dtype="<u4", count=3 * n, offset=off).reshape(n, 3)
        off += 12 * n
        splits.append([Triple(int(h), int(r), int(t)) for h, r, t in arr])
    vocab = Vocab.from_names(names[0], names[1])
    if vocab.n_entities != n_ent or vocab.n_relations != n_rel:
        raise CorruptCache("vocabulary size does not match header")
    return KnowledgeGraph(vocab, *splits)
