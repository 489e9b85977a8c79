"""Discrete architecture encoding for the detection-network search space.

An architecture is 7 genes: one per conv search block (6 blocks, 16
options each) plus a self-attention layer count in {0..4}, for a total
of 16^6 * 5 = 83,886,080 candidates.

Block option domains:
  V2 / V2A: spatial channel multiplier n_c in {4F, 8F, 12F} x branch
            count n_d in {4, 5}  (6 options each)
  V2B / V2C: branch count n_d in {4, 5} only (2 options each)

Text notation (the external interface used in logs and on the CLI):
  "V2(4F,4),V2A(4F,5),V2B(4),V2C(5),V2(12F,5),V2(8F,5);attn=0"
The parser also accepts the shorthand "A(4F,5)" / "B(4)" / "C(5)" and
explicit "nc="/"nd=" key prefixes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BLOCK_KINDS = ("V2", "V2A", "V2B", "V2C")
NC_MULTIPLIERS = (4, 8, 12)  # n_c as a multiple of the block's base width F
ND_OPTIONS = (4, 5)
ATTENTION_OPTIONS = (0, 1, 2, 3, 4)
NUM_BLOCKS = 6


class ArchError(ValueError):
    """Raised for out-of-domain genes or malformed architecture text."""


@dataclass(frozen=True)
class BlockGene:
    """One search-block choice: kind, spatial width multiplier, branch count."""

    kind: str
    nc_mult: int | None  # 4, 8 or 12 for V2/V2A; None for V2B/V2C
    n_d: int

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ArchError(f"unknown block kind {self.kind!r}")
        if self.n_d not in ND_OPTIONS:
            raise ArchError(f"block {self.kind}: n_d must be one of {ND_OPTIONS}, got {self.n_d}")
        if self.kind in ("V2", "V2A"):
            if self.nc_mult not in NC_MULTIPLIERS:
                raise ArchError(
                    f"block {self.kind}: n_c must be one of "
                    f"{{4F, 8F, 12F}}, got {self.nc_mult}")
        elif self.nc_mult is not None:
            raise ArchError(f"block {self.kind} carries no n_c degree of freedom")

    def to_text(self) -> str:
        if self.kind in ("V2", "V2A"):
            return f"{self.kind}({self.nc_mult}F,{self.n_d})"
        return f"{self.kind}({self.n_d})"


def enumerate_block_genes() -> tuple[BlockGene, ...]:
    """All 16 block options in canonical index order."""
    genes = []
    for kind in ("V2", "V2A"):
        for nc in NC_MULTIPLIERS:
            for nd in ND_OPTIONS:
                genes.append(BlockGene(kind, nc, nd))
    for kind in ("V2B", "V2C"):
        for nd in ND_OPTIONS:
            genes.append(BlockGene(kind, None, nd))
    return tuple(genes)


BLOCK_GENE_TABLE = enumerate_block_genes()
_GENE_TO_INDEX = {g: i for i, g in enumerate(BLOCK_GENE_TABLE)}
OPTIONS_PER_BLOCK = len(BLOCK_GENE_TABLE)


@dataclass(frozen=True)
class ArchCode:
    """A full candidate: 6 block genes plus the attention layer count."""

    blocks: tuple[BlockGene, ...]
    attention_layers: int

    def __post_init__(self):
        if len(self.blocks) != NUM_BLOCKS:
            raise ArchError(f"an architecture has exactly {NUM_BLOCKS} block genes, "
                            f"got {len(self.blocks)}")
        if self.attention_layers not in ATTENTION_OPTIONS:
            raise ArchError(f"attention_layers must be in {ATTENTION_OPTIONS}, "
                            f"got {self.attention_layers}")

    def to_text(self) -> str:
        return ",".join(g.to_text() for g in self.blocks) + f";attn={self.attention_layers}"

    def to_vector(self) -> np.ndarray:
        """Integer gene vector [7]: six block-option indices plus attention."""
        v = np.empty(7, dtype=np.int64)
        for i, g in enumerate(self.blocks):
            v[i] = _GENE_TO_INDEX[g]
        v[6] = self.attention_layers
        return v

    def to_index(self) -> int:
        idx = 0
        for g in self.blocks:
            idx = idx * OPTIONS_PER_BLOCK + _GENE_TO_INDEX[g]
        return idx * len(ATTENTION_OPTIONS) + self.attention_layers

    def to_json_dict(self) -> dict:
        return {
            "blocks": [{"kind": g.kind, "nc_mult": g.nc_mult, "n_d": g.n_d}
                       for g in self.blocks],
            "attention_layers": self.attention_layers,
            "text": self.to_text(),
        }


def search_space_size() -> int:
    """Total number of candidate architectures."""
    return OPTIONS_PER_BLOCK ** NUM_BLOCKS * len(ATTENTION_OPTIONS)


def encode_arch(genes: Sequence[BlockGene], attention_layers: int) -> ArchCode:
    """Validate genes and produce an ArchCode."""
    return ArchCode(tuple(genes), int(attention_layers))


def arch_from_vector(v: Sequence[int]) -> ArchCode:
    v = list(v)
    if len(v) != 7:
        raise ArchError(f"gene vector must have 7 entries, got {len(v)}")
    for i, gi in enumerate(v[:6]):
        if not 0 <= gi < OPTIONS_PER_BLOCK:
            raise ArchError(f"block {i + 1}: option index {gi} out of range")
    return ArchCode(tuple(BLOCK_GENE_TABLE[int(g)] for g in v[:6]), int(v[6]))


_BLOCK_RE = re.compile(
    r"^(?:V2)?(A|B|C)?\(\s*(?:nc=)?(?:(\d+)F\s*,\s*)?(?:nd=)?(\d+)\s*\)$")


def _parse_block(token: str, position: int) -> BlockGene:
    m = _BLOCK_RE.match(token.strip())
    if not m:
        raise ArchError(f"block {position}: cannot parse {token!r}")
    suffix, nc, nd = m.groups()
    kind = "V2" + (suffix or "")
    nc_mult = int(nc) if nc is not None else None
    try:
        return BlockGene(kind, nc_mult, int(nd))
    except ArchError as e:
        raise ArchError(f"block {position}: {e}") from None


def decode_arch(value) -> ArchCode:
    """Decode an architecture from an integer index or its text form."""
    if isinstance(value, (int, np.integer)):
        idx = int(value)
        if not 0 <= idx < search_space_size():
            raise ArchError(f"architecture index {idx} out of range "
                            f"[0, {search_space_size()})")
        idx, attn = divmod(idx, len(ATTENTION_OPTIONS))
        rev = []
        for _ in range(NUM_BLOCKS):
            idx, g = divmod(idx, OPTIONS_PER_BLOCK)
            rev.append(BLOCK_GENE_TABLE[g])
        return ArchCode(tuple(reversed(rev)), attn)

    text = str(value).strip()
    attn = 0
    if ";" in text:
        text, _, tail = text.partition(";")
        tail = tail.strip()
        if not tail.startswith("attn="):
            raise ArchError(f"expected ';attn=<k>' suffix, got {tail!r}")
        try:
            attn = int(tail[len("attn="):])
        except ValueError:
            raise ArchError(f"attention count is not an integer: {tail!r}") from None
    tokens = _split_blocks(text)
    if len(tokens) != NUM_BLOCKS:
        raise ArchError(f"expected {NUM_BLOCKS} block genes, got {len(tokens)}")
    blocks = tuple(_parse_block(tok, i + 1) for i, tok in enumerate(tokens))
    return ArchCode(blocks, attn)


def _split_blocks(text: str) -> list[str]:
    tokens, depth, cur = [], 0, []
    for ch in text:
        if ch == "," and depth == 0:
            tokens.append("".join(cur))
            cur = []
            continue
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        cur.append(ch)
    if cur:
        tokens.append("".join(cur))
    return [t for t in (tok.strip() for tok in tokens) if t]


# ---------------------------------------------------------------------------
# code spaces (full search space and reduced subspaces for experiments)


@dataclass(frozen=True)
class CodeSpace:
    """Per-gene option domains; supports frozen genes for reduced spaces.

    block_options[p] lists the allowed option indices at block position p;
    attention_options lists the allowed attention depths.
    """

    block_options: tuple[tuple[int, ...], ...]
    attention_options: tuple[int, ...]

    def __post_init__(self):
        if len(self.block_options) != NUM_BLOCKS:
            raise ArchError("CodeSpace needs option lists for all 6 blocks")
        for p, opts in enumerate(self.block_options):
            if not opts or any(not 0 <= o < OPTIONS_PER_BLOCK for o in opts):
                raise ArchError(f"CodeSpace: bad options for block {p + 1}: {opts}")
        if not self.attention_options or any(
                a not in ATTENTION_OPTIONS for a in self.attention_options):
            raise ArchError(f"CodeSpace: bad attention options {self.attention_options}")

    def size(self) -> int:
        n = len(self.attention_options)
        for opts in self.block_options:
            n *= len(opts)
        return n

    def sample(self, rng: np.random.Generator) -> ArchCode:
        v = [opts[rng.integers(len(opts))] for opts in self.block_options]
        v.append(self.attention_options[rng.integers(len(self.attention_options))])
        return arch_from_vector(v)

    def enumerate(self) -> Iterable[ArchCode]:
        def rec(pos: int, prefix: list[int]):
            if pos == NUM_BLOCKS:
                for a in self.attention_options:
                    yield arch_from_vector(prefix + [a])
                return
            for o in self.block_options[pos]:
                yield from rec(pos + 1, prefix + [o])

        return rec(0, [])

    def contains(self, arch: ArchCode) -> bool:
        v = arch.to_vector()
        return all(int(v[p]) in self.block_options[p] for p in range(NUM_BLOCKS)) \
            and int(v[6]) in self.attention_options


FULL_SPACE = CodeSpace(
    tuple(tuple(range(OPTIONS_PER_BLOCK)) for _ in range(NUM_BLOCKS)),
    ATTENTION_OPTIONS,
)


def reduced_space(free_blocks: Sequence[int], frozen_option: int = 0,
                  attention: Sequence[int] = ATTENTION_OPTIONS) -> CodeSpace:
    """A subspace where only `free_blocks` (0-based positions) vary."""
    opts = []
    for p in range(NUM_BLOCKS):
        if p in free_blocks:
            opts.append(tuple(range(OPTIONS_PER_BLOCK)))
        else:
            opts.append((frozen_option,))
    return CodeSpace(tuple(opts), tuple(attention))


# Searched/reference architectures used for complexity comparisons.
F1_SEARCHED_ARCH = decode_arch(
    "V2(4F,4),V2A(4F,5),V2A(4F,5),V2A(4F,5),V2(12F,5),V2(8F,5);attn=0")
PRECISION_SEARCHED_ARCH = decode_arch(
    "V2(12F,4),V2(8F,4),V2B(4),V2C(4),V2B(5),V2B(4);attn=0")
BASELINE_REFERENCE_ARCH = decode_arch(
    "V2(8F,4),V2(8F,4),V2(8F,4),V2(8F,4),V2(8F,4),V2(8F,4);attn=0")
