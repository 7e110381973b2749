"""Prompt representation: sentence segmentation, sentence-level diffs, merging.

A prompt is the unit being optimized. It is modeled as its full text plus a
derived, ordered list of sentence spans. All edit accounting (the "update
units" charged against a learning-rate budget) happens at the sentence level.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

from .errors import PreservedSentenceLost

_TERMINALS = frozenset(".!?")


def normalize_ws(s: str) -> str:
    """Collapse whitespace runs and trim; used for sentence equality."""
    return " ".join(s.split())


@dataclass(frozen=True)
class SentenceSpan:
    """One sentence: content plus character offsets into the source text."""

    index: int
    content: str
    start: int
    end: int


def segment(text: str) -> list[SentenceSpan]:
    """Split text into sentence spans.

    Boundaries are ``.``, ``!`` or ``?`` followed by whitespace or
    end-of-text, except a ``.`` with a digit on both sides (decimals).
    A newline always closes the current span, so colon-terminated headers
    and bullet lines in list-style prompts become their own sentences.
    Whitespace between spans is not covered by any span; joining the spans
    with the original gaps reproduces the text exactly.
    """
    spans: list[tuple[int, int]] = []
    n = len(text)
    start: Optional[int] = None
    i = 0
    while i < n:
        ch = text[i]
        if ch == "\n":
            if start is not None:
                end = start + len(text[start:i].rstrip())
                spans.append((start, end))
                start = None
            i += 1
            continue
        if start is None:
            if ch.isspace():
                i += 1
                continue
            start = i
        if ch in _TERMINALS:
            nxt = text[i + 1] if i + 1 < n else ""
            prev = text[i - 1] if i > 0 else ""
            is_decimal = ch == "." and prev.isdigit() and nxt.isdigit()
            if not is_decimal and (nxt == "" or nxt.isspace()):
                spans.append((start, i + 1))
                start = None
        i += 1
    if start is not None:
        end = start + len(text[start:n].rstrip())
        spans.append((start, end))
    return [
        SentenceSpan(index=k, content=text[s:e], start=s, end=e)
        for k, (s, e) in enumerate(spans)
    ]


@dataclass(frozen=True)
class Prompt:
    """A versioned prompt with lineage metadata and derived sentences."""

    id: str
    text: str
    step: int = 0
    parent_id: Optional[str] = None
    sentences: tuple[SentenceSpan, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(segment(self.text)))

    @staticmethod
    def create(text: str, step: int = 0, parent_id: Optional[str] = None) -> "Prompt":
        """Build a prompt with a deterministic content-derived id."""
        digest = hashlib.sha256(
            f"{parent_id or ''}|{step}|{text}".encode("utf-8")
        ).hexdigest()[:12]
        return Prompt(id=digest, text=text, step=step, parent_id=parent_id)

    def child(self, text: str) -> "Prompt":
        """Derive the next-step prompt produced by one update."""
        return Prompt.create(text, step=self.step + 1, parent_id=self.id)

    @property
    def sentence_count(self) -> int:
        return len(self.sentences)


class EditKind(str, Enum):
    ADD = "add"
    DELETE = "delete"
    MODIFY = "modify"


@dataclass(frozen=True)
class EditOp:
    """One sentence-level edit. Add carries only new_*, Delete only old_*."""

    kind: EditKind
    old_index: Optional[int] = None
    new_index: Optional[int] = None
    old_content: Optional[str] = None
    new_content: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind is EditKind.ADD:
            assert self.old_index is None and self.old_content is None
            assert self.new_index is not None and self.new_content is not None
        elif self.kind is EditKind.DELETE:
            assert self.new_index is None and self.new_content is None
            assert self.old_index is not None and self.old_content is not None
        else:
            assert self.old_index is not None and self.new_index is not None
            assert self.old_content != self.new_content


@dataclass(frozen=True)
class PromptDiff:
    ops: tuple[EditOp, ...]

    @property
    def unit_count(self) -> int:
        return len(self.ops)


Sentences = Union["Prompt", Sequence[Union[str, SentenceSpan]]]


def _contents(x: Sentences) -> list[str]:
    if isinstance(x, Prompt):
        return [s.content for s in x.sentences]
    return [s.content if isinstance(s, SentenceSpan) else s for s in x]


def _lcs_table(a: list[str], b: list[str]) -> list[list[int]]:
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = dp[i], dp[i + 1]
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                row[j] = below[j + 1] + 1
            else:
                row[j] = below[j] if below[j] >= row[j + 1] else row[j + 1]
    return dp


def diff(old: Sentences, new: Sentences) -> PromptDiff:
    """Sentence-level diff via LCS alignment on whitespace-normalized content.

    Aligned-equal sentences cost nothing. Within each unaligned gap,
    deletions and insertions are paired in order into Modify ops; leftovers
    become Delete/Add. unit_count is the total number of ops, matching the
    "1 modify + 2 add + 1 delete = 4" style of accounting used by the
    learning-rate instruction.
    """
    old_raw, new_raw = _contents(old), _contents(new)
    a = [normalize_ws(s) for s in old_raw]
    b = [normalize_ws(s) for s in new_raw]
    dp = _lcs_table(a, b)

    ops: list[EditOp] = []
    pend_del: list[int] = []
    pend_ins: list[int] = []

    def flush() -> None:
        k = min(len(pend_del), len(pend_ins))
        for t in range(k):
            oi, nj = pend_del[t], pend_ins[t]
            ops.append(
                EditOp(
                    EditKind.MODIFY,
                    old_index=oi,
                    new_index=nj,
                    old_content=old_raw[oi],
                    new_content=new_raw[nj],
                )
            )
        for oi in pend_del[k:]:
            ops.append(EditOp(EditKind.DELETE, old_index=oi, old_content=old_raw[oi]))
        for nj in pend_ins[k:]:
            ops.append(EditOp(EditKind.ADD, new_index=nj, new_content=new_raw[nj]))
        pend_del.clear()
        pend_ins.clear()

    i = j = 0
    n, m = len(a), len(b)
    while i < n and j < m:
        if a[i] == b[j]:
            flush()
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            pend_del.append(i)
            i += 1
        else:
            pend_ins.append(j)
            j += 1
    pend_del.extend(range(i, n))
    pend_ins.extend(range(j, m))
    flush()
    return PromptDiff(ops=tuple(ops))


def apply_diff(old: Sentences, ops: Sequence[EditOp]) -> list[str]:
    """Apply diff ops to a sentence list, reconstructing the new list.

    Matched (untouched) sentences keep their old raw content, so the result
    equals the diffed target up to whitespace normalization.
    """
    old_raw = _contents(old)
    consumed = {
        op.old_index for op in ops if op.kind in (EditKind.DELETE, EditKind.MODIFY)
    }
    placed = {
        op.new_index: op.new_content
        for op in ops
        if op.kind in (EditKind.ADD, EditKind.MODIFY)
    }
    survivors = [s for idx, s in enumerate(old_raw) if idx not in consumed]
    total = len(survivors) + len(placed)
    out: list[str] = []
    si = 0
    for pos in range(total):
        if pos in placed:
            out.append(placed[pos])  # type: ignore[arg-type]
        else:
            out.append(survivors[si])
            si += 1
    return out


def merge_sentences(
    preserved: Sequence[SentenceSpan], updated: Sequence[SentenceSpan]
) -> list[str]:
    """Merge dropout-preserved sentences with an updated sentence layout.

    Three cases, keyed on the shape of ``updated``:

    - ``updated`` empty: nothing was changed; the result is the preserved
      sentences in their original order (the p=1 dropout degenerate case).
    - ``updated`` indices dense (0..m-1): ``updated`` is a full candidate
      prompt. Every preserved sentence must occur in it, in original
      relative order (whitespace-insensitive); matched slots are replaced
      with the preserved sentence verbatim. A missing preserved sentence
      raises PreservedSentenceLost: the optimizer violated dropout.
    - ``updated`` indices sparse: they are explicit positions in the merged
      result; preserved sentences fill the remaining slots in order.
    """
    kept = sorted(preserved, key=lambda s: s.start)
    if not updated:
        return [s.content for s in kept]

    indices = sorted(s.index for s in updated)
    dense = indices == list(range(len(updated)))
    if dense:
        ordered = sorted(updated, key=lambda s: s.index)
        contents = [s.content for s in ordered]
        norm = [normalize_ws(c) for c in contents]
        cursor = 0
        for p in kept:
            target = normalize_ws(p.content)
            while cursor < len(norm) and norm[cursor] != target:
                cursor += 1
            if cursor == len(norm):
                raise PreservedSentenceLost(
                    f"preserved sentence missing from candidate: {p.content!r}"
                )
            contents[cursor] = p.content
            cursor += 1
        return contents

    by_slot = {s.index: s.content for s in sorted(updated, key=lambda s: s.index)}
    total = len(kept) + len(updated)
    out: list[str] = []
    ki = 0
    for pos in range(total):
        if pos in by_slot:
            out.append(by_slot[pos])
        elif ki < len(kept):
            out.append(kept[ki].content)
            ki += 1
    for pos in sorted(by_slot):
        if pos >= total:
            out.append(by_slot[pos])
    return out


def merge(
    preserved: Sequence[SentenceSpan],
    updated: Sequence[SentenceSpan],
    parent: Optional[Prompt] = None,
) -> Prompt:
    """Like merge_sentences, but packages the result as a Prompt.

    When all of the parent's sentences are preserved and nothing was
    updated, the parent is returned unchanged (text included).
    """
    merged = merge_sentences(preserved, updated)
    if parent is not None:
        if merged == [s.content for s in parent.sentences]:
            return parent
        return parent.child("\n".join(merged))
    return Prompt.create("\n".join(merged))
