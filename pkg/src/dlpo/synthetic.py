"""Deterministic stand-in engines over a keyword-fitness landscape.

The landscape scores a prompt by the keyword weights it contains, minus a
length penalty, plus optional seeded noise. The forward engine answers each
example correctly with probability equal to that fitness, using a draw
fixed by (prompt text, example id), so whole optimization runs are exactly
reproducible offline, including failure, rejection, and recovery paths.
"""

from __future__ import annotations

import hashlib
import re
from typing import Iterable, Optional, Sequence

from .config import SyntheticSpec
from .evaluation import Example
from .prompt import normalize_ws, segment
from .rng import PortableRng

LENGTH_PENALTY = 0.02
LENGTH_THRESHOLD = 12
FILLER_MARKER = "filler"

COMPLETE_FEEDBACK = "The variable looks complete; no issues found."

_MISSING_RE = re.compile(r"missing guidance on: ([^.\n]+)\.")
_VARIABLE_RE = re.compile(r"<VARIABLE>(.*?)</VARIABLE>", re.DOTALL)
_RATE_RE = re.compile(r"Your learning rate is: (\d+)\.")
_DROPOUT_RE = re.compile(r"<DROPOUT>'(.*?)'</DROPOUT>", re.DOTALL)
_REGU_MARKER = "Please simplify the overly complex"


def _u64_from(*parts: object) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def fitness(spec: SyntheticSpec, text: str) -> float:
    """clamp(sum of present keyword weights - length penalty + noise, 0, 1)."""
    lowered = text.lower()
    base = sum(w for kw, w in spec.keywords.items() if kw.lower() in lowered)
    sentences = len(segment(text))
    base -= LENGTH_PENALTY * max(0, sentences - LENGTH_THRESHOLD)
    if spec.noise_sigma > 0:
        rng = PortableRng(_u64_from(spec.seed, "noise", text))
        base += rng.gauss() * spec.noise_sigma
    return min(1.0, max(0.0, base))


def answers_correctly(spec: SyntheticSpec, prompt_text: str, example_id: str) -> bool:
    """Fixed per-(prompt, example) draw against the prompt's fitness."""
    u = PortableRng(_u64_from(spec.seed, "draw", prompt_text, example_id)).random()
    return u < fitness(spec, prompt_text)


def _wrong_answer(gold: str) -> str:
    try:
        return str(int(gold) + 1)
    except ValueError:
        try:
            return str(float(gold) + 1)
        except ValueError:
            return "0"


class LandscapeEngine:
    """Forward engine: answers dataset questions per the fitness landscape."""

    def __init__(self, spec: SyntheticSpec, examples: Iterable[Example]) -> None:
        self.spec = spec
        self._by_question = {ex.question: ex for ex in examples}

    def complete(self, system: str, user: str, role: str = "forward") -> str:
        ex = self._by_question.get(user)
        if ex is None:
            return "The answer is [unknown]."
        if answers_correctly(self.spec, system, ex.id):
            return f"The answer is [{ex.answer}]."
        return f"The answer is [{_wrong_answer(ex.answer)}]."


def missing_keywords(spec: SyntheticSpec, text: str) -> list[str]:
    lowered = text.lower()
    absent = [kw for kw in spec.keywords if kw.lower() not in lowered]
    return sorted(absent, key=lambda kw: (spec.keywords[kw], kw))


def scripted_backward(spec: SyntheticSpec, prompt_text: str) -> str:
    """Deterministic feedback naming up to 2 missing keywords, lowest
    weight first; a complete prompt gets a fixed all-clear message."""
    absent = missing_keywords(spec, prompt_text)[:2]
    if not absent:
        return COMPLETE_FEEDBACK
    listed = "; ".join(absent)
    return (
        f"The variable is missing guidance on: {listed}. "
        "Add one instruction sentence for each missing concept."
    )


def _parse_named_keywords(text: str) -> list[str]:
    m = _MISSING_RE.search(text)
    if not m:
        return []
    return [kw.strip() for kw in m.group(1).split(";") if kw.strip()]


def scripted_update(
    prompt_text: str, gradient: str, extras: Sequence[str] = ()
) -> str:
    """Deterministic optimizer: adds one sentence per keyword named in the
    gradient, honors a learning-rate cap by truncating edits, never touches
    dropout-preserved sentences, and deletes one filler sentence when a
    regularization block is present. Always returns a well-formed
    improved-variable response."""
    context = "\n\n".join([gradient, *extras])
    named = _parse_named_keywords(context)
    rate_matches = _RATE_RE.findall(context)
    cap: Optional[int] = int(rate_matches[-1]) if rate_matches else None
    dropout = _DROPOUT_RE.search(context)
    preserved_blob = normalize_ws(dropout.group(1)) if dropout else ""
    regu_active = _REGU_MARKER in context

    sentences = [sp.content for sp in segment(prompt_text)]
    lowered = prompt_text.lower()
    adds = [
        f"Remember to {kw}." for kw in named if kw.lower() not in lowered
    ]

    delete_idx: Optional[int] = None
    if regu_active:
        for i, s in enumerate(sentences):
            if FILLER_MARKER in s.lower():
                if preserved_blob and normalize_ws(s) in preserved_blob:
                    continue
                delete_idx = i
                break

    edits: list[tuple[str, object]] = [("add", s) for s in adds]
    if delete_idx is not None:
        edits.append(("del", delete_idx))
    if cap is not None:
        edits = edits[:cap]

    new_sentences = list(sentences)
    for kind, payload in edits:
        if kind == "del":
            new_sentences[payload] = None  # type: ignore[index]
    new_sentences = [s for s in new_sentences if s is not None]
    new_sentences.extend(s for kind, s in edits if kind == "add")

    body = "\n".join(new_sentences)
    return f"<IMPROVED-VARIABLE>\n{body}\n</IMPROVED-VARIABLE>"


class ScriptedDlpoOptimizer:
    """Backward engine double: serves both reflection and update requests."""

    def __init__(self, spec: SyntheticSpec) -> None:
        self.spec = spec

    def complete(self, system: str, user: str, role: str = "forward") -> str:
        m = _VARIABLE_RE.search(user)
        variable = m.group(1) if m else ""
        if role == "backward":
            return scripted_backward(self.spec, variable)
        if role == "update":
            remainder = user[m.end() :] if m else user
            return scripted_update(variable, remainder)
        return "The answer is [unknown]."
