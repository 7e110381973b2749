"""Datasets, answer extraction, scoring, and convergence detection.

Tasks are question/answer pairs (JSONL). Model output is free text; the
extraction cascade pulls out a final answer, canonicalization makes numeric
surface forms comparable, and scoring applies a relative tolerance for
numbers with an exact-match fallback for everything else.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence, Union

from .errors import DuplicateId, EmptyBatch, ParseError
from .prompt import Prompt

_NUMBER_RE = re.compile(r"[-+]?[$€£]?\d(?:[\d,]*\d)?(?:\.\d+)?")
_CANONICAL_NUM_RE = re.compile(r"-?\d+(?:\.\d+)?$")
_ANSWER_MARKER_RE = re.compile(r"answer\s*:", re.IGNORECASE)
_BRACKET_RE = re.compile(r"\[([^\[\]]*)\]")


@dataclass(frozen=True)
class Example:
    id: str
    question: str
    answer: str


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    examples: tuple[Example, ...]

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


@dataclass(frozen=True)
class EvalRecord:
    step: int
    example_id: str
    correct: bool
    pred: str
    gold: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "example_id": self.example_id,
                "correct": self.correct,
                "pred": self.pred,
                "gold": self.gold,
            },
            ensure_ascii=False,
        )


def load_dataset(path: Union[str, Path], name: Optional[str] = None) -> DatasetSplit:
    """Read a JSONL dataset. Each line needs question and answer; id is
    optional and defaults to the 1-based line number. Blank lines are
    skipped. Malformed lines raise ParseError with the line number;
    duplicate ids raise DuplicateId."""
    path = Path(path)
    examples: list[Example] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            for key in ("question", "answer"):
                if key not in obj:
                    raise ParseError(lineno, f"missing required field {key!r}")
            ex_id = str(obj.get("id", lineno))
            if ex_id in seen:
                raise DuplicateId(f"duplicate example id {ex_id!r} at line {lineno}")
            seen.add(ex_id)
            examples.append(
                Example(id=ex_id, question=str(obj["question"]), answer=str(obj["answer"]))
            )
    return DatasetSplit(name=name or path.stem, examples=tuple(examples))


def bundled_split(name: str) -> DatasetSplit:
    """Load one of the packaged task splits ("train" or "val")."""
    ref = resources.files("dlpo.data").joinpath(f"{name}.jsonl")
    with resources.as_file(ref) as path:
        return load_dataset(path, name=name)


def canonicalize(s: str) -> str:
    """Normalize an answer string: drop currency symbols, thousands commas
    and a leading +, and trim trailing fractional zeros ("7.50" -> "7.5",
    "7.0" -> "7"). Non-numeric strings just get whitespace-trimmed."""
    out = s.strip()
    out = out.replace(",", "").replace("$", "").replace("€", "").replace("£", "")
    if out.startswith("+"):
        out = out[1:]
    if _CANONICAL_NUM_RE.fullmatch(out):
        if "." in out:
            out = out.rstrip("0").rstrip(".")
        if out in ("", "-"):
            out = "0"
    return out


def _is_number(s: str) -> bool:
    return bool(_CANONICAL_NUM_RE.fullmatch(s))


def extract_answer(text: str) -> str:
    """Pull the final answer out of free-form model output.

    Cascade: the last [bracketed] group with numeric content wins; then the
    first number after the last "Answer:" marker (or, failing that, the rest
    of that line for word answers); then the last bare number anywhere.
    Returns "" when nothing matches.
    """
    for group in reversed(_BRACKET_RE.findall(text)):
        candidate = canonicalize(group)
        if _is_number(candidate):
            return candidate

    markers = list(_ANSWER_MARKER_RE.finditer(text))
    if markers:
        tail = text[markers[-1].end() :]
        m = _NUMBER_RE.search(tail)
        if m:
            return canonicalize(m.group())
        line = tail.strip().splitlines()[0].strip() if tail.strip() else ""
        if line:
            return canonicalize(line.rstrip(".!?"))

    numbers = _NUMBER_RE.findall(text)
    if numbers:
        return canonicalize(numbers[-1])
    return ""


def score(pred: str, gold: str) -> bool:
    """Compare a predicted answer against gold. Numeric pairs match within
    a relative tolerance of 1e-6 (absolute below 1); anything else must
    match exactly after canonicalization."""
    cp, cg = canonicalize(pred), canonicalize(gold)
    if _is_number(cp) and _is_number(cg):
        a, b = float(cp), float(cg)
        return abs(a - b) <= 1e-6 * max(1.0, abs(b))
    return cp == cg


class CompletionEngine(Protocol):
    def complete(self, system: str, user: str) -> str: ...


def evaluate(
    engine: CompletionEngine,
    prompt: Prompt,
    examples: Sequence[Example],
    step: int = 0,
) -> tuple[float, list[EvalRecord]]:
    """Run every example through the engine with the prompt as the system
    message and return (accuracy, per-example records)."""
    if not examples:
        raise EmptyBatch("cannot evaluate an empty example list")
    records: list[EvalRecord] = []
    hits = 0
    for ex in examples:
        response = engine.complete(system=prompt.text, user=ex.question)
        pred = extract_answer(response)
        ok = score(pred, ex.answer)
        hits += ok
        records.append(
            EvalRecord(
                step=step, example_id=ex.id, correct=ok, pred=pred, gold=ex.answer
            )
        )
    return hits / len(examples), records


def detect_convergence(
    series: Iterable[float], threshold: float, window: int = 3
) -> Optional[int]:
    """Index of the first element of the earliest run of `window`
    consecutive values at or above the threshold, or None."""
    if window <= 0:
        raise ValueError("window must be positive")
    run = 0
    for i, v in enumerate(series):
        run = run + 1 if v >= threshold else 0
        if run >= window:
            return i - window + 1
    return None
