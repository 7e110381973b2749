"""The base textual-gradient loop: forward, loss, backward, update.

One optimization step sends the prompt (the "variable") through four
stages: predictions on a batch, a textual loss enumerating per-example
verdicts, a reflection request whose answer acts as the gradient, and an
optimizer request that must return the improved variable between explicit
delimiters. Technique blocks are injected as extra instruction sections.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import DelimiterMissing, EmptyBatch, PreservedSentenceLost
from .evaluation import extract_answer, score
from .prompt import Prompt, SentenceSpan, merge_sentences, segment

VARIABLE_OPEN = "<VARIABLE>"
VARIABLE_CLOSE = "</VARIABLE>"
IMPROVED_OPEN = "<IMPROVED-VARIABLE>"
IMPROVED_CLOSE = "</IMPROVED-VARIABLE>"

_IMPROVED_RE = re.compile(
    re.escape(IMPROVED_OPEN) + r"(.*?)" + re.escape(IMPROVED_CLOSE), re.DOTALL
)

BACKWARD_SYSTEM = (
    "You are part of an optimization system that improves a text variable "
    "based on evaluation results. Analyze the evaluation and give concise, "
    "concrete feedback on how to improve the variable."
)

UPDATE_SYSTEM = (
    "You are part of an optimization system that improves a text variable. "
    "Rewrite the variable to address the feedback, and return the new "
    f"version between {IMPROVED_OPEN} and {IMPROVED_CLOSE} tags."
)

_DELIMITER_NUDGE = (
    "Your previous response did not contain a valid "
    f"{IMPROVED_OPEN}...{IMPROVED_CLOSE} block. You must return the improved "
    f"variable between {IMPROVED_OPEN} and {IMPROVED_CLOSE} tags."
)

_PRESERVED_NUDGE = (
    "Your previous response changed or removed sentences that were marked to "
    "remain unchanged. Keep every sentence listed in the dropout instruction "
    "exactly as it appears in the original variable."
)


@dataclass(frozen=True)
class LossRecord:
    x: str
    gold: str
    pred: str
    correct: bool
    raw_output: str


@dataclass(frozen=True)
class LossReport:
    records: tuple[LossRecord, ...]
    accuracy: float
    batch_index: int
    step: int

    def render(self) -> str:
        """Loss as text for the backward engine: one verdict per example."""
        lines = [
            f"The variable was evaluated on {len(self.records)} example(s); "
            f"accuracy {self.accuracy:.4f}."
        ]
        for i, rec in enumerate(self.records, start=1):
            verdict = "correct" if rec.correct else "incorrect"
            lines.append(
                f"Example {i}:\n"
                f"Input: {rec.x}\n"
                f"Model output: {rec.raw_output}\n"
                f"Extracted answer: {rec.pred}\n"
                f"Gold answer: {rec.gold}\n"
                f"Verdict: {verdict}"
            )
        return "\n\n".join(lines)


@dataclass(frozen=True)
class TextualGradient:
    feedback: str
    step: int
    source_batch: int
    loss_accuracy: float

    def __post_init__(self) -> None:
        if not self.feedback:
            raise ValueError("gradient feedback must be non-empty")


def forward(engine, prompt: Prompt, x: str) -> str:
    """One prediction: the prompt is the system message, x the user message."""
    return engine.complete(system=prompt.text, user=x, role="forward")


def compute_loss(
    pairs: Sequence[tuple[str, str, str]], batch_index: int = 0, step: int = 0
) -> LossReport:
    """Score (input, gold, raw_output) triples into a loss report."""
    if not pairs:
        raise EmptyBatch("cannot compute loss over an empty batch")
    records = []
    for x, gold, raw in pairs:
        pred = extract_answer(raw)
        records.append(
            LossRecord(x=x, gold=gold, pred=pred, correct=score(pred, gold), raw_output=raw)
        )
    accuracy = sum(r.correct for r in records) / len(records)
    return LossReport(
        records=tuple(records), accuracy=accuracy, batch_index=batch_index, step=step
    )


def build_backward_request(
    prompt: Prompt, loss: LossReport, extras: Sequence[str] = ()
) -> str:
    """Compose the reflection request; a pure function of its inputs."""
    sections = [
        "Here is the variable under optimization:\n"
        f"{VARIABLE_OPEN}{prompt.text}{VARIABLE_CLOSE}",
        "Here is the evaluation of the variable on the current batch:\n"
        + loss.render(),
    ]
    sections.extend(extras)
    sections.append(
        "Please reflect on the evaluation above and provide feedback on how "
        "to improve the variable."
    )
    return "\n\n".join(sections)


def backward(
    engine,
    prompt: Prompt,
    loss: LossReport,
    extras: Sequence[str] = (),
) -> TextualGradient:
    """Ask the backward engine for feedback; the reply is the gradient."""
    if loss.step != prompt.step:
        raise ValueError(
            f"loss report belongs to step {loss.step}, prompt is at step {prompt.step}"
        )
    request = build_backward_request(prompt, loss, extras)
    feedback = engine.complete(system=BACKWARD_SYSTEM, user=request, role="backward")
    return TextualGradient(
        feedback=feedback,
        step=prompt.step,
        source_batch=loss.batch_index,
        loss_accuracy=loss.accuracy,
    )


def build_update_request(
    prompt: Prompt, gradient: TextualGradient, extras: Sequence[str] = ()
) -> str:
    """Compose the optimizer request; a pure function of its inputs."""
    sections = [
        "Here is the variable under optimization:\n"
        f"{VARIABLE_OPEN}{prompt.text}{VARIABLE_CLOSE}",
        f"Here is the feedback on the variable:\n{gradient.feedback}",
    ]
    sections.extend(extras)
    sections.append(
        f"Please provide the improved variable between {IMPROVED_OPEN} and "
        f"{IMPROVED_CLOSE} tags. Keep every part of the variable that is not "
        "targeted by the feedback unchanged."
    )
    return "\n\n".join(sections)


def extract_improved(response: str) -> Optional[str]:
    """Text of the last non-empty improved-variable block, or None."""
    for match in reversed(_IMPROVED_RE.findall(response)):
        text = match.strip()
        if text:
            return text
    return None


def apply_update(
    engine,
    prompt: Prompt,
    gradient: TextualGradient,
    extras: Sequence[str] = (),
    preserved: Sequence[SentenceSpan] = (),
) -> Prompt:
    """Produce the next prompt from the optimizer engine.

    A response without the improved-variable delimiters, or one that drops
    a dropout-preserved sentence, gets one retry with the problem restated;
    a second failure raises and the caller skips the step. When preserved
    sentences are in play the candidate is rebuilt through the merge so the
    protected sentences survive verbatim.
    """
    if gradient.step != prompt.step:
        raise ValueError(
            f"gradient belongs to step {gradient.step}, prompt is at step {prompt.step}"
        )
    base_request = build_update_request(prompt, gradient, extras)
    request = base_request
    last_error: Exception = DelimiterMissing("optimizer response had no delimiters")
    for _ in range(2):
        response = engine.complete(system=UPDATE_SYSTEM, user=request, role="update")
        candidate = extract_improved(response)
        if candidate is None:
            last_error = DelimiterMissing(
                "optimizer response lacks improved-variable delimiters"
            )
            request = base_request + "\n\n" + _DELIMITER_NUDGE
            continue
        if preserved:
            try:
                merged = merge_sentences(list(preserved), segment(candidate))
            except PreservedSentenceLost as exc:
                last_error = exc
                request = base_request + "\n\n" + _PRESERVED_NUDGE
                continue
            candidate = "\n".join(merged)
        return prompt.child(candidate)
    raise last_error
