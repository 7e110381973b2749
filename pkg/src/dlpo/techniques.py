"""The seven optimization techniques as composable building blocks.

Each technique contributes one of three things to a run: an instruction
block injected into the backward/update request, an acceptance gate over
candidate prompts, or bookkeeping over the prompt history. Everything here
is deterministic given the run RNG, so technique behavior is testable
offline, without a model in the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .errors import HistoryTooSmall
from .prompt import Prompt, SentenceSpan, diff
from .rng import PortableRng

TLR_TEMPLATE = """You need to update the original variable on a sentence level, and the number of updates (including adding sentence, deleting sentence, and modifying sentence) should be limited to a specific quantity (which we call the 'learning rate').

If the learning rate is: 4, here's an example:

Initial:

<VARIABLE>

As a Math Calculator, please solve:

Required Steps:

1. Identify problem type

2. Show calculation steps

Output Format:

- Process:

- Final Result:

- Verification:

</VARIABLE>

Modified Version with exactly 4 changes:

<IMPROVED-VARIABLE>

As a reasoning Engine, please solve: [modifying sentence]

Required Steps:

1. Identify problem type

2. Show calculation steps

3. Analyze complexity [adding sentence]

4. Assess stability [adding sentence]

Output Format:

- Process:

- Final Result: [deleting sentence 'Verification:']

</IMPROVED-VARIABLE>

Conclusion:

1(modify) + 2(add) + 1(delete) = 4.
Your learning rate is: {r}. For each optimize step, please make {r} update(s) to the original sentences and keep the other unchanged."""

TDO_TEMPLATE = (
    "We have introduced a dropout mechanism. The <DROPOUT>'{sentences}'</DROPOUT> "
    "in the original variable need to remain unchanged for this optimize step. "
    "You should focus on altering the other sentences."
)

EXPLORE_TEMPLATE = (
    "In order to break away from convention, discover more creative solutions, "
    "and explore limitless possibilities, please boldly unleash your imagination "
    "based on feedback and make transformative modifications to the previous "
    "variables. Do not be confined by existing forms; courageously break the "
    "mold and experiment with entirely new combinations and ideas, as this may "
    "spark unexpected and groundbreaking outcomes."
)

TMNT_TEMPLATE = """Here is the historical feedback on this variable:
<PAST-FEEDBACK>{history}</PAST-FEEDBACK>
Please analyze the main trends and patterns in the feedback across different iterations. If the feedback consistently points to similar issues or suggests insufficient modifications, it indicates that the changes made to the variable are not substantial enough. The later history feedback will be more accurate and relevant.
In such cases, please propose more significant and impactful adjustments to the variable to better address the feedback and improve its performance."""

TCL_CONTRAST_TEMPLATE = (
    "You can learn valuable insights by comparing the good and bad variables "
    "from past data. On the training set, the better-performing variables are "
    "<Positive-VAR>{positives}</Positive-VAR>, while the poorer-performing "
    "variables are <Negative-VAR>{negatives}</Negative-VAR>. To improve your "
    "variable, focus on adopting the unique features that contribute to the "
    "success of the better variables and eliminate the unique features "
    "associated with the poorer variables. This approach will help enhance "
    "performance and avoid repeating past mistakes."
)

# The doubled "<<" before Positive-VAR is intentional; it reproduces the
# source instruction text exactly.
TCL_POSITIVE_TEMPLATE = (
    "You can gain valuable insights by analyzing high-performing variables "
    "from historical data. On the training set, the top-performing variables "
    "are <<Positive-VAR>{positives}</Positive-VAR>."
)

TREGU_L2_TEMPLATE = (
    "Please simplify the overly complex and lengthy sentences in the variable. "
    "Ensure the output is concise, easy to understand, and suitable for a "
    "general audience."
)

TREGU_L1_TEMPLATE = (
    "If you are certain that a particular sentence in the variable has no "
    "impact on the overall meaning or purpose or has a negative effect, please "
    "delete that sentence. However, if you believe that all sentences are "
    "useful and contribute to the overall meaning, then retain all sentences. "
    "Ensure that the final variable maintains clarity, coherence, and "
    "relevance."
)


# --- Textual learning rate -------------------------------------------------


def tlr_block(r: int) -> str:
    """Instruction limiting one step to r sentence-level update units."""
    if r < 1:
        raise ValueError("learning rate must be at least 1")
    return TLR_TEMPLATE.format(r=r)


class TlrMode(Enum):
    INSTRUCTION_ONLY = "instruction_only"
    HARD_REJECT = "hard_reject"


@dataclass(frozen=True)
class TlrDecision:
    accepted: bool
    unit_count: int
    limit: int
    mode: TlrMode

    @property
    def overage(self) -> int:
        return max(0, self.unit_count - self.limit)


def enforce_tlr(old: Prompt, candidate: Prompt, r: int, mode: TlrMode) -> TlrDecision:
    """Measure a candidate against the learning-rate budget.

    InstructionOnly trusts the instruction and only measures; HardReject
    refuses candidates whose diff exceeds r update units (boundary
    inclusive: exactly r units passes).
    """
    units = diff(old, candidate).unit_count
    accepted = mode is TlrMode.INSTRUCTION_ONLY or units <= r
    return TlrDecision(accepted=accepted, unit_count=units, limit=r, mode=mode)


# --- Textual dropout -------------------------------------------------------


def tdo_count(p: float, s: int) -> int:
    """K = ceil(p*S), computed exactly.

    p is taken at its actual binary floating-point value and the product is
    formed in rational arithmetic, so the ceiling never suffers from
    intermediate rounding.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("dropout rate must lie in [0, 1]")
    return math.ceil(Fraction(p) * s)


def tdo_select(
    prompt: Prompt, p: float, rng: PortableRng
) -> tuple[list[SentenceSpan], str]:
    """Pick K = ceil(p*S) sentences to freeze and render the instruction.

    Selection is uniform without replacement; the preserved list comes back
    in original text order.
    """
    s = prompt.sentence_count
    if s < 1:
        raise ValueError("prompt has no sentences to preserve")
    k = tdo_count(p, s)
    chosen = sorted(rng.sample_indices(s, k))
    preserved = [prompt.sentences[i] for i in chosen]
    joined = " ".join(sp.content for sp in preserved)
    return preserved, TDO_TEMPLATE.format(sentences=joined)


# --- Textual simulated annealing -------------------------------------------


@dataclass(frozen=True)
class AnnealerState:
    """Cooling schedule state. Temperature is derived from the step count
    so it equals initial_t * alpha^k exactly, with no accumulated drift."""

    initial_t: float
    cooling_rate: float
    steps: int = 0

    def __post_init__(self) -> None:
        if self.initial_t <= 0:
            raise ValueError("initial temperature must be positive")
        if not 0.0 < self.cooling_rate <= 1.0:
            raise ValueError("cooling rate must lie in (0, 1]")
        if self.steps < 0:
            raise ValueError("step count cannot be negative")

    @property
    def temperature(self) -> float:
        return self.initial_t * self.cooling_rate**self.steps

    def getstate(self) -> dict:
        return {
            "initial_t": self.initial_t,
            "cooling_rate": self.cooling_rate,
            "steps": self.steps,
        }

    @staticmethod
    def fromstate(state: dict) -> "AnnealerState":
        return AnnealerState(
            initial_t=state["initial_t"],
            cooling_rate=state["cooling_rate"],
            steps=state["steps"],
        )


class TsaOutcome(Enum):
    ACCEPT = "accept"
    REJECT = "reject"


def acceptance_probability(delta_e: float, temperature: float) -> float:
    """P = exp(dE/T) for dE < 0; 1 otherwise."""
    if delta_e >= 0:
        return 1.0
    return math.exp(delta_e / temperature)


def tsa_decide(
    state: AnnealerState, e_old: float, e_new: float, rng: PortableRng
) -> TsaOutcome:
    """Metropolis-style acceptance on train accuracy.

    Improvements (dE >= 0) accept without touching the RNG; degradations
    consume exactly one uniform draw and accept iff r < exp(dE/T). The
    fixed draw count keeps replayed runs aligned with recorded ones.
    """
    delta = e_new - e_old
    if delta >= 0:
        return TsaOutcome.ACCEPT
    p = acceptance_probability(delta, state.temperature)
    return TsaOutcome.ACCEPT if rng.random() < p else TsaOutcome.REJECT


def tsa_cool(state: AnnealerState) -> AnnealerState:
    """One cooling step: T <- alpha * T."""
    return replace(state, steps=state.steps + 1)


# --- Textual learning rate decay -------------------------------------------


@dataclass
class LrSchedule:
    current_r: int
    fine_threshold: int = 4
    explore_threshold: int = 10
    decay_enabled: bool = True

    def __post_init__(self) -> None:
        if self.current_r < 0:
            raise ValueError("learning rate cannot be negative")

    def getstate(self) -> dict:
        return {
            "current_r": self.current_r,
            "fine_threshold": self.fine_threshold,
            "explore_threshold": self.explore_threshold,
            "decay_enabled": self.decay_enabled,
        }

    @staticmethod
    def fromstate(state: dict) -> "LrSchedule":
        return LrSchedule(**state)


class BlockKind(Enum):
    FINE = "fine"
    EXPLORE = "explore"


def tlrd_step(schedule: LrSchedule) -> tuple[int, Optional[BlockKind], Optional[str]]:
    """Decay the learning rate by one (floored at 1) and pick the block.

    Large rates (above the explore threshold) get the bold-exploration
    text; small rates (at or below the fine threshold) get the standard
    learning-rate instruction; the band in between emits nothing.
    """
    if not schedule.decay_enabled:
        raise ValueError("tlrd_step requires decay_enabled")
    new_r = max(schedule.current_r - 1, 1)
    schedule.current_r = new_r
    if new_r > schedule.explore_threshold:
        return new_r, BlockKind.EXPLORE, EXPLORE_TEMPLATE
    if new_r <= schedule.fine_threshold:
        return new_r, BlockKind.FINE, tlr_block(new_r)
    return new_r, None, None


# --- Textual momentum ------------------------------------------------------

TMNT_WINDOW = 3


def tmnt_block(history_feedback: Sequence[str]) -> str:
    """Render the past-feedback block from the last <=3 gradient texts.

    Feedback stays in chronological order; the instruction itself tells the
    optimizer to weight later entries more. No numeric decay factor appears
    in the text.
    """
    if not history_feedback:
        raise ValueError("momentum block needs at least one past feedback")
    window = list(history_feedback)[-TMNT_WINDOW:]
    return TMNT_TEMPLATE.format(history="\n".join(window))


# --- Textual contrastive learning ------------------------------------------


@dataclass(frozen=True)
class HistoryEntry:
    prompt: Prompt
    train_energy: float
    accepted: bool
    step: int


@dataclass(frozen=True)
class ContrastSample:
    positives: tuple[HistoryEntry, ...]
    negatives: tuple[HistoryEntry, ...]
    margin: float


def tcl_partition(
    history: Sequence[HistoryEntry],
) -> tuple[list[HistoryEntry], list[HistoryEntry]]:
    """Split history into positive (higher-energy) and negative halves.

    Entries are ranked by train energy descending with earlier steps first
    on ties; an odd count puts the extra entry with the positives.
    """
    if len(history) < 2:
        raise HistoryTooSmall(
            f"contrastive learning needs at least 2 history entries, got {len(history)}"
        )
    ranked = sorted(history, key=lambda h: (-h.train_energy, h.step))
    cut = (len(ranked) + 1) // 2
    return ranked[:cut], ranked[cut:]


def positive_weights(positives: Sequence[HistoryEntry]) -> list[float]:
    """Rank-linear weights: the best positive gets |P|, the worst gets 1."""
    order = sorted(
        range(len(positives)),
        key=lambda i: (-positives[i].train_energy, positives[i].step),
    )
    weights = [0.0] * len(positives)
    for rank, i in enumerate(order):
        weights[i] = float(len(positives) - rank)
    return weights


def negative_weights(negatives: Sequence[HistoryEntry]) -> list[float]:
    """Recency-linear weights: the most recent negative gets |N|."""
    order = sorted(range(len(negatives)), key=lambda i: negatives[i].step)
    weights = [0.0] * len(negatives)
    for pos, i in enumerate(order):
        weights[i] = float(pos + 1)
    return weights


def _weighted_sample(
    entries: Sequence[HistoryEntry],
    weights: Sequence[float],
    k: int,
    rng: PortableRng,
) -> list[HistoryEntry]:
    remaining = list(weights)
    picked: list[HistoryEntry] = []
    for _ in range(k):
        idx = rng.weighted_choice(remaining)
        picked.append(entries[idx])
        remaining[idx] = 0.0
    return picked


def tcl_sample(
    positives: Sequence[HistoryEntry],
    negatives: Sequence[HistoryEntry],
    margin: float,
    rng: PortableRng,
) -> tuple[ContrastSample, str]:
    """Draw up to two positives and two negatives and build the block.

    Negatives whose gap to the best sampled positive falls below the margin
    are dropped; with no valid negative left, the block degrades to the
    positive-only form. RNG consumption is fixed by the pool sizes alone,
    so the draw sequence is reproducible regardless of margin outcomes.
    """
    if not positives:
        raise ValueError("contrastive sampling needs at least one positive")
    picked_pos = _weighted_sample(
        positives, positive_weights(positives), min(2, len(positives)), rng
    )
    picked_neg = _weighted_sample(
        negatives, negative_weights(negatives), min(2, len(negatives)), rng
    )
    best = max(p.train_energy for p in picked_pos)
    valid_neg = [n for n in picked_neg if best - n.train_energy >= margin]
    sample = ContrastSample(
        positives=tuple(picked_pos), negatives=tuple(valid_neg), margin=margin
    )
    pos_text = "\n".join(p.prompt.text for p in picked_pos)
    if valid_neg:
        neg_text = "\n".join(n.prompt.text for n in valid_neg)
        block = TCL_CONTRAST_TEMPLATE.format(positives=pos_text, negatives=neg_text)
    else:
        block = TCL_POSITIVE_TEMPLATE.format(positives=pos_text)
    return sample, block


# --- Textual regularization -------------------------------------------------


def tregu_blocks() -> tuple[str, str]:
    """The (L2 simplification, L1 sparsity) instruction pair."""
    return TREGU_L2_TEMPLATE, TREGU_L1_TEMPLATE
