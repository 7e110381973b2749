import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlpo.errors import DelimiterMissing, EmptyBatch, PreservedSentenceLost
from dlpo.loop import (
    BACKWARD_SYSTEM,
    UPDATE_SYSTEM,
    apply_update,
    backward,
    build_backward_request,
    build_update_request,
    compute_loss,
    extract_improved,
    forward,
)
from dlpo.prompt import Prompt
from dlpo.techniques import tmnt_block


class SeqEngine:
    """Returns canned responses in order and records every request."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def complete(self, system, user, role="forward"):
        self.calls.append((system, user, role))
        return self.responses.pop(0)


class TestForward:
    def test_prompt_is_system_question_is_user(self):
        engine = SeqEngine(["Answer: 7"])
        p = Prompt.create("Solve carefully.")
        out = forward(engine, p, "What is 3+4?")
        assert out == "Answer: 7"
        assert engine.calls == [("Solve carefully.", "What is 3+4?", "forward")]

    def test_empty_input_still_sent(self):
        engine = SeqEngine(["ok"])
        forward(engine, Prompt.create("P."), "")
        assert engine.calls[0][1] == ""


class TestComputeLoss:
    def test_two_of_three(self):
        pairs = [
            ("q1", "7", "Answer: 7"),
            ("q2", "5", "Answer: 4"),
            ("q3", "12", "the result is [12]"),
        ]
        report = compute_loss(pairs, batch_index=1, step=3)
        assert report.accuracy == pytest.approx(2 / 3, abs=1e-9)
        assert [r.correct for r in report.records] == [True, False, True]
        assert (report.batch_index, report.step) == (1, 3)

    def test_all_correct(self):
        report = compute_loss([("q", "1", "[1]"), ("q", "2", "[2]")])
        assert report.accuracy == 1.0

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            compute_loss([])

    def test_render_enumerates_examples(self):
        report = compute_loss([("what is 2+2", "4", "Answer: 5")])
        text = report.render()
        assert "Input: what is 2+2" in text
        assert "Gold answer: 4" in text
        assert "Extracted answer: 5" in text
        assert "Verdict: incorrect" in text

    @given(st.lists(st.booleans(), min_size=1, max_size=12))
    @settings(max_examples=100)
    def test_accuracy_matches_recount(self, flags):
        pairs = [
            ("q", "10", f"Answer: {10 if ok else 11}") for ok in flags
        ]
        report = compute_loss(pairs)
        assert report.accuracy == sum(r.correct for r in report.records) / len(
            report.records
        )
        assert [r.correct for r in report.records] == flags


class TestBackward:
    def test_feedback_verbatim(self):
        engine = SeqEngine(["Add explicit verification steps."])
        p = Prompt.create("Solve.")
        loss = compute_loss([("q", "1", "[1]")], step=0)
        grad = backward(engine, p, loss)
        assert grad.feedback == "Add explicit verification steps."
        assert grad.step == 0
        assert grad.loss_accuracy == 1.0
        system, user, role = engine.calls[0]
        assert system == BACKWARD_SYSTEM
        assert role == "backward"
        assert "<VARIABLE>Solve.</VARIABLE>" in user

    def test_extras_included_verbatim(self):
        engine = SeqEngine(["fb"])
        p = Prompt.create("Solve.")
        loss = compute_loss([("q", "1", "[1]")])
        block = tmnt_block(["older feedback", "newer feedback"])
        backward(engine, p, loss, extras=[block])
        assert "<PAST-FEEDBACK>" in engine.calls[0][1]
        assert "newer feedback" in engine.calls[0][1]

    def test_no_extras_no_blocks(self):
        engine = SeqEngine(["fb"])
        loss = compute_loss([("q", "1", "[1]")])
        backward(engine, Prompt.create("Solve."), loss)
        assert "PAST-FEEDBACK" not in engine.calls[0][1]

    def test_step_mismatch_rejected(self):
        loss = compute_loss([("q", "1", "[1]")], step=4)
        with pytest.raises(ValueError):
            backward(SeqEngine(["fb"]), Prompt.create("Solve."), loss)

    def test_request_is_pure_function(self):
        p = Prompt.create("Solve.")
        loss = compute_loss([("q", "1", "[1]")])
        assert build_backward_request(p, loss, ["x"]) == build_backward_request(
            p, loss, ["x"]
        )
        grad_req = build_update_request
        from dlpo.loop import TextualGradient

        g = TextualGradient(feedback="f", step=0, source_batch=0, loss_accuracy=1.0)
        assert grad_req(p, g, ["x"]) == grad_req(p, g, ["x"])


class TestExtractImproved:
    def test_basic(self):
        assert extract_improved("<IMPROVED-VARIABLE>New text.</IMPROVED-VARIABLE>") == (
            "New text."
        )

    def test_multiline_and_whitespace(self):
        resp = "preamble\n<IMPROVED-VARIABLE>\nLine one.\nLine two.\n</IMPROVED-VARIABLE>\ndone"
        assert extract_improved(resp) == "Line one.\nLine two."

    def test_last_block_wins(self):
        resp = (
            "<IMPROVED-VARIABLE>draft</IMPROVED-VARIABLE> thinking "
            "<IMPROVED-VARIABLE>final</IMPROVED-VARIABLE>"
        )
        assert extract_improved(resp) == "final"

    def test_missing_or_empty(self):
        assert extract_improved("no tags here") is None
        assert extract_improved("<IMPROVED-VARIABLE>  </IMPROVED-VARIABLE>") is None


def make_gradient(prompt, text="Make it better."):
    from dlpo.loop import TextualGradient

    return TextualGradient(
        feedback=text, step=prompt.step, source_batch=0, loss_accuracy=0.5
    )


class TestApplyUpdate:
    def test_success_builds_child(self):
        p = Prompt.create("Old text.")
        engine = SeqEngine(["<IMPROVED-VARIABLE>New text.</IMPROVED-VARIABLE>"])
        child = apply_update(engine, p, make_gradient(p))
        assert child.text == "New text."
        assert child.step == 1
        assert child.parent_id == p.id
        system, user, role = engine.calls[0]
        assert system == UPDATE_SYSTEM
        assert role == "update"
        assert "<VARIABLE>Old text.</VARIABLE>" in user
        assert "Make it better." in user

    def test_extras_appear_in_request(self):
        p = Prompt.create("Old text.")
        engine = SeqEngine(["<IMPROVED-VARIABLE>New.</IMPROVED-VARIABLE>"])
        apply_update(engine, p, make_gradient(p), extras=["SPECIAL-BLOCK"])
        assert "SPECIAL-BLOCK" in engine.calls[0][1]

    def test_missing_delimiters_retried_once_then_raises(self):
        p = Prompt.create("Old text.")
        engine = SeqEngine(["no tags", "still no tags"])
        with pytest.raises(DelimiterMissing):
            apply_update(engine, p, make_gradient(p))
        assert len(engine.calls) == 2
        assert "did not contain a valid" in engine.calls[1][1]

    def test_recovers_on_retry(self):
        p = Prompt.create("Old text.")
        engine = SeqEngine(
            ["oops", "<IMPROVED-VARIABLE>Recovered.</IMPROVED-VARIABLE>"]
        )
        child = apply_update(engine, p, make_gradient(p))
        assert child.text == "Recovered."
        assert len(engine.calls) == 2

    def test_preserved_sentences_survive_verbatim(self):
        p = Prompt.create("Keep  this. Change this. Keep that.")
        preserved = [p.sentences[0], p.sentences[2]]
        engine = SeqEngine(
            ["<IMPROVED-VARIABLE>Keep this. Changed now. Keep that.</IMPROVED-VARIABLE>"]
        )
        child = apply_update(engine, p, make_gradient(p), preserved=preserved)
        assert [s.content for s in child.sentences] == [
            "Keep  this.",
            "Changed now.",
            "Keep that.",
        ]

    def test_dropout_violation_retried_then_raises(self):
        p = Prompt.create("Keep this. Change this.")
        preserved = [p.sentences[0]]
        engine = SeqEngine(
            [
                "<IMPROVED-VARIABLE>Everything replaced.</IMPROVED-VARIABLE>",
                "<IMPROVED-VARIABLE>Still replaced.</IMPROVED-VARIABLE>",
            ]
        )
        with pytest.raises(PreservedSentenceLost):
            apply_update(engine, p, make_gradient(p), preserved=preserved)
        assert len(engine.calls) == 2
        assert "marked to remain unchanged" in engine.calls[1][1]

    def test_dropout_violation_then_recovery(self):
        p = Prompt.create("Keep this. Change this.")
        preserved = [p.sentences[0]]
        engine = SeqEngine(
            [
                "<IMPROVED-VARIABLE>Gone.</IMPROVED-VARIABLE>",
                "<IMPROVED-VARIABLE>Keep this. Better now.</IMPROVED-VARIABLE>",
            ]
        )
        child = apply_update(engine, p, make_gradient(p), preserved=preserved)
        assert "Keep this." in child.text
        assert "Better now." in child.text

    def test_step_mismatch_rejected(self):
        p = Prompt.create("Old.")
        stale = make_gradient(p.child("Mid."))
        with pytest.raises(ValueError):
            apply_update(SeqEngine([]), p, stale)
