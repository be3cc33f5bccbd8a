"""Seq2seq prompt templates for the three answer forms."""

from __future__ import annotations

from typing import Sequence

from .data import BQA, EQA, MCQ, REFUTED, SUPPORTED, tokenize

BQA_INPUT = "A claim to be verified is that {x} We have following facts: {z}"
BQA_OUTPUT = "The claim is thus {label}."
MCQ_INPUT = "Question: {x} [SEP] {z}"
MCQ_CHOICE = "Answer: {y} ({flag})"
MCQ_JOIN = " [SEP] "
EQA_INPUT = "{x} [SEP] {z}"
EQA_OUTPUT = "{y}"


def render_prompt(task: str, question: str, rationale_text: str, choices=None):
    """Return ``(input_string, output_string)`` for one example.

    For BQA the output is a template with a ``{label}`` slot, for EQA a
    ``{y}`` slot. For MCQ ``choices`` is a list of ``(text, is_correct)``
    pairs and the output is fully rendered.
    """
    if task == BQA:
        return BQA_INPUT.format(x=question, z=rationale_text), BQA_OUTPUT
    if task == MCQ:
        if not choices:
            raise ValueError("MCQ prompts need answer choices")
        out = MCQ_JOIN.join(
            MCQ_CHOICE.format(y=text, flag="correct" if ok else "wrong") for text, ok in choices
        )
        return MCQ_INPUT.format(x=question, z=rationale_text), out
    if task == EQA:
        return EQA_INPUT.format(x=question, z=rationale_text), EQA_OUTPUT
    raise ValueError(f"unknown task {task!r}")


def bqa_label_output(label: str) -> str:
    return BQA_OUTPUT.format(label=label)


def mcq_choice_output(text: str, correct: bool) -> str:
    return MCQ_CHOICE.format(y=text, flag="correct" if correct else "wrong")


def template_tokens() -> list[str]:
    """Every token a rendered template can contribute besides x, z and y."""
    toks: list[str] = []
    for s in (
        BQA_INPUT.format(x="", z=""),
        bqa_label_output(SUPPORTED),
        bqa_label_output(REFUTED),
        MCQ_INPUT.format(x="", z=""),
        mcq_choice_output("", True),
        mcq_choice_output("", False),
        EQA_INPUT.format(x="", z=""),
    ):
        for t in tokenize(s):
            if t not in toks:
                toks.append(t)
    return toks


def prompt_input_tokens(task: str, question: Sequence[str], rationale: Sequence[Sequence[str]]) -> list[str]:
    """Tokenized prompt input for a question and an ordered list of rationale sentences."""
    x = " ".join(question)
    z = " ".join(" ".join(s) for s in rationale)
    choices = [("", False), ("", False)] if task == MCQ else None
    text, _ = render_prompt(task, x, z, choices)
    return tokenize(text)
