import pytest

from latentqa.data import BQA, EQA, MCQ, tokenize
from latentqa.prompts import prompt_input_tokens, render_prompt


def test_bqa_prompt():
    inp, out = render_prompt(BQA, "Steve Wozniak designed homes.", "He built computers.")
    assert inp.startswith("A claim to be verified is that Steve Wozniak designed homes.")
    assert inp == "A claim to be verified is that Steve Wozniak designed homes. We have following facts: He built computers."
    assert out.format(label="supported") == "The claim is thus supported."


def test_eqa_prompt():
    assert render_prompt(EQA, "Q?", "Z.") == ("Q? [SEP] Z.", "{y}")


def test_mcq_prompt():
    inp, out = render_prompt(MCQ, "Q?", "Z.", [("a", True), ("b", False), ("c", True)])
    assert inp == "Question: Q? [SEP] Z."
    assert out == "Answer: a (correct) [SEP] Answer: b (wrong) [SEP] Answer: c (correct)"
    assert out.count("Answer:") == 3


def test_mcq_requires_choices():
    with pytest.raises(ValueError):
        render_prompt(MCQ, "Q?", "Z.")


def test_prompt_tokens_match_rendered_text():
    q, sents = ("who", "?"), [("a", "b", "."), ("c", ".")]
    for task in (BQA, EQA):
        inp, _ = render_prompt(task, "who ?", "a b . c .")
        assert prompt_input_tokens(task, q, sents) == tokenize(inp)
