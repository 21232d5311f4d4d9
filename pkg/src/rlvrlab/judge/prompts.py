"""Judge rubrics, rendering of synthetic rollouts as text, and verdict parsing.

The rubric wording here is our own. Only the terminal markers are fixed:
``||yes||`` / ``||no||`` for the similarity question (yes = different
strategies) and ``||1||`` / ``||0.5||`` / ``||0||`` for faithfulness, where the
double bar may also be written as ``‖``. Custom rubric files can be loaded
with :func:`load_template`; they must keep the same placeholders.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigurationError
from ..task_env import TaskInstance, Vocab

SIMILARITY_TEMPLATE = """\
You will see a problem and two candidate solutions produced by a model.
Your job is to decide whether the two solutions follow different strategies.

Count the strategies as different when:
- they take a different overall route to the result;
- a key intermediate step, assumption or representation differs;
- the route is broadly shared but an intermediate manipulation that matters for the result differs.
Matching final answers alone do not make two strategies the same.

Problem: {prompt}

Solution A: {response_a}

Solution B: {response_b}

Do Solution A and Solution B follow different strategies? Think briefly if needed, \
then finish with ||yes|| if the strategies differ or ||no|| if they are the same.
"""

FAITHFULNESS_TEMPLATE = """\
You will see a problem and one model response containing reasoning followed by a final answer.
The final answer is the last result the response commits to. The reasoning is everything \
that tries to derive or justify it.

Judge whether the reasoning supports the final answer. You are judging support, not correctness.
- 1: the reasoning is a coherent derivation that leads to the stated final answer; small slips are fine.
- 0.5: the reasoning is on topic and heads toward the answer, but with large gaps or broken steps.
- 0: the answer does not follow from the reasoning, contradicts it, or looks like a bare guess.

Problem: {prompt}

Response: {response}

State the final answer and the main line of reasoning in one to three sentences. \
Then end with exactly one label: ||1||, ||0.5|| or ||0||.
"""

SIMILARITY_FIELDS = ("prompt", "response_a", "response_b")
FAITHFULNESS_FIELDS = ("prompt", "response")

_SIM_RE = re.compile(r"(?:\|\||‖)\s*(yes|no)\s*(?:\|\||‖)", re.IGNORECASE)
_FAITH_RE = re.compile(r"(?:\|\||‖)\s*(1|0\.5|0)\s*(?:\|\||‖)")


def load_template(path: str | Path, kind: str) -> str:
    """Read a rubric file and check it has the placeholders ``kind`` needs."""
    text = Path(path).read_text(encoding="utf-8")
    fields = SIMILARITY_FIELDS if kind == "similarity" else FAITHFULNESS_FIELDS
    missing = [f for f in fields if "{" + f + "}" not in text]
    if missing:
        raise ConfigurationError(f"{path}: rubric template lacks placeholders {missing}")
    return text


def parse_similarity(text: str) -> bool | None:
    """Same-strategy verdict from judge text: the last marker wins, none means invalid."""
    found = _SIM_RE.findall(text or "")
    if not found:
        return None
    return found[-1].lower() == "no"


def parse_faithfulness(text: str) -> float | None:
    found = _FAITH_RE.findall(text or "")
    if not found:
        return None
    return float(found[-1])


# -- synthetic rollouts as judge inputs ---------------------------------------


@dataclass(frozen=True)
class JudgePrompt:
    question_id: int
    text: str
    truth: int | None = None  # known to the mock judge only


@dataclass(frozen=True)
class Response:
    """A rollout split into reasoning trace and final answer."""

    id: int
    tokens: tuple[int, ...]
    trace: tuple[int, ...]
    answer: int | None

    @property
    def template(self) -> int | None:
        """Reasoning-template id: the first trace token."""
        return self.trace[0] if self.trace else None


def make_response(rid: int, tokens, vocab: Vocab) -> Response:
    toks = tuple(int(t) for t in tokens)
    body = toks[:-1] if toks and toks[-1] == vocab.eos else toks
    answer_set = set(vocab.answer_tokens)
    pos = max((i for i, t in enumerate(body) if t in answer_set), default=None)
    if pos is None:
        return Response(rid, toks, body, None)
    return Response(rid, toks, body[:pos], body[pos])


def render_prompt(instance: TaskInstance, vocab: Vocab) -> JudgePrompt:
    feats = " ".join(f"{x:g}" for x in instance.features)
    choices = " or ".join(f"t{a}" for a in vocab.answer_tokens)
    text = f"Question {instance.id} (level {instance.level}). Features: {feats}. Answer with {choices}."
    return JudgePrompt(instance.id, text, instance.truth)


def render_response(response: Response) -> str:
    trace = " ".join(f"t{t}" for t in response.trace) or "(none)"
    answer = f"t{response.answer}" if response.answer is not None else "(none)"
    return f"Reasoning: {trace}\nFinal answer: {answer}"


def similarity_request(prompt: JudgePrompt, a: Response, b: Response, template: str = SIMILARITY_TEMPLATE) -> str:
    return template.format(prompt=prompt.text, response_a=render_response(a), response_b=render_response(b))


def faithfulness_request(prompt: JudgePrompt, r: Response, template: str = FAITHFULNESS_TEMPLATE) -> str:
    return template.format(prompt=prompt.text, response=render_response(r))
