"""Concrete expert backends: chat-completion client, parsers and mocks.

The remote backend renders a decision or scoring prompt, posts it to a
chat-completion endpoint and parses the reply tolerantly; any network or
parse failure surfaces as ``None`` so the controller's fallback policy
keeps the run progressing. The mock backends are deterministic local
policies used for offline tests and mock-driven runs.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import requests

from .evolution import EvaluatedSolution, Population
from .experts import (
    ACTION_BY_ID,
    ACTIONS,
    CERTAIN,
    UNCERTAIN,
    ActionStats,
    EvalBudget,
    ExpertVerdict,
)

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-3.5-turbo-0125"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"

SYSTEM_MESSAGE = "You are a precise assistant. Follow the requested output format exactly."

_MODEL_PHRASES = {
    "GP": "Gaussian process regression",
    "RBF": "radial basis function interpolation",
    "PRS": "quadratic polynomial regression",
    "KNN": "k-nearest-neighbors regression",
}
_CRITERION_PHRASES = {
    "LCB": "lower confidence bound minimization",
    "EI": "expected improvement maximization",
    "Prescreening": "prescreening for the minimum predicted value",
    "LocalSearch": "local search over the surrogate",
    "L1Exploit": "top-level exploitation sampling",
    "L1Explore": "top-level exploration sampling",
}


# --- prompt rendering ---------------------------------------------------

def render_decision_prompt(stats: dict[int, ActionStats], budget: EvalBudget, t: int) -> str:
    """Render the decision-expert prompt for the current controller state.

    Deterministic text: an action catalogue, the per-action average score
    and selection frequency table, the evaluation budget and iteration
    counter, and the mandated one-line-per-action reply format.
    """
    catalogue = "\n".join(
        f"action {a.id}: {_MODEL_PHRASES[a.model]} with {_CRITERION_PHRASES[a.criterion]}"
        for a in ACTIONS
    )
    table = "\n".join(
        f"action {a.id}: S={stats[a.id].avg_score:.4f}, V={stats[a.id].freq:.4f}"
        for a in ACTIONS
    )
    return (
        "You are the decision expert of a surrogate-assisted evolutionary"
        " optimization system solving an expensive minimization problem."
        " Each iteration executes one or more actions; an action trains a"
        " surrogate model on the evaluated solutions and applies an infill"
        " sampling criterion to pick the next candidate for true"
        " evaluation.\n"
        "\n"
        "Available actions:\n"
        f"{catalogue}\n"
        "\n"
        "Performance so far (S = average score on a 0-10 scale, higher is"
        " better; V = selection frequency):\n"
        f"{table}\n"
        "\n"
        f"True evaluations used: {budget.used} of {budget.max_evals}."
        f" Completed iterations: {t}.\n"
        "\n"
        "Recommend the most promising actions for the next iteration (at"
        " most 8). Reflect on each recommendation: label it certain if you"
        " are confident it will improve the best solution, otherwise label"
        " it uncertain. Reply with one line per recommended action, in"
        " exactly this format and nothing else:\n"
        "action <id>: certain\n"
        "action <id>: uncertain\n"
    )


def render_scoring_prompt(n: int, population: Population, x_t: EvaluatedSolution) -> str:
    """Render the scoring-expert prompt grading a newly evaluated point."""
    summaries = "\n".join(
        f"solution {i + 1}: objective {member.value:.6g}"
        for i, member in enumerate(population)
    )
    return (
        "You are the scoring expert of a surrogate-assisted evolutionary"
        " optimization system solving an expensive minimization problem."
        " A new candidate has just been evaluated; grade the action that"
        " produced it by how the candidate compares with the current"
        " population.\n"
        "\n"
        f"The population holds {n} solutions with these objective values"
        " (lower is better):\n"
        f"{summaries}\n"
        "\n"
        f"New candidate: objective {x_t.value:.6g}.\n"
        "\n"
        "Reply with a single integer score from 0 (worse than every"
        " population member) to 10 (better than every member), in exactly"
        " this format and nothing else:\n"
        "score: <integer>\n"
    )


# --- reply parsing ------------------------------------------------------

# "uncertain" must precede "certain" in the alternation: the latter is a
# suffix of the former and would otherwise shadow it. The lookarounds keep
# digits inside larger numbers or decimals from matching while a
# sentence-final period ("action 3.") stays harmless.
_TOKEN = re.compile(
    r"(?<![-\d.])([1-8])(?!\d)(?!\.\d)|\b(uncertain|certain)\b", re.IGNORECASE
)
_NUMBER = re.compile(r"(?<![-\d.])(\d+(?:\.\d+)?)(?!\d)(?!\.\d)")

# ids further than this from their label are not considered adjacent
_PAIR_GAP = 60


def parse_decision_reply(text: Optional[str]) -> Optional[ExpertVerdict]:
    """Extract (action id, confidence label) pairs from a free-form reply.

    Scans for action ids 1..8 and certain/uncertain tokens, pairing each
    id with an immediately adjacent label in either order. Returns None
    when no pair is found; duplicates are preserved (the controller
    deduplicates on insertion).
    """
    if not text:
        return None
    tokens: list[tuple[int, str, Union[int, str]]] = []
    for m in _TOKEN.finditer(text):
        if m.group(1) is not None:
            tokens.append((m.start(), "id", int(m.group(1))))
        else:
            tokens.append((m.start(), "label", m.group(2).lower()))

    actions, labels = [], []
    i = 0
    while i < len(tokens) - 1:
        (pos_a, kind_a, val_a), (pos_b, kind_b, val_b) = tokens[i], tokens[i + 1]
        if {kind_a, kind_b} == {"id", "label"} and pos_b - pos_a <= _PAIR_GAP:
            action_id = val_a if kind_a == "id" else val_b
            label = val_a if kind_a == "label" else val_b
            actions.append(ACTION_BY_ID[action_id])
            labels.append(label)
            i += 2
        else:
            i += 1
    if not actions:
        return None
    return ExpertVerdict(actions=actions, labels=labels)


def parse_score_reply(text: Optional[str]) -> Optional[float]:
    """Extract the first number in [0, 10] from a free-form reply."""
    if not text:
        return None
    for m in _NUMBER.finditer(text):
        value = float(m.group(1))
        if 0.0 <= value <= 10.0:
            return value
    return None


# --- chat-completion client ---------------------------------------------

@dataclass
class ChatConfig:
    """Connection settings for the chat-completion backend.

    The API key is read from the environment variable named by
    ``api_key_env`` and is never stored in configuration files.
    """

    endpoint: str = DEFAULT_ENDPOINT
    model: str = DEFAULT_MODEL
    temperature: float = 0.0
    max_retries: int = 2
    timeout: float = 30.0
    api_key_env: str = DEFAULT_API_KEY_ENV

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


class ChatClient:
    """Synchronous chat-completion exchange with bounded retries.

    ``post`` is injectable for tests; the default is requests.post, which
    requires the configured API-key environment variable to be set. A
    failed exchange (network error, bad status, malformed body) is
    retried up to ``max_retries`` times and then reported as None so the
    caller's fallback policy can take over. Instances are meant to be
    owned by a single run; ``last_latency_ms`` tracks the most recent
    exchange only.
    """

    def __init__(self, config: Optional[ChatConfig] = None, post: Optional[Callable] = None):
        self.config = config or ChatConfig()
        self._api_key = os.environ.get(self.config.api_key_env)
        if post is None and not self._api_key:
            raise ValueError(
                f"environment variable {self.config.api_key_env} is not set; "
                "it must hold the chat API key"
            )
        self._post = post or requests.post
        self.last_latency_ms: float = 0.0

    def complete(self, prompt: str) -> Optional[str]:
        payload = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        start = time.monotonic()
        for attempt in range(self.config.max_retries + 1):
            try:
                response = self._post(
                    self.config.endpoint,
                    headers=headers,
                    json=payload,
                    timeout=self.config.timeout,
                )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                self.last_latency_ms = 1000.0 * (time.monotonic() - start)
                return str(content)
            except Exception:
                log.warning(
                    "chat exchange failed (attempt %d/%d)",
                    attempt + 1,
                    self.config.max_retries + 1,
                    exc_info=True,
                )
        self.last_latency_ms = 1000.0 * (time.monotonic() - start)
        return None


class TranscriptRecorder:
    """Appends one JSON object per expert exchange to a JSON-lines file."""

    def __init__(self, path):
        self.path = Path(path)

    def record(self, iteration: int, prompt: str, reply: Optional[str], parsed, latency_ms: float):
        entry = {
            "iteration": iteration,
            "prompt": prompt,
            "reply": reply,
            "parsed": parsed,
            "latency_ms": latency_ms,
        }
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")


# --- backends -----------------------------------------------------------

def percentile_score(values, value: float, score_max: float = 10.0) -> int:
    """Score a candidate by the fraction of values it strictly improves.

    round(score_max * fraction-worse), rounding halves up; the
    deterministic rule used by the mock scoring expert and as the
    fallback when the remote expert fails.
    """
    values = np.asarray(values, dtype=float)
    fraction_worse = np.count_nonzero(values > value) / values.size
    return int(np.floor(score_max * fraction_worse + 0.5))


class MockDecisionExpert:
    """Exploit-plus-explore local decision policy.

    Every call proposes two actions, both labeled certain: the highest
    average-score action (ties to the lowest id) and one uniform-random
    action. The random rider keeps evidence flowing to every action, so
    the argmax can migrate to whichever action actually grades well on
    the problem at hand; without it the first action to accumulate a
    high average wins the argmax forever and the portfolio degenerates
    to a single fixed action. The sibling
    :class:`CalibratedMockDecisionExpert` emits the same pair but with
    evidence-aware labels.
    """

    def decide(self, stats, budget, t, rng) -> ExpertVerdict:
        scores = np.array([stats[a.id].avg_score for a in ACTIONS])
        best = ACTIONS[int(np.argmax(scores))]
        explore = ACTIONS[rng.integers(len(ACTIONS))]
        return ExpertVerdict(actions=[best, explore], labels=[CERTAIN, CERTAIN])


class CalibratedMockDecisionExpert:
    """Mock decision policy whose confidence labels track evidence.

    Emits two entries: the highest-average-score action, labeled certain
    once it has been executed at least ``min_count`` times (uncertain
    before that), plus one uniform-random action always labeled
    uncertain. The label calibration makes certain/uncertain handling
    observable: dropping uncertain entries discards the exploration
    channel and the not-yet-established exploitation channel.
    """

    def __init__(self, min_count: int = 3):
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        self.min_count = min_count

    def decide(self, stats, budget, t, rng) -> ExpertVerdict:
        scores = np.array([stats[a.id].avg_score for a in ACTIONS])
        best = ACTIONS[int(np.argmax(scores))]
        best_label = CERTAIN if stats[best.id].count >= self.min_count else UNCERTAIN
        explore = ACTIONS[rng.integers(len(ACTIONS))]
        return ExpertVerdict(actions=[best, explore], labels=[best_label, UNCERTAIN])


class MockScoringExpert:
    """Percentile-rank scoring on the 0-10 scale."""

    def score(self, n: int, population: Population, x_t: EvaluatedSolution) -> float:
        return float(percentile_score(population.values(), x_t.value))


def _verdict_json(verdict: Optional[ExpertVerdict]):
    if verdict is None:
        return None
    return {"actions": [a.id for a in verdict.actions], "labels": list(verdict.labels)}


class LLMDecisionExpert:
    """Remote decision expert: render, exchange, parse."""

    def __init__(self, client: ChatClient, transcript: Optional[TranscriptRecorder] = None):
        self.client = client
        self.transcript = transcript

    def decide(self, stats, budget, t, rng) -> Optional[ExpertVerdict]:
        prompt = render_decision_prompt(stats, budget, t)
        reply = self.client.complete(prompt)
        verdict = parse_decision_reply(reply)
        if self.transcript is not None:
            self.transcript.record(t, prompt, reply, _verdict_json(verdict), self.client.last_latency_ms)
        return verdict


class LLMScoringExpert:
    """Remote scoring expert: render, exchange, parse."""

    def __init__(self, client: ChatClient, transcript: Optional[TranscriptRecorder] = None):
        self.client = client
        self.transcript = transcript
        self.iteration = 0

    def score(self, n: int, population: Population, x_t: EvaluatedSolution) -> Optional[float]:
        prompt = render_scoring_prompt(n, population, x_t)
        reply = self.client.complete(prompt)
        value = parse_score_reply(reply)
        if self.transcript is not None:
            self.transcript.record(self.iteration, prompt, reply, value, self.client.last_latency_ms)
        self.iteration += 1
        return value
