"""Training-loop orchestration over a pluggable learner.

The loop per epoch: fine-tune on the current arm's subset, validate,
credit the reward, then let the patience logic decide whether to reselect.
The first num_arms epochs are assigned round-robin so every arm gets one
pull before UCB comparisons start.

Learners implement `fine_tune_epoch(image_ids)` and `validate()`. The
surrogate learner gives a deterministic accuracy response for desk-scale
runs; external learners attach over a line-delimited JSON protocol on the
child process's standard streams:

    {"cmd": "fine_tune", "ids": [...]}  ->  {"ok": true}
    {"cmd": "validate"}                 ->  {"accuracy": 0.87}
    {"cmd": "shutdown"}                 ->  (process exits)
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .bandit import ArmSpec, init_bandit, observe_epoch, select_loader, ucb_values, update_rewards
from .store import EpochRecord, append_run_log

AUC_PROPORTIONS = (1, 20, 50, 90, 100)

SURROGATE_BASE = 0.2
SURROGATE_CAP = 0.95
SURROGATE_RATE = 0.002
SURROGATE_NOISE = 0.0018


class LearnerError(Exception):
    pass


class Learner(Protocol):
    def fine_tune_epoch(self, image_ids: Sequence[str]) -> None: ...

    def validate(self) -> float: ...


class SurrogateLearner:
    """Deterministic accuracy-response model standing in for fine-tuning.

    Each fine-tune step adds the arm's quality to an accumulated mass m;
    accuracy follows base + (cap-base)*(1-exp(-rate*m)) plus seeded uniform
    noise in [-noise, +noise].
    """

    def __init__(
        self,
        arm_qualities: Sequence[float],
        arm_subsets: Sequence[Sequence[str]],
        base: float = SURROGATE_BASE,
        cap: float = SURROGATE_CAP,
        rate: float = SURROGATE_RATE,
        noise: float = SURROGATE_NOISE,
        seed: int = 0,
    ):
        if len(arm_qualities) != len(arm_subsets):
            raise ValueError("one quality per arm subset required")
        if any(not 0.0 <= q <= 1.0 for q in arm_qualities):
            raise ValueError("arm qualities must be in [0, 1]")
        if not base <= cap:
            raise ValueError("base accuracy must not exceed cap")
        self.qualities = [float(q) for q in arm_qualities]
        self.base = base
        self.cap = cap
        self.rate = rate
        self.noise = noise
        self._by_subset = {tuple(s): i for i, s in enumerate(arm_subsets)}
        if len(self._by_subset) != len(arm_subsets):
            raise ValueError("surrogate arms must train on distinct subsets")
        self._rng = np.random.default_rng(seed)
        self._mass = 0.0
        self._accuracy = base

    @classmethod
    def for_arms(
        cls, arms: Sequence[ArmSpec], qualities: Mapping[str, float], **kwargs
    ) -> "SurrogateLearner":
        try:
            per_arm = [qualities[a.name] for a in arms]
        except KeyError as exc:
            raise ValueError(f"no surrogate quality configured for arm {exc}") from exc
        return cls(per_arm, [a.image_ids for a in arms], **kwargs)

    def step(self, arm: int) -> float:
        """Advance one epoch on `arm` and return the new accuracy."""
        self._mass += self.qualities[arm]
        acc = self.base + (self.cap - self.base) * (1.0 - math.exp(-self.rate * self._mass))
        acc += self.noise * float(self._rng.uniform(-1.0, 1.0))
        self._accuracy = min(max(acc, 0.0), 1.0)
        return self._accuracy

    def fine_tune_epoch(self, image_ids: Sequence[str]) -> None:
        key = tuple(image_ids)
        if key not in self._by_subset:
            raise LearnerError("fine_tune_epoch called with an unknown arm subset")
        self.step(self._by_subset[key])

    def validate(self) -> float:
        return self._accuracy


def surrogate_step(learner: SurrogateLearner, arm: int) -> float:
    return learner.step(arm)


class ScriptedLearner:
    """Replays a fixed accuracy sequence, ignoring the subset trained on."""

    def __init__(self, accuracies: Sequence[float]):
        self._accuracies = list(accuracies)
        self._next = 0
        self._current = 0.0

    def fine_tune_epoch(self, image_ids: Sequence[str]) -> None:
        if self._next >= len(self._accuracies):
            raise LearnerError("scripted accuracy sequence exhausted")
        self._current = self._accuracies[self._next]
        self._next += 1

    def validate(self) -> float:
        return self._current


class ExternalLearner:
    """Drives a spawned child process over the JSON-lines protocol."""

    def __init__(self, command: Sequence[str], cwd: str | None = None):
        self._proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            cwd=cwd,
            text=True,
            bufsize=1,
        )

    def _call(self, payload: dict) -> dict:
        assert self._proc.stdin is not None and self._proc.stdout is not None
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise LearnerError(f"learner process not accepting commands: {exc}") from exc
        line = self._proc.stdout.readline()
        if not line:
            raise LearnerError("learner process closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise LearnerError(f"malformed learner response: {line!r}") from exc

    def fine_tune_epoch(self, image_ids: Sequence[str]) -> None:
        resp = self._call({"cmd": "fine_tune", "ids": list(image_ids)})
        if not resp.get("ok"):
            raise LearnerError(f"fine_tune rejected: {resp!r}")

    def validate(self) -> float:
        resp = self._call({"cmd": "validate"})
        try:
            acc = float(resp["accuracy"])
        except (KeyError, TypeError, ValueError) as exc:
            raise LearnerError(f"validate response missing accuracy: {resp!r}") from exc
        if not 0.0 <= acc <= 1.0:
            raise LearnerError(f"accuracy {acc} outside [0, 1]")
        return acc

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.write(json.dumps({"cmd": "shutdown"}) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ExternalLearner":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def run_training(
    arms: Sequence[ArmSpec],
    learner: Learner,
    total_epochs: int,
    patience: int,
    seed: int | None = None,
    log_path: Path | str | None = None,
    state_path: Path | str | None = None,
    reset_on_switch: bool = True,
) -> list[EpochRecord]:
    """Run the bandit training loop, appending each epoch to the run log.

    On learner failure the partially written log stays flushed and a
    LearnerError propagates.
    """
    if not arms:
        raise ValueError("need at least one arm")
    if total_epochs < 1:
        raise ValueError("total_epochs must be >= 1")
    state = init_bandit(len(arms), patience, seed, reset_on_switch=reset_on_switch)
    records: list[EpochRecord] = []
    for epoch in range(total_epochs):
        warmup = state.total_counts < state.num_arms
        if warmup:
            # Round-robin warmup assigns the epoch's arm without touching
            # current_arm: after warmup the loop resumes on the randomly
            # drawn initial arm (unless a reselection already moved it).
            arm = select_loader(state)
            values = None
        else:
            arm = state.current_arm
            values = ucb_values(state)
        try:
            learner.fine_tune_epoch(arms[arm].image_ids)
            accuracy = float(learner.validate())
        except LearnerError:
            raise
        except Exception as exc:
            raise LearnerError(f"learner failed at epoch {epoch}: {exc}") from exc
        state = update_rewards(state, arm, accuracy)
        state, _ = observe_epoch(state, accuracy)
        record = EpochRecord(
            epoch=epoch,
            arm_index=arm,
            val_accuracy=accuracy,
            counts=list(state.counts),
            rewards=list(state.rewards),
            ucb_values=values,
        )
        records.append(record)
        if log_path is not None:
            append_run_log(log_path, record)
    if state_path is not None:
        Path(state_path).write_text(state.to_json(), encoding="utf-8")
    return records


@dataclass
class ProportionReport:
    """Accuracy per dataset proportion and the area under that curve."""

    proportions: tuple[int, ...]
    accuracies: list[float]
    auc_raw: float
    auc_normalized: float


def auc_report(accuracies: Mapping[float | int | str, float]) -> ProportionReport:
    """Trapezoidal AUC over the {1, 20, 50, 90, 100}% accuracy curve.

    auc_raw is the plain integral over the proportion axis in [0, 1]
    units; auc_normalized divides by the 0.99 axis span so a constant
    accuracy maps to itself.
    """
    by_prop: dict[int, float] = {}
    for key, value in accuracies.items():
        by_prop[int(round(float(key)))] = float(value)
    missing = [p for p in AUC_PROPORTIONS if p not in by_prop]
    if missing:
        raise ValueError(f"missing proportions: {missing}")
    ys = [by_prop[p] for p in AUC_PROPORTIONS]
    if any(not 0.0 <= y <= 1.0 for y in ys):
        raise ValueError("accuracies must be in [0, 1]")
    xs = [p / 100.0 for p in AUC_PROPORTIONS]
    raw = sum(
        (xs[i + 1] - xs[i]) * (ys[i] + ys[i + 1]) / 2.0 for i in range(len(xs) - 1)
    )
    span = xs[-1] - xs[0]
    return ProportionReport(
        proportions=AUC_PROPORTIONS,
        accuracies=ys,
        auc_raw=raw,
        auc_normalized=raw / span,
    )
