"""UCB arm selection with round-robin warmup and patience-gated switching.

Each arm is a ranked training-data subset; rewards are per-epoch validation
accuracies. UCB value per arm: rewards/(counts+eps) + beta*sqrt(ln(total)/
(counts+eps)) with eps=1e-5, beta=2. Until every arm has been tried once,
selection is round-robin. By default the no-improvement counter resets
after a switch so each new arm gets a full patience window; literal mode
(reset_on_switch=False) keeps the counter running, which reselects every
epoch once patience is first exceeded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

UCB_EPSILON = 1e-5
UCB_BETA = 2.0


@dataclass(frozen=True)
class ArmSpec:
    """A named arm: the ordered top-M image ids this arm trains on."""

    name: str
    image_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.image_ids:
            raise ValueError(f"arm {self.name!r} has an empty image list")


@dataclass(frozen=True)
class BanditState:
    num_arms: int
    rewards: tuple[float, ...]
    counts: tuple[int, ...]
    total_counts: int
    patience: int
    num_epochs_without_improvement: int
    best_val_accuracy: float
    current_arm: int
    epsilon: float = UCB_EPSILON
    beta: float = UCB_BETA
    reset_on_switch: bool = True

    def __post_init__(self) -> None:
        if self.num_arms < 1:
            raise ValueError("need at least one arm")
        if len(self.rewards) != self.num_arms or len(self.counts) != self.num_arms:
            raise ValueError("rewards/counts length must equal num_arms")
        if sum(self.counts) != self.total_counts:
            raise ValueError("counts do not sum to total_counts")
        if not 0 <= self.current_arm < self.num_arms:
            raise ValueError(f"current_arm {self.current_arm} out of range")

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_arms": self.num_arms,
                "rewards": list(self.rewards),
                "counts": list(self.counts),
                "total_counts": self.total_counts,
                "patience": self.patience,
                "num_epochs_without_improvement": self.num_epochs_without_improvement,
                "best_val_accuracy": self.best_val_accuracy,
                "current_arm": self.current_arm,
                "epsilon": self.epsilon,
                "beta": self.beta,
                "reset_on_switch": self.reset_on_switch,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "BanditState":
        d = json.loads(text)
        return cls(
            num_arms=int(d["num_arms"]),
            rewards=tuple(float(r) for r in d["rewards"]),
            counts=tuple(int(c) for c in d["counts"]),
            total_counts=int(d["total_counts"]),
            patience=int(d["patience"]),
            num_epochs_without_improvement=int(d["num_epochs_without_improvement"]),
            best_val_accuracy=float(d["best_val_accuracy"]),
            current_arm=int(d["current_arm"]),
            epsilon=float(d["epsilon"]),
            beta=float(d["beta"]),
            reset_on_switch=bool(d["reset_on_switch"]),
        )


def init_bandit(
    num_arms: int,
    patience: int,
    seed: int | None = None,
    reset_on_switch: bool = True,
) -> BanditState:
    """Zeroed state with a uniformly random (seeded) initial arm."""
    if num_arms < 1:
        raise ValueError("need at least one arm")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    initial = int(np.random.default_rng(seed).integers(num_arms))
    return BanditState(
        num_arms=num_arms,
        rewards=(0.0,) * num_arms,
        counts=(0,) * num_arms,
        total_counts=0,
        patience=patience,
        num_epochs_without_improvement=0,
        best_val_accuracy=0.0,
        current_arm=initial,
        reset_on_switch=reset_on_switch,
    )


def ucb_values(state: BanditState) -> list[float]:
    """Exploitation mean plus exploration bonus per arm.

    Only meaningful once total_counts >= num_arms (ln of the total is
    nonnegative from then on).
    """
    log_total = math.log(state.total_counts)
    return [
        state.rewards[i] / (state.counts[i] + state.epsilon)
        + state.beta * math.sqrt(log_total / (state.counts[i] + state.epsilon))
        for i in range(state.num_arms)
    ]


def select_loader(state: BanditState) -> int:
    """Next arm: round-robin until each arm was tried, then UCB argmax.

    Pure; ties go to the lowest index.
    """
    if state.total_counts < state.num_arms:
        return state.total_counts
    values = ucb_values(state)
    return int(np.argmax(values))


def update_rewards(state: BanditState, arm: int, val_accuracy: float) -> BanditState:
    """Credit one epoch's validation accuracy to `arm`."""
    if not 0 <= arm < state.num_arms:
        raise ValueError(f"arm {arm} out of range")
    if not 0.0 <= val_accuracy <= 1.0:
        raise ValueError(f"val_accuracy {val_accuracy} outside [0, 1]")
    rewards = list(state.rewards)
    counts = list(state.counts)
    rewards[arm] += val_accuracy
    counts[arm] += 1
    return replace(
        state,
        rewards=tuple(rewards),
        counts=tuple(counts),
        total_counts=state.total_counts + 1,
    )


def observe_epoch(state: BanditState, val_accuracy: float) -> tuple[BanditState, bool]:
    """Track improvement; past patience, reselect the current arm via UCB.

    Returns (new state, reselected). A reselection may land on the same
    arm. Call after update_rewards for the epoch.
    """
    if val_accuracy > state.best_val_accuracy:
        state = replace(
            state, best_val_accuracy=val_accuracy, num_epochs_without_improvement=0
        )
        return state, False
    counter = state.num_epochs_without_improvement + 1
    if counter > state.patience:
        new_arm = select_loader(state)
        state = replace(
            state,
            current_arm=new_arm,
            num_epochs_without_improvement=0 if state.reset_on_switch else counter,
        )
        return state, True
    return replace(state, num_epochs_without_improvement=counter), False
