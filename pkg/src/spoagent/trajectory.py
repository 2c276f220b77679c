"""Rollout data model: turns, trajectories, groups and the JSONL run log."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

TURN_DELIMITER = "\n⸻\n"


@dataclass(frozen=True)
class Turn:
    """One decision step: the state the agent saw and the action it took.

    ``features`` holds the numeric state encoding used by the toy policy;
    it is ``None`` for turns produced by a text backend.
    """

    state_text: str
    action_tokens: tuple[int, ...]
    action_text: str
    feedback_text: str = ""
    features: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not self.state_text:
            raise ValueError("turn state_text must be non-empty")
        if len(self.action_tokens) == 0:
            raise ValueError("turn action_tokens must be non-empty")
        if not self.action_text:
            raise ValueError("turn action_text must be non-empty")
        object.__setattr__(self, "action_tokens", tuple(int(t) for t in self.action_tokens))
        if self.features is not None:
            object.__setattr__(self, "features", tuple(float(x) for x in self.features))


@dataclass(frozen=True)
class Trajectory:
    id: str
    prompt_id: str
    turns: tuple[Turn, ...]
    reward: float = 0.0
    finished: bool = True
    turn_cap: Optional[int] = None
    embedding: Optional[tuple[float, ...]] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        if len(self.turns) < 1:
            raise ValueError(f"trajectory {self.id} has no turns")
        if not math.isfinite(self.reward):
            raise ValueError(f"trajectory {self.id} reward is not finite: {self.reward}")
        if not self.finished and self.turn_cap is not None and len(self.turns) != self.turn_cap:
            raise ValueError(
                f"unfinished trajectory {self.id} has {len(self.turns)} turns, cap is {self.turn_cap}"
            )
        if self.embedding is not None:
            object.__setattr__(self, "embedding", tuple(float(x) for x in self.embedding))

    def __len__(self):
        return len(self.turns)

    def token_rewards(self) -> list[list[float]]:
        """Per-token view of the broadcast reward, one list per turn."""
        return [[self.reward] * len(t.action_tokens) for t in self.turns]

    def with_embedding(self, vec: Sequence[float]) -> "Trajectory":
        return replace(self, embedding=tuple(float(x) for x in vec))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prompt_id": self.prompt_id,
            "turns": [
                {
                    "state_text": t.state_text,
                    "action_tokens": list(t.action_tokens),
                    "action_text": t.action_text,
                    "feedback_text": t.feedback_text,
                }
                for t in self.turns
            ],
            "reward": self.reward,
            "finished": self.finished,
            "turn_cap": self.turn_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        turns = [
            Turn(
                state_text=t["state_text"],
                action_tokens=tuple(t["action_tokens"]),
                action_text=t["action_text"],
                feedback_text=t.get("feedback_text", ""),
            )
            for t in d["turns"]
        ]
        return cls(
            id=d["id"],
            prompt_id=d["prompt_id"],
            turns=tuple(turns),
            reward=float(d["reward"]),
            finished=bool(d["finished"]),
            turn_cap=d.get("turn_cap"),
        )


@dataclass(frozen=True)
class RolloutGroup:
    prompt_id: str
    trajectories: tuple[Trajectory, ...]
    group_size: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        if len(self.trajectories) < 1:
            raise ValueError("rollout group is empty")
        for t in self.trajectories:
            if t.prompt_id != self.prompt_id:
                raise ValueError(
                    f"trajectory {t.id} has prompt_id {t.prompt_id!r}, group is {self.prompt_id!r}"
                )
        if self.group_size is not None and len(self.trajectories) != self.group_size:
            raise ValueError(
                f"group has {len(self.trajectories)} trajectories, expected {self.group_size}"
            )

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.trajectories], dtype=np.float64)

    def with_rewards(self, rewards: Iterable[float]) -> "RolloutGroup":
        trajs = tuple(broadcast_reward(t, r) for t, r in zip(self.trajectories, rewards))
        return replace(self, trajectories=trajs)


def broadcast_reward(traj: Trajectory, reward: float) -> Trajectory:
    """Give the whole trajectory one scalar reward.

    Every token of every turn shares it; it is stored once on the trajectory.
    """
    reward = float(reward)
    if not math.isfinite(reward):
        raise ValueError(f"reward for trajectory {traj.id} is not finite: {reward}")
    if traj.reward == reward:
        return traj
    return replace(traj, reward=reward)


def render_trajectory_text(
    traj: Trajectory, include_feedback: bool = False, delimiter: str = TURN_DELIMITER
) -> str:
    """Canonical text of a trajectory, used as embedder input.

    By default only the agent's actions are included. With
    ``include_feedback`` each action is followed by the environment output
    it produced.
    """
    parts = []
    for t in traj.turns:
        parts.append(t.action_text)
        if include_feedback and t.feedback_text:
            parts.append(t.feedback_text)
    return delimiter.join(parts)


def write_jsonl(groups_or_trajs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in groups_or_trajs:
            trajs = item.trajectories if isinstance(item, RolloutGroup) else (item,)
            for t in trajs:
                fh.write(json.dumps(t.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]
