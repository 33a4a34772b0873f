"""
Multi-turn chain-of-thought templates: perception, prediction (three slots),
decision and planning, plus the ego-status text that opens a conversation.

Every text produced here is in canonical spacing (see tokenizer.vocab.join_tokens),
so encoding and decoding a conversation reproduces it exactly. Reasoning
responses end with the only "." they contain, which is how generation knows
a reasoning turn is over.
"""
import logging
import math
import re
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from tokenizer.conversation import Turn
from tokenizer.trajectory_text import format_number, quantize, serialize_trajectory

logger = logging.getLogger(__name__)

PERCEPTION_PROMPT = (
    "What are the important objects in the current scene? "
    "Those objects will be considered for the future reasoning and driving decision."
)
PREDICTION_PROMPT = (
    "What object should the ego vehicle notice {nth} when the ego vehicle is getting to the next possible location? "
    "What is the state of the object that is {nth} noticed by the ego vehicle, and what action should the ego vehicle take?"
)
DECISION_PROMPT = "Predict the behavior of the ego vehicle."
PLANNING_PROMPT = "Plan a safe, feasible 3-second trajectory of 6 waypoints."

ORDINALS = ("first", "second", "third")
N_TURNS = 6
PERCEPTION, DECISION, PLANNING = 0, 4, 5
PREDICTION = (1, 2, 3)

DIRECTIONS = ("forward", "left-turn", "right-turn")
SPEEDS = ("stop", "decelerate", "keep", "accelerate")
CAMERAS = ("CAM_FRONT", "CAM_FRONT_LEFT", "CAM_FRONT_RIGHT", "CAM_BACK")
OBJECT_CLASSES = ("car", "pedestrian", "red_light", "green_light")
OBJECT_STATES = (
    "stationary", "slowing down", "moving away", "red", "green",
    "crossing the road", "on the sidewalk",
)
OBJECT_ACTIONS = ("stop", "slow down", "keep going")
MAX_TAGS = 16

NO_OBJECTS = "There is no important object."
EMPTY_SLOT = "none."

_EGO_TEMPLATE = (
    "Ego status: velocity {v} m/s, yaw rate {w} rad/s, acceleration {a} m/s2, history {h}."
)
_NUM = r"(-?\d+\.\d{2})"
_EGO_RE = re.compile(
    rf"Ego status: velocity {_NUM} m/s, yaw rate {_NUM} rad/s, acceleration {_NUM} m/s2, "
    rf"history \({_NUM},{_NUM}\),\({_NUM},{_NUM}\),\({_NUM},{_NUM}\)\."
)
_DECISION_RE = re.compile(
    r"Direction is (" + "|".join(DIRECTIONS) + r"), speed is (" + "|".join(SPEEDS) + r")\."
)


class CotError(ValueError):
    pass


@dataclass(frozen=True)
class EgoStatus:
    velocity: float
    yaw_rate: float
    acceleration: float
    history: tuple[tuple[float, float], ...]  # 3 past positions, oldest first

    def __post_init__(self) -> None:
        values = [self.velocity, self.yaw_rate, self.acceleration, *np.ravel(self.history)]
        if len(self.history) != 3 or not all(math.isfinite(v) for v in values):
            raise CotError("ego status needs finite values and 3 history waypoints")

    def quantized(self) -> "EgoStatus":
        return EgoStatus(
            velocity=quantize(self.velocity),
            yaw_rate=quantize(self.yaw_rate),
            acceleration=quantize(self.acceleration),
            history=tuple((quantize(x), quantize(y)) for x, y in self.history),
        )

    def to_dict(self) -> dict:
        return {"v": self.velocity, "yaw_rate": self.yaw_rate, "a": self.acceleration,
                "history": [list(p) for p in self.history]}

    @classmethod
    def from_dict(cls, data: dict) -> "EgoStatus":
        return cls(velocity=data["v"], yaw_rate=data["yaw_rate"], acceleration=data["a"],
                   history=tuple((float(x), float(y)) for x, y in data["history"]))


@dataclass(frozen=True)
class Decision:
    direction: str
    speed: str

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS or self.speed not in SPEEDS:
            raise CotError(f"unknown decision {self.direction}/{self.speed}")


@dataclass(frozen=True)
class KeyObject:
    """An annotated object worth reasoning about, tagged <cK, CAMERA>."""

    index: int
    cls: str
    camera: str
    state: str
    action: str

    @property
    def tag(self) -> str:
        return f"<c{self.index + 1}, {self.camera}>"

    def to_dict(self) -> dict:
        return {"index": self.index, "class": self.cls, "camera": self.camera,
                "state": self.state, "action": self.action}

    @classmethod
    def from_dict(cls, data: dict) -> "KeyObject":
        return cls(index=data["index"], cls=data["class"], camera=data["camera"],
                   state=data["state"], action=data["action"])


class AnnotatedSample(Protocol):
    key_objects: Sequence[KeyObject]
    decision: Decision | None
    gt_trajectory: np.ndarray


@dataclass(frozen=True)
class CotOptions:
    """Which reasoning stages to keep and whether to ask them turn by turn."""

    multi_turn: bool = True
    perception: bool = True
    prediction: bool = True
    decision: bool = True

    def enabled_turns(self) -> list[int]:
        turns = []
        if self.perception:
            turns.append(PERCEPTION)
        if self.prediction:
            turns.extend(PREDICTION)
        if self.decision:
            turns.append(DECISION)
        turns.append(PLANNING)
        return turns


def camera_for(x: float, y: float) -> str:
    if x < 0:
        return "CAM_BACK"
    bearing = math.degrees(math.atan2(y, x))
    if bearing > 30:
        return "CAM_FRONT_LEFT"
    if bearing < -30:
        return "CAM_FRONT_RIGHT"
    return "CAM_FRONT"


def build_prompt_turns() -> list[str]:
    return [
        PERCEPTION_PROMPT,
        *(PREDICTION_PROMPT.format(nth=nth) for nth in ORDINALS),
        DECISION_PROMPT,
        PLANNING_PROMPT,
    ]


def format_ego_status(ego: EgoStatus) -> str:
    history = ",".join(f"({format_number(x)},{format_number(y)})" for x, y in ego.history)
    return _EGO_TEMPLATE.format(
        v=format_number(ego.velocity),
        w=format_number(ego.yaw_rate),
        a=format_number(ego.acceleration),
        h=history,
    )


def parse_ego_status(text: str) -> EgoStatus:
    match = _EGO_RE.search(text)
    if match is None:
        raise CotError("no ego status in text")
    v, w, a, *history = (float(g) + 0.0 for g in match.groups())
    return EgoStatus(velocity=v, yaw_rate=w, acceleration=a,
                     history=tuple(zip(history[0::2], history[1::2])))


def format_decision(decision: Decision) -> str:
    return f"Direction is {decision.direction}, speed is {decision.speed}."


def parse_decision(text: str) -> Decision | None:
    match = _DECISION_RE.search(text)
    return Decision(*match.groups()) if match else None


def perception_response(key_objects: Sequence[KeyObject]) -> str:
    if not key_objects:
        return NO_OBJECTS
    listed = ", ".join(f"{obj.tag} {obj.cls}" for obj in key_objects)
    return f"The important objects are {listed}."


def prediction_response(obj: KeyObject | None) -> str:
    if obj is None:
        return EMPTY_SLOT
    return f"{obj.tag} {obj.cls} is {obj.state}, the ego vehicle should {obj.action}."


def gt_responses(sample: AnnotatedSample) -> list[str]:
    if sample.decision is None:
        raise CotError("sample has no decision annotation")
    slots: list[KeyObject | None] = list(sample.key_objects[: len(ORDINALS)])
    slots += [None] * (len(ORDINALS) - len(slots))
    return [
        perception_response(sample.key_objects),
        *(prediction_response(obj) for obj in slots),
        format_decision(sample.decision),
        serialize_trajectory(sample.gt_trajectory),
    ]


def cot_turns(sample: AnnotatedSample) -> list[Turn]:
    return list(zip(build_prompt_turns(), gt_responses(sample)))


def assemble_turns(cot: Sequence[Turn], ego: EgoStatus, options: CotOptions = CotOptions()) -> list[Turn]:
    """
    The conversation actually fed to the model: the enabled stages in order,
    with the ego-status text in front of the first prompt. Single-turn mode
    asks every enabled prompt at once and answers them in one response.
    """
    if len(cot) != N_TURNS:
        raise CotError(f"expected {N_TURNS} CoT turns, got {len(cot)}")
    turns = [cot[i] for i in options.enabled_turns()]
    if not options.multi_turn:
        turns = [(" ".join(p for p, _ in turns), " ".join(r for _, r in turns))]
    first_prompt, first_response = turns[0]
    turns[0] = (f"{format_ego_status(ego)} {first_prompt}", first_response)
    return turns


def reasoning_rounds(turns: Sequence[Turn], options: CotOptions = CotOptions()) -> list[str]:
    """The reasoning answers in a conversation (every response but the plan)."""
    if options.multi_turn:
        return [response for _, response in turns[:-1]]
    response = turns[0][1]
    cut = response.find("<SOT>")
    reasoning = response[:cut].strip() if cut >= 0 else response
    return [reasoning] if reasoning else []


def template_corpus() -> list[str]:
    """Every word a conversation in the synthetic world can contain."""
    corpus = build_prompt_turns()
    corpus.append(format_ego_status(EgoStatus(0.0, 0.0, 0.0, ((0.0, 0.0),) * 3)))
    corpus += [NO_OBJECTS, EMPTY_SLOT]
    corpus += [format_decision(Decision(d, s)) for d in DIRECTIONS for s in SPEEDS]
    tags = [
        KeyObject(index=i, cls=OBJECT_CLASSES[i % len(OBJECT_CLASSES)], camera=CAMERAS[i % len(CAMERAS)],
                  state=OBJECT_STATES[i % len(OBJECT_STATES)], action=OBJECT_ACTIONS[i % len(OBJECT_ACTIONS)])
        for i in range(MAX_TAGS)
    ]
    corpus.append(perception_response(tags))
    corpus += [prediction_response(obj) for obj in tags]
    corpus += list(OBJECT_CLASSES) + list(CAMERAS) + list(OBJECT_STATES) + list(OBJECT_ACTIONS)
    corpus.append(serialize_trajectory(np.zeros((6, 2))))
    return corpus

