"""
Synthetic driving micro-world.

Every scene is generated at two timestamps that share a layout but call for
different decisions. Decisions follow a fixed rule table:

    scenario            timestamp A                         timestamp B
    ------------------  ----------------------------------  ----------------------------------
    cruise              forward / keep                      forward / accelerate
    stopped_lead        lead 16-24 m ahead: decelerate      lead within 12 m: stop
    decelerating_lead   slower lead: decelerate             lead pulling away: keep
    signal              red light within 20 m: stop         green light: keep
                        (red beyond 20 m: decelerate)
    pedestrian          pedestrian crossing within 12 m:    pedestrian on the sidewalk: keep
                        stop (beyond 12 m: decelerate)
    turn                approaching: forward / decelerate   left-turn or right-turn / keep

Ground-truth trajectories are rolled out from the decision's kinematics
(keep 0, accelerate +1.0, decelerate -1.5 m/s2, stop brakes to rest before
the obstacle, turns at 0.3 rad/s) and must clear every object under the
planning collision checker; a layout that fails is redrawn.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from cot.prompts import Decision, EgoStatus, KeyObject, camera_for, cot_turns
from planeval.geometry import EGO_DIMS, ObjectBox
from planeval.metrics import N_WAYPOINTS, WAYPOINT_DT, waypoint_collisions
from tokenizer.conversation import Turn
from tokenizer.trajectory_text import quantize, quantize_trajectory

logger = logging.getLogger(__name__)

SCENARIOS = ("cruise", "stopped_lead", "decelerating_lead", "signal", "pedestrian", "turn")
SPEED_ACCEL = {"accelerate": 1.0, "keep": 0.0, "decelerate": -1.5}
TURN_RATE = 0.3
STOP_DISTANCE_M = 12.0
RED_STOP_DISTANCE_M = 20.0
MARGIN_M = 1.0
MAX_ATTEMPTS = 50

CAR_DIMS = (4.5, 1.9)
PEDESTRIAN_DIMS = (0.6, 0.6)
LIGHT_DIMS = (0.5, 0.5)
EGO_FRONT = EGO_DIMS[0] / 2


class WorldGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSample:
    scene_id: str
    timestamp_index: int
    scenario: str
    objects: tuple[ObjectBox, ...]
    ego_status: EgoStatus
    key_objects: tuple[KeyObject, ...]
    decision: Decision
    gt_trajectory: np.ndarray
    cot: tuple[Turn, ...] = ()

    @property
    def sample_id(self) -> str:
        return f"{self.scene_id}/{self.timestamp_index}"

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "t": self.timestamp_index,
            "scenario": self.scenario,
            "ego_status": self.ego_status.to_dict(),
            "objects": [obj.to_dict() for obj in self.objects],
            "key_objects": [obj.to_dict() for obj in self.key_objects],
            "decision": {"direction": self.decision.direction, "speed": self.decision.speed},
            "cot": [list(turn) for turn in self.cot],
            "gt_traj": self.gt_trajectory.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSample":
        return cls(
            scene_id=data["scene_id"],
            timestamp_index=data["t"],
            scenario=data["scenario"],
            objects=tuple(ObjectBox.from_dict(o) for o in data["objects"]),
            ego_status=EgoStatus.from_dict(data["ego_status"]),
            key_objects=tuple(KeyObject.from_dict(o) for o in data["key_objects"]),
            decision=Decision(**data["decision"]),
            gt_trajectory=np.asarray(data["gt_traj"], dtype=np.float64),
            cot=tuple((p, r) for p, r in data["cot"]),
        )


@dataclass(frozen=True)
class _Frame:
    key: tuple[tuple[ObjectBox, str, str], ...]  # (object, state, action)
    decision: Decision
    velocity: float
    accel: float
    yaw_rate: float = 0.0


def rollout(v0: float, accel: float, yaw_rate: float = 0.0, dt: float = 0.05) -> np.ndarray:
    """Positions at 0.5 s ... 3 s from a constant-acceleration, constant-yaw-rate model."""
    per_waypoint = int(round(WAYPOINT_DT / dt))
    pos = np.zeros(2)
    v, heading = v0, 0.0
    out = []
    for step in range(1, N_WAYPOINTS * per_waypoint + 1):
        v = max(v + accel * dt, 0.0)
        heading += yaw_rate * dt
        pos = pos + v * dt * np.array([math.cos(heading), math.sin(heading)])
        if step % per_waypoint == 0:
            out.append(pos.copy())
    return np.array(out)


def stop_accel(v0: float, room_m: float) -> float:
    """Constant deceleration that brings the ego to rest within room_m."""
    return -max(v0 * v0 / (2.0 * max(room_m, 0.1)), -SPEED_ACCEL["decelerate"])


def _box(x, y, dims, cls, vx=0.0, vy=0.0) -> ObjectBox:
    return ObjectBox(x=quantize(x), y=quantize(y), length=dims[0], width=dims[1],
                     vx=quantize(vx), vy=quantize(vy), cls=cls)


def _cruise(rng: np.random.Generator) -> list[_Frame]:
    v = rng.uniform(4.0, 9.0)
    return [
        _Frame((), Decision("forward", "keep"), v, 0.0),
        _Frame((), Decision("forward", "accelerate"), max(v - 1.5, 2.0), SPEED_ACCEL["accelerate"]),
    ]


def _stopped_lead(rng: np.random.Generator) -> list[_Frame]:
    y = rng.uniform(-0.3, 0.3)
    far = _box(rng.uniform(16.0, 24.0), y, CAR_DIMS, "car")
    near = _box(rng.uniform(8.0, STOP_DISTANCE_M), y, CAR_DIMS, "car")
    v_far, v_near = rng.uniform(3.0, 5.5), rng.uniform(1.5, 4.0)
    room = near.x - CAR_DIMS[0] / 2 - EGO_FRONT - MARGIN_M
    return [
        _Frame(((far, "stationary", "slow down"),), Decision("forward", "decelerate"), v_far, SPEED_ACCEL["decelerate"]),
        _Frame(((near, "stationary", "stop"),), Decision("forward", "stop"), v_near, stop_accel(v_near, room)),
    ]


def _decelerating_lead(rng: np.random.Generator) -> list[_Frame]:
    v = rng.uniform(5.0, 8.0)
    d, y = rng.uniform(12.0, 20.0), rng.uniform(-0.3, 0.3)
    slower = _box(d, y, CAR_DIMS, "car", vx=v - rng.uniform(2.0, 4.0))
    away = _box(d, y, CAR_DIMS, "car", vx=v + rng.uniform(1.0, 3.0))
    return [
        _Frame(((slower, "slowing down", "slow down"),), Decision("forward", "decelerate"), v, SPEED_ACCEL["decelerate"]),
        _Frame(((away, "moving away", "keep going"),), Decision("forward", "keep"), v, 0.0),
    ]


def _signal(rng: np.random.Generator) -> list[_Frame]:
    v, d = rng.uniform(4.0, 8.0), rng.uniform(10.0, 30.0)
    red = _box(d, -4.5, LIGHT_DIMS, "red_light")
    green = _box(d, -4.5, LIGHT_DIMS, "green_light")
    if red.x <= RED_STOP_DISTANCE_M:
        red_frame = _Frame(((red, "red", "stop"),), Decision("forward", "stop"), v,
                           stop_accel(v, red.x - EGO_FRONT - MARGIN_M))
    else:
        red_frame = _Frame(((red, "red", "slow down"),), Decision("forward", "decelerate"), v, SPEED_ACCEL["decelerate"])
    return [red_frame, _Frame(((green, "green", "keep going"),), Decision("forward", "keep"), v, 0.0)]


def _pedestrian(rng: np.random.Generator) -> list[_Frame]:
    v, d = rng.uniform(3.0, 5.0), rng.uniform(10.0, 18.0)
    side = 1.0 if rng.random() < 0.5 else -1.0
    crossing = _box(d, rng.uniform(-2.0, 2.0), PEDESTRIAN_DIMS, "pedestrian", vy=-1.2 * side)
    sidewalk = _box(d, 5.0 * side, PEDESTRIAN_DIMS, "pedestrian")
    if crossing.x <= STOP_DISTANCE_M:
        room = crossing.x - PEDESTRIAN_DIMS[0] / 2 - EGO_FRONT - MARGIN_M
        cross_frame = _Frame(((crossing, "crossing the road", "stop"),), Decision("forward", "stop"), v, stop_accel(v, room))
    else:
        cross_frame = _Frame(((crossing, "crossing the road", "slow down"),), Decision("forward", "decelerate"),
                             v, SPEED_ACCEL["decelerate"])
    return [cross_frame, _Frame(((sidewalk, "on the sidewalk", "keep going"),), Decision("forward", "keep"), v, 0.0)]


def _turn(rng: np.random.Generator) -> list[_Frame]:
    v = rng.uniform(3.0, 5.0)
    direction, rate = ("left-turn", TURN_RATE) if rng.random() < 0.5 else ("right-turn", -TURN_RATE)
    return [
        _Frame((), Decision("forward", "decelerate"), v + 1.0, SPEED_ACCEL["decelerate"]),
        _Frame((), Decision(direction, "keep"), v, 0.0, yaw_rate=rate),
    ]


_BUILDERS = {
    "cruise": _cruise,
    "stopped_lead": _stopped_lead,
    "decelerating_lead": _decelerating_lead,
    "signal": _signal,
    "pedestrian": _pedestrian,
    "turn": _turn,
}


def _distractors(rng: np.random.Generator) -> list[ObjectBox]:
    """Parked cars beside the road; never key objects."""
    out = []
    for _ in range(int(rng.integers(0, 3))):
        side = 1.0 if rng.random() < 0.5 else -1.0
        out.append(_box(rng.uniform(-10.0, 30.0), side * rng.uniform(6.5, 9.0), CAR_DIMS, "car"))
    return out


def _ego_status(frame: _Frame, rng: np.random.Generator) -> EgoStatus:
    v = quantize(frame.velocity)
    history = tuple((quantize(-v * (WAYPOINT_DT * k)), 0.0) for k in (3, 2, 1))
    return EgoStatus(velocity=v, yaw_rate=quantize(frame.yaw_rate),
                     acceleration=quantize(rng.uniform(-0.3, 0.3)), history=history)


def _build_sample(scene_id: str, t: int, scenario: str, frame: _Frame, distractors: list[ObjectBox],
                  rng: np.random.Generator) -> SceneSample:
    objects = tuple(obj for obj, _, _ in frame.key) + tuple(distractors)
    key_objects = tuple(
        KeyObject(index=i, cls=obj.cls, camera=camera_for(obj.x, obj.y), state=state, action=action)
        for i, (obj, state, action) in enumerate(frame.key)
    )
    ego = _ego_status(frame, rng)
    gt = quantize_trajectory(rollout(ego.velocity, frame.accel, frame.yaw_rate))
    sample = SceneSample(
        scene_id=scene_id, timestamp_index=t, scenario=scenario, objects=objects,
        ego_status=ego, key_objects=key_objects, decision=frame.decision, gt_trajectory=gt,
    )
    return dataclasses.replace(sample, cot=tuple(cot_turns(sample)))


def gen_scene(seed: int, index: int) -> list[SceneSample]:
    scenario = SCENARIOS[int(np.random.default_rng([seed, index]).integers(len(SCENARIOS)))]
    scene_id = f"scene-{seed}-{index:05d}"
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, index, attempt + 1])
        frames = _BUILDERS[scenario](rng)
        distractors = _distractors(rng)
        samples = [_build_sample(scene_id, t, scenario, frame, distractors, rng) for t, frame in enumerate(frames)]
        if not any(waypoint_collisions(s.gt_trajectory, s.objects).any() for s in samples):
            return samples
        logger.debug("Scene %s attempt %d: ground truth collides, redrawing", scene_id, attempt)
    raise WorldGenerationError(f"no collision-free layout for {scene_id} after {MAX_ATTEMPTS} attempts")


def gen_world(seed: int, n_scenes: int) -> list[SceneSample]:
    """`n_scenes` frames from ceil(n_scenes / 2) two-timestamp scenes, deterministic in seed."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be at least 1")
    samples: list[SceneSample] = []
    index = 0
    while len(samples) < n_scenes:
        samples.extend(gen_scene(seed, index)[: n_scenes - len(samples)])
        index += 1
    logger.info("Generated %d samples from %d scenes (seed %d)", len(samples), index, seed)
    return samples
