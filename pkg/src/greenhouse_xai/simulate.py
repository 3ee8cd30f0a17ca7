"""Closed-loop sensor -> gateway -> actuator simulation.

Discrete time, one step per dataset sampling period. Readings reach the
gateway after a transmission delay, the controller classifies on the
trailing window of *delivered* readings, and commands reach the
actuators after an actuation delay. Either link may drop a packet;
actuators hold their last applied command. Energy is the weighted sum of
squared commands accumulated over the horizon.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .dataio import ScalingParams
from .tft import TftModel


class SimError(RuntimeError):
    pass


@dataclass
class SimConfig:
    horizon: int
    command_map: np.ndarray          # (K, n_actuators)
    cost: np.ndarray                 # (n_actuators,) > 0
    window: int = 12
    sensor_delay: int = 0            # steps, sensor -> gateway
    actuation_delay: int = 0         # steps, gateway -> actuator
    drop_prob: float = 0.0           # per link per step
    sensor_noise: float = 0.0        # measurement map: identity + N(0, sigma)
    seed: int = 0

    def __post_init__(self):
        self.command_map = np.asarray(self.command_map, dtype=np.float64)
        self.cost = np.asarray(self.cost, dtype=np.float64)

    def validate(self):
        if self.horizon < 1:
            raise SimError("horizon must be >= 1")
        if self.sensor_delay < 0 or self.actuation_delay < 0:
            raise SimError("delays must be >= 0")
        if self.sensor_delay + self.actuation_delay >= self.horizon:
            raise SimError(
                f"d_s + d_a = {self.sensor_delay + self.actuation_delay} "
                f"must be < horizon {self.horizon}"
            )
        if not 0.0 <= self.drop_prob < 1.0:
            raise SimError("drop probability must be in [0, 1)")
        if self.command_map.ndim != 2:
            raise SimError("command_map must be (classes, actuators)")
        if self.cost.shape != (self.command_map.shape[1],):
            raise SimError("cost length must match actuator count")
        if (self.cost <= 0).any():
            raise SimError("cost coefficients must be > 0")

    @staticmethod
    def from_json(path) -> "SimConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return SimConfig(
            horizon=int(raw["horizon"]),
            command_map=np.asarray(raw["command_map"], dtype=float),
            cost=np.asarray(raw["cost"], dtype=float),
            window=int(raw.get("window", 12)),
            sensor_delay=int(raw.get("sensor_delay", 0)),
            actuation_delay=int(raw.get("actuation_delay", 0)),
            drop_prob=float(raw.get("drop_prob", 0.0)),
            sensor_noise=float(raw.get("sensor_noise", 0.0)),
            seed=int(raw.get("seed", 0)),
        )


@dataclass
class CommandEvent:
    issue_step: int
    pred_class: int
    apply_step: int          # issue + d_a (may be past the horizon)
    dropped: bool
    source_idx: int          # newest reading the decision saw


@dataclass
class SimTrace:
    sensed: np.ndarray            # (T, m) y_t
    delivered_step: np.ndarray    # (T,) when reading t arrived, -1 = dropped
    pred_class: np.ndarray        # (T,) class issued at step t, -1 = none
    applied_u: np.ndarray         # (T, n)
    step_energy: np.ndarray       # (T,)
    events: list[CommandEvent] = field(default_factory=list)
    total_energy: float = 0.0

    @property
    def horizon(self) -> int:
        return len(self.step_energy)

    def to_csv(self, path):
        t_, m = self.sensed.shape
        n = self.applied_u.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step"] + [f"y{j}" for j in range(m)] + ["delivered_step",
                 "pred_class"] + [f"u{j}" for j in range(n)] + ["energy"])
            for t in range(t_):
                writer.writerow(
                    [t] + [repr(v) for v in self.sensed[t]]
                    + [int(self.delivered_step[t]), int(self.pred_class[t])]
                    + [repr(v) for v in self.applied_u[t]]
                    + [repr(float(self.step_energy[t]))])

    def summary(self) -> dict:
        issued = self.pred_class[self.pred_class >= 0]
        return {
            "horizon": self.horizon,
            "total_energy": self.total_energy,
            "commands_issued": int(len(self.events)),
            "commands_dropped": int(sum(e.dropped for e in self.events)),
            "readings_dropped": int((self.delivered_step < 0).sum()),
            "class_histogram": np.bincount(
                issued, minlength=int(self.pred_class.max(initial=0)) + 1
            ).tolist() if issued.size else [],
        }


def energy_cost(trace: SimTrace, cost) -> float:
    """Sum over steps and actuators of c_i * u_{i,t}^2."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != (trace.applied_u.shape[1],):
        raise SimError(
            f"cost length {cost.shape} does not match "
            f"{trace.applied_u.shape[1]} actuators"
        )
    return float((cost * trace.applied_u ** 2).sum())


def run(config: SimConfig, controller, source: np.ndarray) -> SimTrace:
    """Drive the loop for `horizon` steps over `source` rows (one row per
    step). The controller sees the last `window` delivered readings."""
    config.validate()
    source = np.asarray(source, dtype=np.float64)
    t_total = config.horizon
    if source.ndim != 2 or source.shape[0] < t_total:
        raise SimError(
            f"source must provide at least horizon={t_total} rows"
        )
    m = source.shape[1]
    n = config.command_map.shape[1]
    k = config.command_map.shape[0]
    rng = np.random.default_rng(config.seed)

    sensed = np.empty((t_total, m))
    delivered_step = np.full(t_total, -1, dtype=np.int64)
    pred_class = np.full(t_total, -1, dtype=np.int64)
    applied_u = np.zeros((t_total, n))
    step_energy = np.zeros(t_total)
    events: list[CommandEvent] = []

    deliver_at: dict[int, list[tuple[int, np.ndarray]]] = {}
    apply_at: dict[int, np.ndarray] = {}
    gateway_buffer: list[tuple[int, np.ndarray]] = []
    held = np.zeros(n)

    for t in range(t_total):
        y = source[t]
        if config.sensor_noise > 0:
            y = y + rng.normal(0.0, config.sensor_noise, size=m)
        sensed[t] = y
        if config.drop_prob == 0 or rng.random() >= config.drop_prob:
            arrive = t + config.sensor_delay
            deliver_at.setdefault(arrive, []).append((t, y))
            delivered_step[t] = arrive

        for item in deliver_at.pop(t, []):
            gateway_buffer.append(item)

        if len(gateway_buffer) >= config.window:
            recent = gateway_buffer[-config.window:]
            window = np.stack([r[1] for r in recent])
            try:
                cls = int(controller(window))
            except Exception as exc:
                raise SimError(f"controller failed at step {t}: {exc}") from exc
            if not 0 <= cls < k:
                raise SimError(
                    f"controller returned class {cls} outside [0,{k}) at step {t}"
                )
            pred_class[t] = cls
            dropped = (config.drop_prob > 0
                       and rng.random() < config.drop_prob)
            if not dropped:
                apply_at[t + config.actuation_delay] = config.command_map[cls]
            events.append(CommandEvent(t, cls, t + config.actuation_delay,
                                       dropped, recent[-1][0]))

        if t in apply_at:
            held = apply_at.pop(t)
        applied_u[t] = held
        step_energy[t] = float((config.cost * held ** 2).sum())

    trace = SimTrace(sensed, delivered_step, pred_class, applied_u,
                     step_energy, events)
    trace.total_energy = float(step_energy.sum())
    return trace


def make_tft_controller(model: TftModel, scaling: ScalingParams,
                        source_feature_names: list[str]):
    """Policy g: raw delivered window -> scaled model input -> argmax class."""
    idx = [source_feature_names.index(n) for n in scaling.feature_names]

    def controller(window: np.ndarray) -> int:
        scaled = scaling.transform_array(window[:, idx])
        probs = model.predict_proba(scaled[None])
        return int(np.argmax(probs[0]))

    return controller


def replay_controller(labels: np.ndarray, window: int, sensor_delay: int):
    """Replays recorded labels: at issue step t the newest delivered
    reading is row t - d_s, whose label it echoes."""
    state = {"t": window - 1 + sensor_delay}

    def controller(_window: np.ndarray) -> int:
        cls = int(labels[state["t"] - sensor_delay])
        state["t"] += 1
        return cls

    return controller


def compare_policies(config: SimConfig, controllers: dict, source: np.ndarray,
                     recorded_labels: np.ndarray | None = None) -> list[dict]:
    """Run every controller under identical conditions (same seed, same
    drop pattern) and rank by total energy."""
    rows = []
    for name in controllers:
        trace = run(config, controllers[name], source)
        agreement = None
        if recorded_labels is not None and trace.events:
            hits = [e.pred_class == recorded_labels[e.source_idx]
                    for e in trace.events]
            agreement = float(np.mean(hits))
        rows.append({"name": name, "total_energy": trace.total_energy,
                     "commands_issued": len(trace.events),
                     "agreement": agreement})
    rows.sort(key=lambda r: (r["total_energy"], r["name"]))
    return rows


def write_policy_report(path_csv, path_json, rows: list[dict]):
    with open(path_csv, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["name", "total_energy", "commands_issued",
                            "agreement"])
        writer.writeheader()
        writer.writerows(rows)
    with open(path_json, "w") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
