"""Seeded plant simulator producing event logs with planted degradation.

Each chamber carries a latent wear level that climbs run by run and triggers a
breakdown when it crosses 1. After a repair, wear stays at 0 for an exponential onset
period (mean ``onset_fraction * mean_segment_hours``) and then climbs over the rest of
the segment. Sensors, alarms, limit violations and voltage dips are emitted from that
wear:

  * sensor z-score   = N(0, 1) + drift_j * (wear - 0.5)        (informative columns)
  * raw sensor value = recipe baseline + recipe scale * z-score
  * alarm/violation  P(emit in run) = min(1, weight * logistic(k * (wear - tau)) * hours)

Run starts and durations are quantized to 1/64 h, so any sum of productive hours is
exact in binary floating point.

Usage:
  etchforge simulate --seed 42 --out data/sim
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfig
from .ingest import (
    ALARM_CATEGORIES,
    VIOLATION_SEVERITIES,
    AlarmEvent,
    EventLog,
    LimitViolationEvent,
    Run,
    StateChange,
    VoltageDip,
)

logger = logging.getLogger(__name__)

TICK = 1.0 / 64.0


@dataclass(frozen=True, slots=True)
class SimConfig:
    seed: int = 42
    n_chambers: int = 4
    horizon_hours: float = 7000.0
    n_recipes: int = 4
    n_sensors: int = 30
    n_alarm_codes: int = 40
    n_violation_codes: int = 12
    mean_segment_hours: float = 480.0
    onset_fraction: float = 0.2
    hazard_steepness: float = 10.0
    duplicate_sensor_fraction: float = 0.2
    informative_fraction: float = 0.2
    degradation_code_fraction: float = 0.5
    mean_run_hours: float = 2.0
    mean_gap_hours: float = 0.1
    short_segment_fraction: float = 0.05
    n_cleaning_recipes: int = 1
    cleaning_run_fraction: float = 0.03
    unused_sensor_fraction: float = 0.15
    drift_gain: float = 3.0
    dip_rate_per_hour: float = 0.004
    standby_probability: float = 0.01

    def __post_init__(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidConfig(f"seed must be an unsigned integer (got {self.seed!r})")
        for name in ("n_chambers", "n_recipes", "n_sensors", "n_alarm_codes", "n_violation_codes"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1 (got {getattr(self, name)})")
        if self.n_cleaning_recipes < 0:
            raise InvalidConfig("n_cleaning_recipes must be >= 0")
        for name in ("horizon_hours", "mean_segment_hours", "hazard_steepness", "mean_run_hours", "mean_gap_hours"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0 (got {getattr(self, name)})")
        for name in (
            "duplicate_sensor_fraction",
            "informative_fraction",
            "degradation_code_fraction",
            "short_segment_fraction",
            "cleaning_run_fraction",
            "unused_sensor_fraction",
            "standby_probability",
        ):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} must lie in [0, 1] (got {getattr(self, name)})")
        if not 0.0 <= self.onset_fraction < 1.0:
            raise InvalidConfig(f"onset_fraction must lie in [0, 1) (got {self.onset_fraction})")
        if self.drift_gain < 0 or self.dip_rate_per_hour < 0:
            raise InvalidConfig("drift_gain and dip_rate_per_hour must be >= 0")
        if self.n_duplicates >= self.n_sensors:
            raise InvalidConfig("duplicate_sensor_fraction leaves no original sensor columns")

    @property
    def n_duplicates(self) -> int:
        return int(round(self.duplicate_sensor_fraction * self.n_sensors))

    def productive_recipes(self) -> list[str]:
        return [f"R{i}" for i in range(self.n_recipes)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class WearState:
    chamber_id: str
    wear: float
    last_breakdown: float | None


@dataclass(frozen=True, slots=True)
class PlantedTruth:
    sensor_names: tuple[str, ...]
    informative: tuple[int, ...]
    noise: tuple[int, ...]
    duplicates: tuple[tuple[int, int], ...]  # (duplicate column, source column)
    alarm_hazard_weights: dict[str, float]
    alarm_thresholds: dict[str, float]
    violation_sensors: dict[str, str]
    violation_hazard_weights: dict[str, float]


@dataclass(slots=True)
class _Plant:
    sensor_names: list[str]
    informative: np.ndarray
    noise: np.ndarray
    dup_sources: np.ndarray
    drift: np.ndarray
    recipes: list[str]
    cleaning: list[str]
    baseline: np.ndarray
    scale: np.ndarray
    unused: np.ndarray
    alarm_codes: list[str]
    alarm_weight: np.ndarray
    alarm_tau: np.ndarray
    alarm_degrading: np.ndarray
    alarm_category: list[str]
    violation_codes: list[str]
    violation_weight: np.ndarray
    violation_tau: np.ndarray
    violation_degrading: np.ndarray
    violation_severity: list[str]
    violation_sensor: list[str]
    extras: dict = field(default_factory=dict)


def _streams(config: SimConfig) -> tuple[np.random.Generator, list[np.random.Generator]]:
    root = np.random.SeedSequence(config.seed)
    plant_seq, *chamber_seqs = root.spawn(config.n_chambers + 1)
    return np.random.default_rng(plant_seq), [np.random.default_rng(s) for s in chamber_seqs]


def _split_codes(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    n_deg = min(n, max(1, int(round(fraction * n))))
    degrading = np.zeros(n, dtype=bool)
    degrading[rng.permutation(n)[:n_deg]] = True
    return degrading


def _plant(config: SimConfig, rng: np.random.Generator) -> _Plant:
    n_dup = config.n_duplicates
    n_base = config.n_sensors - n_dup
    width = max(2, len(str(config.n_sensors - 1)))
    names = [f"s{i:0{width}d}" for i in range(config.n_sensors)]

    n_inf = min(n_base, max(1, int(round(config.informative_fraction * n_base))))
    perm = rng.permutation(n_base)
    informative = np.sort(perm[:n_inf])
    noise = np.sort(perm[n_inf:])
    dup_sources = rng.choice(n_base, size=n_dup, replace=n_dup > n_base)

    drift = np.zeros(n_base)
    drift[informative] = config.drift_gain * rng.uniform(0.8, 1.2, size=n_inf) * rng.choice([-1.0, 1.0], size=n_inf)

    recipes = config.productive_recipes()
    cleaning = [f"CLEAN{i}" for i in range(config.n_cleaning_recipes)]
    n_all = len(recipes) + len(cleaning)
    baseline = rng.normal(0.0, 5.0, size=(n_all, n_base))
    scale = rng.uniform(0.5, 2.0, size=(n_all, n_base))
    unused = np.zeros((n_all, n_base), dtype=bool)
    for r in range(n_all):
        frac = config.unused_sensor_fraction if r < len(recipes) else max(0.5, config.unused_sensor_fraction)
        unused[r, noise] = rng.random(noise.size) < frac

    alarm_degrading = _split_codes(rng, config.n_alarm_codes, config.degradation_code_fraction)
    alarm_weight = np.where(
        alarm_degrading,
        rng.uniform(0.05, 0.3, size=config.n_alarm_codes),
        rng.uniform(0.002, 0.02, size=config.n_alarm_codes),
    )
    alarm_tau = rng.uniform(0.15, 1.0, size=config.n_alarm_codes)
    alarm_category = [str(c) for c in rng.choice(ALARM_CATEGORIES, size=config.n_alarm_codes)]

    violation_degrading = _split_codes(rng, config.n_violation_codes, config.degradation_code_fraction)
    violation_weight = np.where(
        violation_degrading,
        rng.uniform(0.05, 0.2, size=config.n_violation_codes),
        rng.uniform(0.002, 0.01, size=config.n_violation_codes),
    )
    violation_tau = rng.uniform(0.4, 1.0, size=config.n_violation_codes)
    violation_severity = [str(s) for s in rng.choice(VIOLATION_SEVERITIES, size=config.n_violation_codes)]
    pool_noise = noise if noise.size else informative
    violation_sensor = []
    deg_i = bg_i = 0
    for degrading in violation_degrading:
        if degrading:
            violation_sensor.append(names[int(informative[deg_i % informative.size])])
            deg_i += 1
        else:
            violation_sensor.append(names[int(pool_noise[bg_i % pool_noise.size])])
            bg_i += 1

    return _Plant(
        sensor_names=names,
        informative=informative,
        noise=noise,
        dup_sources=dup_sources,
        drift=drift,
        recipes=recipes,
        cleaning=cleaning,
        baseline=baseline,
        scale=scale,
        unused=unused,
        alarm_codes=[f"A{i:03d}" for i in range(config.n_alarm_codes)],
        alarm_weight=alarm_weight,
        alarm_tau=alarm_tau,
        alarm_degrading=alarm_degrading,
        alarm_category=alarm_category,
        violation_codes=[f"V{i:02d}" for i in range(config.n_violation_codes)],
        violation_weight=violation_weight,
        violation_tau=violation_tau,
        violation_degrading=violation_degrading,
        violation_severity=violation_severity,
        violation_sensor=violation_sensor,
    )


def planted_truth(config: SimConfig) -> PlantedTruth:
    """Latent ground truth for acceptance checks. Pipeline code never reads this."""
    plant_rng, _ = _streams(config)
    plant = _plant(config, plant_rng)
    n_base = config.n_sensors - config.n_duplicates
    return PlantedTruth(
        sensor_names=tuple(plant.sensor_names),
        informative=tuple(int(i) for i in plant.informative),
        noise=tuple(int(i) for i in plant.noise),
        duplicates=tuple((n_base + k, int(src)) for k, src in enumerate(plant.dup_sources)),
        alarm_hazard_weights={
            code: float(w) if deg else 0.0
            for code, w, deg in zip(plant.alarm_codes, plant.alarm_weight, plant.alarm_degrading)
        },
        alarm_thresholds={code: float(t) for code, t in zip(plant.alarm_codes, plant.alarm_tau)},
        violation_sensors=dict(zip(plant.violation_codes, plant.violation_sensor)),
        violation_hazard_weights={
            code: float(w) if deg else 0.0
            for code, w, deg in zip(plant.violation_codes, plant.violation_weight, plant.violation_degrading)
        },
    )


def _quantize(hours: float) -> float:
    return max(TICK, round(hours / TICK) * TICK)


def _on_tick(hours: float) -> float:
    return math.ceil(hours / TICK) * TICK


def _logistic(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _segment_rate(rng: np.random.Generator) -> float:
    # Gamma(25, 1/24) has E[1/rate] = 1, so the degradation span keeps its configured mean.
    return float(rng.gamma(25.0, 1.0 / 24.0))


def _onset_hours(config: SimConfig, rng: np.random.Generator) -> float:
    if config.onset_fraction == 0.0:
        return 0.0
    return float(rng.exponential(config.onset_fraction * config.mean_segment_hours))


def _emission_probability(
    weight: np.ndarray, tau: np.ndarray, degrading: np.ndarray, wear: float, hours: float, k: float
) -> np.ndarray:
    hazard = np.where(degrading, weight * _logistic(k * (wear - tau)), weight)
    return np.minimum(1.0, hazard * hours)


def _sensor_values(
    plant: _Plant, config: SimConfig, recipe_index: int, wear: float, rng: np.random.Generator
) -> dict[str, float | None]:
    n_base = plant.baseline.shape[1]
    z = rng.normal(size=n_base)
    if recipe_index < len(plant.recipes):
        z = z + plant.drift * (wear - 0.5)
    raw = plant.baseline[recipe_index] + plant.scale[recipe_index] * z
    unused = plant.unused[recipe_index]
    values: list[float | None] = [None if unused[j] else float(raw[j]) for j in range(n_base)]
    values.extend(values[int(src)] for src in plant.dup_sources)
    return dict(zip(plant.sensor_names, values))


def _simulate_chamber(
    chamber_id: str, config: SimConfig, plant: _Plant, rng: np.random.Generator
) -> tuple[list, list, list, list, list, WearState]:
    runs: list[Run] = []
    alarms: list[AlarmEvent] = []
    violations: list[LimitViolationEvent] = []
    states = [StateChange(chamber_id, 0.0, "productive")]
    dips: list[VoltageDip] = []

    horizon = config.horizon_hours
    k = config.hazard_steepness
    n_recipes = len(plant.recipes)
    t = 0.0
    wear = float(rng.uniform(0.0, 0.8))
    rate = _segment_rate(rng)
    span = (1.0 - config.onset_fraction) * config.mean_segment_hours
    onset_left = 0.0
    short_target: float | None = None
    segment_hours = 0.0
    last_breakdown: float | None = None

    while True:
        start = t + _quantize(rng.exponential(config.mean_gap_hours))
        duration = _quantize(rng.gamma(4.0, config.mean_run_hours / 4.0))
        if start + duration > horizon:
            break
        if plant.cleaning and rng.random() < config.cleaning_run_fraction:
            recipe_index = n_recipes + int(rng.integers(len(plant.cleaning)))
            recipe = plant.cleaning[recipe_index - n_recipes]
        else:
            recipe_index = int(rng.integers(n_recipes))
            recipe = plant.recipes[recipe_index]

        degrading = max(0.0, duration - onset_left)
        onset_left = max(0.0, onset_left - duration)
        increment = float(rng.gamma(2.0, degrading * rate / (span * 2.0))) if degrading > 0.0 else 0.0
        current = min(1.0, wear + increment)
        runs.append(
            Run(
                chamber_id=chamber_id,
                run_id=f"r{len(runs):05d}",
                recipe_id=recipe,
                start=start,
                duration=duration,
                sensors=_sensor_values(plant, config, recipe_index, current, rng),
            )
        )

        p_alarm = _emission_probability(
            plant.alarm_weight, plant.alarm_tau, plant.alarm_degrading, current, duration, k
        )
        fired = np.flatnonzero(rng.random(p_alarm.size) < p_alarm)
        offsets = rng.uniform(0.0, duration, size=fired.size)
        for code_index, offset in zip(fired, offsets):
            alarms.append(
                AlarmEvent(
                    chamber_id, start + float(offset), plant.alarm_codes[code_index], plant.alarm_category[code_index]
                )
            )

        p_violation = _emission_probability(
            plant.violation_weight, plant.violation_tau, plant.violation_degrading, current, duration, k
        )
        fired = np.flatnonzero(rng.random(p_violation.size) < p_violation)
        offsets = rng.uniform(0.0, duration, size=fired.size)
        for code_index, offset in zip(fired, offsets):
            violations.append(
                LimitViolationEvent(
                    chamber_id,
                    start + float(offset),
                    plant.violation_codes[code_index],
                    plant.violation_severity[code_index],
                    plant.violation_sensor[code_index],
                )
            )

        if rng.random() < min(1.0, config.dip_rate_per_hour * duration * (1.0 + 2.0 * current)):
            dips.append(
                VoltageDip(chamber_id, start + float(rng.uniform(0.0, duration)), float(rng.uniform(2.0, 20.0)))
            )

        wear = wear + increment
        segment_hours += duration
        t = start + duration

        if wear >= 1.0 or (short_target is not None and segment_hours >= short_target):
            down = t + float(rng.uniform(0.01, 0.25))
            repair = down + float(rng.uniform(0.5, 2.0))
            resume = repair + float(rng.uniform(2.0, 10.0))
            if down > horizon:
                break
            states.append(StateChange(chamber_id, down, "breakdown"))
            last_breakdown = down
            if repair > horizon:
                break
            states.append(StateChange(chamber_id, repair, "maintenance"))
            if resume > horizon:
                break
            states.append(StateChange(chamber_id, resume, "productive"))
            t = _on_tick(resume)
            wear = 0.0
            rate = _segment_rate(rng)
            onset_left = _onset_hours(config, rng)
            segment_hours = 0.0
            short_target = float(rng.uniform(0.5, 4.0)) if rng.random() < config.short_segment_fraction else None
        elif rng.random() < config.standby_probability:
            idle = t + TICK
            resume = idle + float(rng.uniform(1.0, 4.0))
            if resume > horizon:
                break
            states.append(StateChange(chamber_id, idle, "standby"))
            states.append(StateChange(chamber_id, resume, "productive"))
            t = _on_tick(resume)

    alarms.sort(key=lambda e: e.time)
    violations.sort(key=lambda e: e.time)
    dips.sort(key=lambda e: e.time)
    return runs, alarms, violations, states, dips, WearState(chamber_id, min(wear, 1.0), last_breakdown)


def simulate(config: SimConfig) -> EventLog:
    plant_rng, chamber_rngs = _streams(config)
    plant = _plant(config, plant_rng)
    runs: list[Run] = []
    alarms: list[AlarmEvent] = []
    violations: list[LimitViolationEvent] = []
    states: list[StateChange] = []
    dips: list[VoltageDip] = []
    for index, rng in enumerate(chamber_rngs):
        chamber_id = f"C{index + 1}"
        c_runs, c_alarms, c_violations, c_states, c_dips, final = _simulate_chamber(chamber_id, config, plant, rng)
        runs.extend(c_runs)
        alarms.extend(c_alarms)
        violations.extend(c_violations)
        states.extend(c_states)
        dips.extend(c_dips)
        logger.debug("chamber %s ends with wear %.3f", chamber_id, final.wear)

    log = EventLog(
        runs=tuple(sorted(runs, key=lambda r: (r.chamber_id, r.start))),
        alarms=tuple(sorted(alarms, key=lambda e: (e.chamber_id, e.time))),
        violations=tuple(sorted(violations, key=lambda e: (e.chamber_id, e.time))),
        states=tuple(sorted(states, key=lambda e: (e.chamber_id, e.time))),
        dips=tuple(sorted(dips, key=lambda e: (e.chamber_id, e.time))),
    )
    n_breakdowns = sum(1 for s in log.states if s.state == "breakdown")
    logger.info(
        "simulated %d chambers over %.0f h: %d runs, %d breakdowns, %d alarms, %d violations",
        config.n_chambers, config.horizon_hours, len(log.runs), n_breakdowns, len(log.alarms), len(log.violations),
    )
    return log


def expected_segments(config: SimConfig) -> float:
    """Rough count of segments per chamber, used to size configs for tests."""
    cycle = config.mean_segment_hours * (1.0 + config.mean_gap_hours / config.mean_run_hours) + 7.25
    return math.floor(config.horizon_hours / cycle) + 1.0
