from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from etchforge.config import ModelGrid, PipelineConfig
from etchforge.ingest import EventLog, parse_event_log
from etchforge.models import ModelSpec
from etchforge.sim import SimConfig, simulate

FIXTURES = Path(__file__).resolve().parent / "fixtures"
TINY_LOG = FIXTURES / "tiny_log"

settings.register_profile("ci", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=20, deadline=None)
settings.load_profile("ci")

SMALL_SIM = SimConfig(
    seed=7,
    n_chambers=2,
    horizon_hours=400.0,
    n_recipes=2,
    n_sensors=10,
    n_alarm_codes=8,
    n_violation_codes=4,
    mean_segment_hours=30.0,
    short_segment_fraction=0.0,
    n_cleaning_recipes=0,
)

FAST_GRID = ModelGrid(
    regression=(
        ModelSpec("LR", "regression"),
        ModelSpec("TREE", "regression", {"max_depth": 3}),
    ),
    classification=(
        ModelSpec("TREE", "classification", {"max_depth": 3}),
        ModelSpec("KNN", "classification", {"k": 3}),
    ),
)


@pytest.fixture
def tiny_dir() -> Path:
    return TINY_LOG


@pytest.fixture
def tiny_log() -> EventLog:
    return parse_event_log(TINY_LOG)


@pytest.fixture(scope="session")
def small_log() -> EventLog:
    return simulate(SMALL_SIM)


@pytest.fixture
def small_config() -> PipelineConfig:
    return PipelineConfig(sim=SMALL_SIM, models=FAST_GRID)
