import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from diffwm.data import make_synthetic_dataset
from diffwm.schedule import make_linear_schedule
from diffwm.training import TrainConfig, train
from diffwm.watermark import WatermarkSpec, make_pattern

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DESK_T = 100


@pytest.fixture(scope="session")
def desk_schedule():
    return make_linear_schedule(DESK_T)


@pytest.fixture(scope="session")
def desk_pattern():
    return make_pattern("square", "bottom_right", 4, (16, 16, 1))


@pytest.fixture(scope="session")
def desk_spec(desk_pattern):
    return WatermarkSpec(desk_pattern, gamma=0.8, t_A=DESK_T // 2, f1_mode="zero")


@pytest.fixture(scope="session")
def desk_corpus():
    return make_synthetic_dataset(1, 16, "blobs", seed=0)


@pytest.fixture(scope="session")
def trained_watermarked(desk_corpus, desk_spec, desk_schedule, tmp_path_factory):
    """2000-step desk model shared by the training, sampling and verification tests."""
    log = tmp_path_factory.mktemp("train") / "loss.csv"
    cfg = TrainConfig(steps=2000, batch_size=32, width=16, seed=0)
    return train(desk_corpus, desk_spec, desk_schedule, cfg, log_path=log), log


@pytest.fixture(scope="session")
def trained_zero(desk_corpus, desk_spec, desk_schedule):
    cfg = TrainConfig(steps=1000, batch_size=32, width=16, seed=0)
    return train(desk_corpus, desk_spec.zeroed(), desk_schedule, cfg)


def rng(seed=0):
    return np.random.default_rng(seed)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Records one PASS/FAIL line per acceptance criterion, printed at the end of the run."""
    entry = {}

    def record(number, title, passed, seconds, limit, detail=""):
        status = "PASS" if passed and seconds <= limit else "FAIL"
        entry["line"] = f"[{status}] AC{number} {title}: {detail} ({seconds:.1f}s, limit {limit:g}s)"
        return status == "PASS"

    yield record
    if "line" in entry:
        ACCEPTANCE_LINES.append(entry["line"])
    else:
        ACCEPTANCE_LINES.append(f"[FAIL] {request.node.name}: raised before reporting")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("AC")[1].split()[0]) if "AC" in s else 99):
            terminalreporter.write_line(line)
