import pytest

from celleta.models import ClassifierConfig, EtaConfig
from celleta.neural import TrainConfig
from celleta.pipeline import PipelineConfig, build_knowledge, train_domain, train_embedding
from celleta.roadnet import SdneConfig
from celleta.synth import SynthConfig, synth_generate


def tiny_pipeline_config(grid, seed=0, epochs=12):
    train = TrainConfig(epochs=epochs, batch_size=64, lr=3e-3, dropout=0.0, patience=epochs)
    return PipelineConfig(
        grid=grid,
        sdne=SdneConfig(embed_dim=8, hidden=(24,), epochs=15, batch_size=16),
        classifier=ClassifierConfig(hidden=(32,), train=train),
        eta=EtaConfig(hidden=(32, 32), train=train),
        transfer=train,
    ).with_seed(seed)


@pytest.fixture(scope="session")
def small_world():
    return synth_generate(SynthConfig(rows=10, cols=10, trips={"RV": 80, "SV": 20}, days=7, seed=0))


@pytest.fixture(scope="session")
def small_cfg(small_world):
    return tiny_pipeline_config(small_world.grid)


@pytest.fixture(scope="session")
def small_trained(small_world, small_cfg):
    """Knowledge, embedding and models for the source domain of the small world."""
    trips = small_world.trajectories["RV"]
    know = build_knowledge(trips, small_world.side, small_cfg)
    emb = train_embedding(trips, small_cfg)
    models = train_domain(trips[:60], trips[60:], know.grids, emb, small_cfg, "RV")
    return know, emb, models


# -- acceptance criteria reporting -------------------------------------------

_CRITERIA: dict[str, dict] = {}


class _Criterion:
    def __init__(self, nodeid):
        self.nodeid = nodeid

    def __call__(self, number, title):
        _CRITERIA[self.nodeid] = {"number": number, "title": title, "detail": "", "outcome": "FAIL"}

    def detail(self, text):
        _CRITERIA[self.nodeid]["detail"] = text


@pytest.fixture
def criterion(request):
    return _Criterion(request.node.nodeid)


def pytest_runtest_logreport(report):
    entry = _CRITERIA.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call":
        entry["outcome"] = "PASS" if report.passed else "FAIL"
    elif report.failed:
        entry["outcome"] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(_CRITERIA.values(), key=lambda e: e["number"]):
        line = f"{entry['outcome']}  criterion {entry['number']:>2} {entry['title']}"
        if entry["detail"]:
            line += f": {entry['detail']}"
        terminalreporter.write_line(line)
