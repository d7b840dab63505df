import math

import pytest

from mpqkd.config import ConfigError, RunConfig, load_config, parse_grid, parse_interval, thread_cap
from mpqkd.pairing import UNLIMITED


def test_defaults():
    cfg = load_config(text="")
    assert cfg == RunConfig()


def test_sections_and_types():
    cfg = load_config(text="""
[channel]
total_distance_km = 120   # inline comment
dark_count_prob = 1e-7
[protocol]
l = inf
N = 1e6
seed = 4
[decoy]
mode = finite
eps = 1e-9
[sweep]
distances = 0:100:25
l_values = 1, 1000, unlimited
schemes = mp, pm
optimize = no
[phasedrift]
misestimate_hz = 5000
[output]
rates = out.csv
""")
    assert cfg.channel.total_distance_km == 120.0 and cfg.channel.dark_count_prob == 1e-7
    assert cfg.protocol.l == UNLIMITED and cfg.protocol.N == 1_000_000 and cfg.protocol.seed == 4
    assert cfg.decoy.mode == "finite" and cfg.decoy.eps == 1e-9
    assert cfg.sweep.distances == (0.0, 25.0, 50.0, 75.0, 100.0)
    assert cfg.sweep.l_values == (1.0, 1000.0, UNLIMITED)
    assert cfg.sweep.schemes == ("mp", "pm") and cfg.sweep.optimize is False
    assert cfg.drift.misestimate_hz == 5000.0
    assert cfg.output.rates == "out.csv"


@pytest.mark.parametrize("text,needle", [
    ("[nonsense]\n", "nonsense"),
    ("[channel]\nlength = 3\n", "length"),
    ("[channel]\ndetector_efficiency = 2\n", "detector_efficiency"),
    ("[protocol]\nN = 1.5\n", "N"),
    ("[protocol]\nl = 0\n", "l"),
    ("[sweep]\nschemes = mp, warp\n", "warp"),
    ("[sweep]\noptimize = maybe\n", "optimize"),
    ("[decoy]\nmode = lazy\n", "mode"),
    ("no header\n", "parse"),
])
def test_rejections_name_the_key(text, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(text=text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.ini")


def test_grid_and_interval_parsing():
    assert parse_grid("5, 10,20") == (5.0, 10.0, 20.0)
    assert parse_grid("0:1:0.25") == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert parse_interval("INF") == math.inf
    assert parse_interval("16") == 16.0
    with pytest.raises(ValueError):
        parse_grid("0:10:0")
    with pytest.raises(ValueError):
        parse_interval("2.5")


def test_thread_cap(monkeypatch):
    monkeypatch.delenv("MPQKD_THREADS", raising=False)
    assert thread_cap(None) == 1 and thread_cap(8) == 8
    monkeypatch.setenv("MPQKD_THREADS", "2")
    assert thread_cap(8) == 2 and thread_cap(None) == 2
    monkeypatch.setenv("MPQKD_THREADS", "zero")
    with pytest.raises(ConfigError):
        thread_cap(None)
