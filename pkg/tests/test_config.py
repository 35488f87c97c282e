import re

import pytest

from ditree import config
from ditree.config import Config, ConfigError


def test_defaults_round_trip():
    cfg = Config()
    assert config.from_text(config.to_text(cfg)) == cfg


def test_override_keeps_other_fields():
    cfg = config.from_text("[planner]\ngoal_bias = 0.2\n[car]\nD_min = -0.5\n[train]\nhidden = 32, 32\n")
    assert cfg.planner.goal_bias == 0.2
    assert cfg.car.D_min == -0.5 and cfg.car.D_max == 1.0
    assert cfg.train.hidden == (32, 32)
    assert cfg.sample == Config().sample


def test_bool_and_tuple_parsing():
    cfg = config.from_text("[planner]\ndeterministic = yes\n[bench]\nmethods = rrt, ditree\n")
    assert cfg.planner.deterministic is True
    assert cfg.bench.methods == ("rrt", "ditree")


def test_geometry_section():
    cfg = config.from_text("[geometry]\nspheres = 0, 0, 0.3; 0.5, 0, 0.25\n")
    assert cfg.geometry.spheres == ((0.0, 0.0, 0.3), (0.5, 0.0, 0.25))


@pytest.mark.parametrize("text, fragment", [
    ("[nosuch]\nx = 1\n", "unknown section"),
    ("[planner]\nbogus = 1\n", "unknown key"),
    ("[planner]\ngoal_bias = lots\n", "cannot parse"),
    ("[planner]\ndeterministic = maybe\n", "cannot parse"),
    ("[planner]\nn_actions = 40\nprop_mode = fixed\n", "multiple of the horizon"),
    ("[expert]\nhorizon = 8\n", "expert.horizon"),
    ("[bench]\nmethods = rrt, astar\n", "unknown methods"),
    ("[car]\nm = 0\n", "[car]"),
    ("[geometry]\nspheres = 0, 0\n", "x, y, r"),
    ("not an ini file", "no section headers"),
])
def test_bad_config_rejected(text, fragment):
    with pytest.raises(ConfigError, match=re.escape(fragment)):
        config.from_text(text)


def test_load_from_file(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[sample]\nsteps = 8\n")
    assert config.load(p).sample.steps == 8


def test_replace_revalidates():
    with pytest.raises(ValueError):
        Config().replace("planner", goal_bias=2.0)
