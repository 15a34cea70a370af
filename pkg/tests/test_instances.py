import numpy as np
import pytest

from nscmdp.cmdp import StructureError, random_cmdp
from nscmdp.instances import (FIXTURES, Instance, InstanceFormatError, fixture_path, format_instance,
                              load_fixture, load_instance, parse_instance)

TWO = """
layers 1 2 1
actions 2
constraints 1
alpha 0.5
transition 0 0 0 1 1.0
transition 0 0 1 2 1.0
transition 1 1 0 3 1.0
transition 1 1 1 3 1.0
transition 1 2 0 3 1.0
transition 1 2 1 3 1.0
reward 0 0 1.0   # only paying pair
cost 0 0 0 1.0
"""


def test_parse_two_action():
    inst = parse_instance(TWO)
    assert inst.layout.layer_sizes == (1, 2, 1)
    np.testing.assert_array_equal(inst.reward, [1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(inst.costs[:, 0], [1, 0, 0, 0, 0, 0])
    assert inst.cmdp.alpha.tolist() == [0.5]


def test_fixtures_load():
    for name in FIXTURES:
        assert fixture_path(name).is_file()
        inst = load_fixture(name)
        assert isinstance(inst, Instance)
    b = load_fixture("four_layer")
    assert b.layout.n_states == 6 and b.layout.n_actions == 2 and b.cmdp.n_constraints == 2
    with pytest.raises(KeyError):
        fixture_path("nine_layer")


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    cmdp = random_cmdp([1, 3, 2, 1], 3, 2, rng, alpha=[1.0, 2.0])
    inst = Instance(cmdp, rng.random(cmdp.layout.n_pairs), rng.random((cmdp.layout.n_pairs, 2)))
    path = tmp_path / "x.cmdp"
    path.write_text(format_instance(inst))
    back = load_instance(path)
    np.testing.assert_array_equal(back.cmdp.transition, cmdp.transition)
    np.testing.assert_array_equal(back.reward, inst.reward)
    np.testing.assert_array_equal(back.costs, inst.costs)
    np.testing.assert_array_equal(back.cmdp.alpha, cmdp.alpha)


def test_row_sum_error_names_pair():
    bad = TWO.replace("transition 0 0 1 2 1.0", "transition 0 0 1 2 0.9")
    with pytest.raises(StructureError, match=r"x=0, a=1"):
        parse_instance(bad)


@pytest.mark.parametrize("edit,exc", [
    (("alpha 0.5", "alpha 2.5"), StructureError),
    (("alpha 0.5", "alpha 0.5 0.2"), InstanceFormatError),
    (("actions 2", "actions two"), InstanceFormatError),
    (("reward 0 0 1.0", "reward 0 0 1.5"), StructureError),
    (("reward 0 0 1.0", "reward 3 0 1.0"), StructureError),
    (("cost 0 0 0 1.0", "cost 1 0 0 1.0"), StructureError),
    (("transition 1 1 0 3 1.0", "transition 0 1 0 3 1.0"), StructureError),
    (("transition 1 1 0 3 1.0", "transition 1 1 0 9 1.0"), StructureError),
    (("layers 1 2 1", "stages 1 2 1"), InstanceFormatError),
    (("layers 1 2 1", ""), InstanceFormatError),
])
def test_format_errors(edit, exc):
    with pytest.raises(exc):
        parse_instance(TWO.replace(*edit))
