import json

import pytest

from innovtree.errors import ScenarioError
from innovtree.scenario import canonical_json, load_scenario, parse_scenario

BASE = """
name = "demo"
seed = 3
horizon = 5.0

[regime]
K = 1000
epsilon_exponent = 0.8

[[traits]]
id = "a"
b = 3.0

[[traits]]
id = "b"
b = 6.0

[migration]
neighbor = 0.5

[initial]
a = 3.0
"""


def test_defaults_are_filled_in():
    sc = parse_scenario(BASE)
    d = sc.data
    assert d["replicates"] == 1 and d["grid"] == {"count": 101} and d["burn_in"] == 0.0
    assert d["competition"] == {"diagonal": 1.0, "neighbor": 1.0}
    assert d["mutation"] == {"policy": "fitter_than_all", "sequence": []}
    assert d["traits"][0] == {"id": "a", "b": 3.0, "d": 0.0, "mu": 0.0}
    assert sc.present_keys == {"name", "seed", "horizon", "regime", "traits", "migration", "initial"}


def test_objects_built_from_scenario():
    sc = parse_scenario(BASE)
    assert sc.catalog.ids == ["a", "b"]
    assert sc.catalog.migration.tolist() == [[0.0, 0.5], [0.5, 0.0]]
    assert sc.regime.epsilon == pytest.approx(1000**-0.8)
    assert sc.regime.sigma == 1.0
    assert sc.initial.density == {0: 3.0}
    assert sc.grid == 101
    assert sc.discovered() is None


def test_canonical_round_trip_keeps_the_digest(scenarios_dir):
    for path in sorted(scenarios_dir.glob("*.toml")):
        sc = load_scenario(path)
        again = parse_scenario(sc.canonical(), "json")
        assert again.digest == sc.digest
        assert again.canonical() == sc.canonical()


def test_digest_ignores_formatting_and_key_order():
    reordered = BASE.replace('seed = 3\nhorizon = 5.0', 'horizon = 5.0\nseed = 3')
    assert parse_scenario(reordered).digest == parse_scenario(BASE).digest
    assert parse_scenario(BASE.replace("b = 3.0", "b = 3")).digest == parse_scenario(BASE).digest
    assert parse_scenario(BASE.replace("seed = 3", "seed = 4")).digest != parse_scenario(BASE).digest


def test_digest_is_sha256_of_canonical_json():
    import hashlib

    sc = parse_scenario(BASE)
    assert sc.digest == hashlib.sha256(canonical_json(sc.data).encode()).hexdigest()
    assert json.loads(sc.canonical()) == sc.data


def test_unknown_top_level_key_is_located():
    with pytest.raises(ScenarioError) as info:
        parse_scenario("colour = 1" + BASE)
    assert "unknown key colour" in str(info.value)
    assert (info.value.line, info.value.column) == (1, 1)


def test_unknown_nested_keys():
    with pytest.raises(ScenarioError, match="regime.kappa"):
        parse_scenario(BASE.replace("K = 1000", "K = 1000\nkappa = 2"))
    with pytest.raises(ScenarioError, match="traits.c"):
        parse_scenario(BASE.replace('b = 6.0', 'b = 6.0\nc = 1'))


def test_malformed_toml_reports_position():
    with pytest.raises(ScenarioError) as info:
        parse_scenario("name = \"x\"\nhorizon = = 3\n")
    assert info.value.line == 2
    assert info.value.column is not None
    assert "line 2" in str(info.value)


def test_malformed_json_reports_position():
    with pytest.raises(ScenarioError) as info:
        parse_scenario('{\n  "name": "x",\n  "seed": ,\n}', "json")
    assert info.value.line == 3


@pytest.mark.parametrize(
    "old,new,match",
    [
        ("epsilon_exponent = 0.8", "epsilon_exponent = 0.8\nepsilon = 0.1", "either"),
        ("a = 3.0\n", "z = 3.0\n", "unknown trait"),
        ('id = "b"', 'id = "a"', "duplicate"),
        ("K = 1000", "K = 10.5", "integer"),
        ("K = 1000", "K = -1", "> 0"),
        ("horizon = 5.0", 'horizon = "long"', "number"),
        ("seed = 3", "seed = true", "number"),
        ('name = "demo"', 'name = "a b"', "name"),
        ("K = 1000", "K = 1000\nepsilon = 2.0", "either"),
    ],
)
def test_invalid_values(old, new, match):
    with pytest.raises(ScenarioError, match=match):
        parse_scenario(BASE.replace(old, new, 1))


def test_model_errors_become_scenario_errors():
    with pytest.raises(ScenarioError, match="epsilon"):
        parse_scenario(BASE.replace("epsilon_exponent = 0.8", "epsilon = 2.0"))


def test_matrix_kernels_and_explicit_policy():
    text = BASE + """
[competition]
matrix = [[1.0, 0.5], [1.5, 1.0]]

[mutation]
policy = "explicit"
sequence = ["b"]
"""
    sc = parse_scenario(text)
    assert sc.catalog.competition.tolist() == [[1.0, 0.5], [1.5, 1.0]]
    assert sc.catalog.mutant_policy.sequence == (1,)
    with pytest.raises(ScenarioError, match="2x2"):
        parse_scenario(text.replace("[[1.0, 0.5], [1.5, 1.0]]", "[[1.0]]"))
    with pytest.raises(ScenarioError, match="explicit"):
        parse_scenario(text.replace('policy = "explicit"', 'policy = "fitter_than_all"'))


def test_grid_and_discovered_forms():
    sc = parse_scenario('discovered = ["b"]\n' + BASE + '\n[grid]\ntimes = [0.0, 1.0, 5.0]\n')
    assert sc.grid == [0.0, 1.0, 5.0]
    assert sc.discovered() == {1}
    assert parse_scenario('discovered = "all"\n' + BASE).discovered() == {0, 1}
    assert parse_scenario('discovered = "initial"\n' + BASE).discovered() == {0}
    with pytest.raises(ScenarioError):
        parse_scenario(BASE + "\n[grid]\ncount = 3\ntimes = [0.0]\n")


def test_json_scenarios_are_accepted(tmp_path):
    sc = parse_scenario(BASE)
    path = tmp_path / "demo.json"
    path.write_text(json.dumps(sc.data))
    assert load_scenario(path).digest == sc.digest


def test_shipped_scenarios_parse(scenarios_dir):
    names = {p.stem for p in scenarios_dir.glob("*.toml")}
    assert {"fig1_tss", "fig2_left", "fig2_right", "fig3", "logistic", "lv2"} <= names
    fig3 = load_scenario(scenarios_dir / "fig3.toml")
    assert fig3.regime.K == 400
    assert fig3.regime.sigma == pytest.approx(400**-1.5)
    assert fig3.catalog.b.tolist() == [3.0, 6.0, 8.0, 10.0, 12.0]
