"""Scenario files: one TOML or JSON description shared by every subcommand.

A scenario names the trait catalog, the scaling regime, the initial
configuration and the run controls.  Parsing fills in defaults and produces a
canonical dictionary whose JSON serialisation is hashed into a stable digest.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InnovtreeError, ScenarioError
from .model import Configuration, MutantPolicy, ScalingRegime, TraitCatalog, TraitParams

TOP_KEYS = {
    "name", "seed", "horizon", "replicates", "burn_in", "discovered", "grid", "regime", "traits",
    "competition", "migration", "mutation", "initial", "ode", "jump", "outputs",
}  # fmt: skip
TABLE_KEYS = {
    "grid": {"count", "times"},
    "regime": {"K", "epsilon", "epsilon_exponent", "sigma", "sigma_exponent"},
    "competition": {"diagonal", "neighbor", "matrix"},
    "migration": {"neighbor", "matrix"},
    "mutation": {"policy", "sequence"},
    "ode": {"include_migration"},
    "jump": {"start", "horizon"},
    "outputs": {"dir"},
}
TRAIT_KEYS = {"id", "b", "d", "mu"}


def _locate(text: str | None, key: str) -> tuple[int | None, int | None]:
    """Best-effort position of the first occurrence of ``key`` in the source text."""
    if not text:
        return None, None
    pattern = re.compile(r'(^|[\s{,\["])' + re.escape(key) + r'["\s]*[=:\]]')
    for lineno, line in enumerate(text.splitlines(), 1):
        m = pattern.search(line)
        if m:
            return lineno, m.start() + len(m.group(1)) + 1
    return None, None


class _Ctx:
    def __init__(self, text):
        self.text = text

    def error(self, message, key=None):
        line, col = _locate(self.text, key) if key else (None, None)
        return ScenarioError(message, line, col)


def _number(ctx, value, key, *, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ctx.error(f"{key} must be a number, got {value!r}", key)
    if integer and (not float(value).is_integer()):
        raise ctx.error(f"{key} must be an integer, got {value!r}", key)
    if not math.isfinite(value):
        raise ctx.error(f"{key} must be finite", key)
    if positive and value <= 0:
        raise ctx.error(f"{key} must be > 0, got {value!r}", key)
    if nonneg and value < 0:
        raise ctx.error(f"{key} must be >= 0, got {value!r}", key)
    return int(value) if integer else float(value)


def _table(ctx, raw, name):
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ctx.error(f"{name} must be a table", name)
    unknown = set(value) - TABLE_KEYS[name]
    if unknown:
        key = sorted(unknown)[0]
        raise ctx.error(f"unknown key {name}.{key}", key)
    return value


def _matrix(ctx, value, n, key):
    if not (isinstance(value, list) and len(value) == n and all(isinstance(r, list) and len(r) == n for r in value)):
        raise ctx.error(f"{key} must be a {n}x{n} array", key)
    return [[_number(ctx, v, key, nonneg=True) for v in row] for row in value]


def normalize(raw: dict, text: str | None = None) -> dict:
    """Validate a raw scenario mapping and return it with every default filled in."""
    ctx = _Ctx(text)
    if not isinstance(raw, dict):
        raise ctx.error("a scenario must be a table at the top level")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ctx.error(f"unknown key {key}", key)

    traits_raw = raw.get("traits")
    if not isinstance(traits_raw, list) or not traits_raw:
        raise ctx.error("at least one [[traits]] entry is required", "traits")
    traits = []
    for t in traits_raw:
        if not isinstance(t, dict):
            raise ctx.error("each trait must be a table", "traits")
        bad = set(t) - TRAIT_KEYS
        if bad:
            key = sorted(bad)[0]
            raise ctx.error(f"unknown key traits.{key}", key)
        if "id" not in t or not isinstance(t["id"], str) or not t["id"]:
            raise ctx.error("every trait needs a non-empty string id", "traits")
        if "b" not in t:
            raise ctx.error(f"trait {t['id']!r} needs a birth rate b", "traits")
        traits.append(
            {
                "id": t["id"],
                "b": _number(ctx, t["b"], "b", nonneg=True),
                "d": _number(ctx, t.get("d", 0.0), "d", nonneg=True),
                "mu": _number(ctx, t.get("mu", 0.0), "mu", nonneg=True),
            }
        )
    ids = [t["id"] for t in traits]
    if len(set(ids)) != len(ids):
        raise ctx.error(f"duplicate trait ids {ids}", "id")
    n = len(traits)

    comp = _table(ctx, raw, "competition")
    if "matrix" in comp:
        if "diagonal" in comp or "neighbor" in comp:
            raise ctx.error("competition takes either a matrix or diagonal/neighbor", "matrix")
        competition = {"matrix": _matrix(ctx, comp["matrix"], n, "matrix")}
    else:
        competition = {
            "diagonal": _number(ctx, comp.get("diagonal", 1.0), "diagonal", nonneg=True),
            "neighbor": _number(ctx, comp.get("neighbor", 1.0), "neighbor", nonneg=True),
        }

    mig = _table(ctx, raw, "migration")
    if "matrix" in mig:
        if "neighbor" in mig:
            raise ctx.error("migration takes either a matrix or neighbor", "matrix")
        migration = {"matrix": _matrix(ctx, mig["matrix"], n, "matrix")}
    else:
        migration = {"neighbor": _number(ctx, mig.get("neighbor", 0.0), "neighbor", nonneg=True)}

    mut = _table(ctx, raw, "mutation")
    policy = mut.get("policy", "fitter_than_all")
    if policy not in MutantPolicy.KINDS:
        raise ctx.error(f"mutation.policy must be one of {', '.join(MutantPolicy.KINDS)}", "policy")
    sequence = mut.get("sequence", [])
    if not isinstance(sequence, list) or any(s not in ids for s in sequence):
        raise ctx.error("mutation.sequence must list known trait ids", "sequence")
    if sequence and policy != "explicit":
        raise ctx.error("mutation.sequence is only used by the explicit policy", "sequence")

    reg = _table(ctx, raw, "regime")
    if "K" not in reg:
        raise ctx.error("regime.K is required", "regime")
    regime: dict[str, Any] = {"K": _number(ctx, reg["K"], "K", positive=True, integer=True)}
    for name in ("epsilon", "sigma"):
        exp_key = f"{name}_exponent"
        if name in reg and exp_key in reg:
            raise ctx.error(f"give either regime.{name} or regime.{exp_key}", exp_key)
        if exp_key in reg:
            regime[exp_key] = _number(ctx, reg[exp_key], exp_key, nonneg=True)
        else:
            regime[name] = _number(ctx, reg.get(name, 1.0), name, positive=True)

    grid = _table(ctx, raw, "grid")
    if "count" in grid and "times" in grid:
        raise ctx.error("grid takes either count or times", "times")
    if "times" in grid:
        times = grid["times"]
        if not isinstance(times, list) or not times:
            raise ctx.error("grid.times must be a non-empty list", "times")
        grid_out: dict[str, Any] = {"times": [_number(ctx, t, "times", nonneg=True) for t in times]}
    else:
        grid_out = {"count": _number(ctx, grid.get("count", 101), "count", positive=True, integer=True)}

    initial_raw = raw.get("initial", {})
    if not isinstance(initial_raw, dict):
        raise ctx.error("initial must be a table of trait id = density", "initial")
    for key in initial_raw:
        if key not in ids:
            raise ctx.error(f"initial refers to unknown trait {key!r}", key)
    initial = {i: _number(ctx, initial_raw[i], i, nonneg=True) for i in ids if i in initial_raw}

    discovered = raw.get("discovered", "auto")
    if isinstance(discovered, list):
        if any(d not in ids for d in discovered):
            raise ctx.error("discovered must list known trait ids", "discovered")
        discovered = [i for i in ids if i in discovered]
    elif discovered not in ("auto", "all", "initial"):
        raise ctx.error("discovered must be auto, all, initial or a list of ids", "discovered")

    ode = _table(ctx, raw, "ode")
    include = ode.get("include_migration", True)
    if not isinstance(include, bool):
        raise ctx.error("ode.include_migration must be true or false", "include_migration")

    jump = _table(ctx, raw, "jump")
    start = jump.get("start", ids[0])
    if start not in ids:
        raise ctx.error(f"jump.start refers to unknown trait {start!r}", "start")

    outputs = _table(ctx, raw, "outputs")
    out_dir = outputs.get("dir", ".")
    if not isinstance(out_dir, str):
        raise ctx.error("outputs.dir must be a string", "dir")

    name = raw.get("name", "scenario")
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise ctx.error("name must be a non-empty string of letters, digits, '_', '-' or '.'", "name")

    horizon = _number(ctx, raw.get("horizon", 10.0), "horizon", nonneg=True)
    return {
        "name": name,
        "seed": _number(ctx, raw.get("seed", 0), "seed", nonneg=True, integer=True),
        "horizon": horizon,
        "replicates": _number(ctx, raw.get("replicates", 1), "replicates", positive=True, integer=True),
        "burn_in": _number(ctx, raw.get("burn_in", 0.0), "burn_in", nonneg=True),
        "discovered": discovered,
        "grid": grid_out,
        "regime": regime,
        "traits": traits,
        "competition": competition,
        "migration": migration,
        "mutation": {"policy": policy, "sequence": list(sequence)},
        "initial": initial,
        "ode": {"include_migration": include},
        "jump": {
            "start": start,
            "horizon": _number(ctx, jump.get("horizon", 1.0), "horizon", nonneg=True),
        },
        "outputs": {"dir": out_dir},
    }


def canonical_json(data: dict) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def digest(data: dict) -> str:
    return hashlib.sha256(canonical_json(data).encode("ascii")).hexdigest()


@dataclass(frozen=True)
class Scenario:
    data: dict  # normalised form
    present_keys: frozenset  # top-level keys written in the source
    source: str | None = None

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def digest(self) -> str:
        return digest(self.data)

    def canonical(self) -> str:
        return canonical_json(self.data)

    @property
    def catalog(self) -> TraitCatalog:
        d = self.data
        n = len(d["traits"])
        ids = [t["id"] for t in d["traits"]]
        traits = [TraitParams(t["id"], t["b"], t["d"]) for t in d["traits"]]
        comp, mig = d["competition"], d["migration"]
        if "matrix" in comp:
            alpha = comp["matrix"]
        else:
            alpha = [
                [comp["diagonal"] if i == j else comp["neighbor"] if abs(i - j) == 1 else 0.0 for j in range(n)]
                for i in range(n)
            ]
        if "matrix" in mig:
            m = mig["matrix"]
        else:
            m = [[mig["neighbor"] if abs(i - j) == 1 else 0.0 for j in range(n)] for i in range(n)]
        seq = tuple(ids.index(s) for s in d["mutation"]["sequence"])
        policy = MutantPolicy(d["mutation"]["policy"], seq)
        return TraitCatalog(traits, alpha, m, [t["mu"] for t in d["traits"]], policy)

    @property
    def regime(self) -> ScalingRegime:
        r = self.data["regime"]
        K = r["K"]
        eps = float(K) ** -r["epsilon_exponent"] if "epsilon_exponent" in r else r["epsilon"]
        sig = float(K) ** -r["sigma_exponent"] if "sigma_exponent" in r else r["sigma"]
        return ScalingRegime(K, eps, sig)

    @property
    def initial(self) -> Configuration:
        ids = [t["id"] for t in self.data["traits"]]
        return Configuration({ids.index(k): v for k, v in self.data["initial"].items()})

    @property
    def grid(self):
        g = self.data["grid"]
        return g["times"] if "times" in g else g["count"]

    def discovered(self) -> set[int] | None:
        disc = self.data["discovered"]
        if disc == "auto":
            return None
        if disc == "all":
            return set(range(len(self.data["traits"])))
        if disc == "initial":
            return set(self.initial.support)
        ids = [t["id"] for t in self.data["traits"]]
        return {ids.index(x) for x in disc}


def _toml_position(exc) -> tuple[int | None, int | None]:
    line = getattr(exc, "lineno", None)
    col = getattr(exc, "colno", None)
    if line is None:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        if m:
            line, col = int(m.group(1)), int(m.group(2))
    return line, col


def parse_scenario(text: str, fmt: str = "toml") -> Scenario:
    if fmt == "toml":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            line, col = _toml_position(exc)
            msg = getattr(exc, "msg", None) or re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
            raise ScenarioError(f"invalid TOML: {msg}", line, col) from None
    elif fmt == "json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    else:
        raise ScenarioError(f"unknown scenario format {fmt!r}")
    data = normalize(raw, text)
    scenario = Scenario(data, frozenset(raw), text)
    try:
        scenario.catalog
        scenario.regime
        scenario.initial
    except InnovtreeError as exc:
        raise ScenarioError(str(exc)) from None
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scenario(text, "json" if path.suffix.lower() == ".json" else "toml")
