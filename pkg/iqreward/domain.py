"""Domain ontologies and their entity databases.

Ontology file (JSON):

    {
      "name": "letsgo4",
      "slots": [{"name": "origin", "lexical": "departure stop", "values": [...]}, ...],
      "db_gen": {"size": 10000, "seed": 4},          # or "db": [{slot: value, ...}, ...]
      "payload_template": "the next {route} leaves at {time}"
    }

The database is held as an (N, S) matrix of value codes so constraint
queries are a single vectorised comparison.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Mapping, Sequence
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

logger = logging.getLogger(__name__)


class SlotSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(min_length=1)
    values: list[str] = Field(min_length=1)
    lexical: Optional[str] = None

    @model_validator(mode="after")
    def _unique_values(self) -> "SlotSpec":
        if len(set(self.values)) != len(self.values):
            raise ValueError(f"slot {self.name!r} lists a value twice")
        return self

    @property
    def lex(self) -> str:
        return self.lexical or self.name.replace("_", " ")


class DbGen(BaseModel):
    model_config = ConfigDict(extra="forbid")

    size: int = Field(ge=0)
    seed: int = Field(default=0, ge=0)


class OntologyFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    slots: list[SlotSpec] = Field(min_length=1)
    db: Optional[list[dict[str, str]]] = None
    db_gen: Optional[DbGen] = None
    payload_template: Optional[str] = None

    @model_validator(mode="after")
    def _one_db_source(self) -> "OntologyFile":
        if (self.db is None) == (self.db_gen is None):
            raise ValueError("ontology needs exactly one of 'db' or 'db_gen'")
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise ValueError("slot names must be unique")
        return self


class DomainSpec:
    """An ontology plus its database. Immutable after construction."""

    def __init__(
        self,
        name: str,
        slots: Sequence[SlotSpec],
        codes: np.ndarray,
        payload_template: Optional[str] = None,
        db_seed: int = 0,
    ):
        self.name = name
        self.slots: tuple[SlotSpec, ...] = tuple(slots)
        self.slot_names: tuple[str, ...] = tuple(s.name for s in self.slots)
        self._slot_pos = {s.name: i for i, s in enumerate(self.slots)}
        self._value_code = {s.name: {v: j for j, v in enumerate(s.values)} for s in self.slots}
        codes = np.asarray(codes, dtype=np.int32).reshape(-1, len(self.slots))
        codes.setflags(write=False)
        self.codes = codes
        self.payload_template = payload_template
        self.db_seed = db_seed

    @property
    def db_size(self) -> int:
        return int(self.codes.shape[0])

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    def slot(self, name: str) -> SlotSpec:
        try:
            return self.slots[self._slot_pos[name]]
        except KeyError:
            raise KeyError(f"domain {self.name!r} has no slot {name!r}") from None

    def value_code(self, slot: str, value: str) -> int:
        codes = self._value_code.get(slot)
        if codes is None:
            raise KeyError(f"domain {self.name!r} has no slot {slot!r}")
        try:
            return codes[value]
        except KeyError:
            raise KeyError(f"{value!r} is not a value of slot {slot!r}") from None

    def entity(self, row: int) -> dict[str, str]:
        return {s.name: s.values[int(c)] for s, c in zip(self.slots, self.codes[row])}

    def payload(self, row: int) -> str:
        if not self.payload_template:
            return ""
        return self.payload_template.format(**self.entity(row))

    def match_rows(self, constraints: Mapping[str, str]) -> np.ndarray:
        """Row indices of entities matching every constraint."""
        hit = np.ones(self.db_size, dtype=bool)
        for slot, value in constraints.items():
            column = self._slot_pos.get(slot)
            if column is None:
                raise KeyError(f"domain {self.name!r} has no slot {slot!r}")
            hit &= self.codes[:, column] == self.value_code(slot, value)
        return np.flatnonzero(hit)

    def count_matches(self, constraints: Mapping[str, str]) -> int:
        return int(self.match_rows(constraints).size)

    def with_codes(self, codes: np.ndarray, db_seed: int) -> "DomainSpec":
        return DomainSpec(self.name, self.slots, codes, self.payload_template, db_seed)

    def __repr__(self) -> str:
        return f"DomainSpec({self.name!r}, slots={list(self.slot_names)}, db_size={self.db_size})"


def db_query(spec: DomainSpec, constraints: Mapping[str, str]) -> list[dict[str, str]]:
    """Entities matching ALL given constraints; an empty map matches everything."""
    return [spec.entity(int(row)) for row in spec.match_rows(constraints)]


def generate_db(spec: DomainSpec, size: int, seed: int) -> DomainSpec:
    """Uniform random value tuples over the slot value sets, deduplicated."""
    sizes = [len(s.values) for s in spec.slots]
    capacity = float(np.prod([float(n) for n in sizes]))
    if size < 0:
        raise ValueError(f"database size must be nonnegative, got {size}")
    if size > capacity:
        raise ValueError(f"cannot draw {size} distinct entities from {int(capacity)} value combinations")
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    rows: list[tuple[int, ...]] = []
    while len(rows) < size:
        batch = np.stack([rng.integers(0, n, size=max(size, 1)) for n in sizes], axis=1)
        for row in map(tuple, batch.tolist()):
            if row in seen:
                continue
            seen.add(row)
            rows.append(row)
            if len(rows) == size:
                break
    codes = np.array(rows, dtype=np.int32).reshape(size, len(sizes))
    logger.debug("generated %d entities for %s (seed %d)", size, spec.name, seed)
    return spec.with_codes(codes, seed)


def _read_ontology(path: str | Path) -> tuple[str, dict[str, Any]]:
    candidate = Path(path)
    if candidate.suffix != ".json" and not candidate.exists():
        resource = resources.files("iqreward") / "domains" / f"{path}.json"
        if not resource.is_file():
            raise FileNotFoundError(f"no ontology file or bundled domain named {path!r}")
        source, text = f"<bundled {path}>", resource.read_text(encoding="utf-8")
    else:
        source, text = str(candidate), candidate.read_text(encoding="utf-8")
    try:
        return source, json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def domain_from_dict(data: Mapping[str, Any], source: str = "<dict>", db_size: Optional[int] = None) -> DomainSpec:
    try:
        onto = OntologyFile.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ValueError(f"{source}: {location}: {first['msg']}") from exc
    shell = DomainSpec(onto.name, onto.slots, np.zeros((0, len(onto.slots))), onto.payload_template)
    if onto.db is not None:
        rows = []
        for i, entity in enumerate(onto.db):
            missing = [s for s in shell.slot_names if s not in entity]
            if missing:
                raise ValueError(f"{source}: db.{i}: missing slot {missing[0]!r}")
            try:
                rows.append([shell.value_code(s, entity[s]) for s in shell.slot_names])
            except KeyError as exc:
                raise ValueError(f"{source}: db.{i}: {exc.args[0]}") from None
        spec = shell.with_codes(np.array(rows, dtype=np.int32), 0)
        if db_size is not None and db_size != spec.db_size:
            spec = generate_db(spec, db_size, 0)
        return spec
    assert onto.db_gen is not None
    size = onto.db_gen.size if db_size is None else db_size
    return generate_db(shell, size, onto.db_gen.seed)


def load_domain(path: str | Path, db_size: Optional[int] = None) -> DomainSpec:
    """Load an ontology file, or a bundled domain by name (``letsgo4``...).

    ``db_size`` replaces the fixture's database with a freshly generated one
    of that size (same generator seed).
    """
    source, data = _read_ontology(path)
    spec = domain_from_dict(data, source, db_size)
    logger.info("loaded domain %s: %d slots, %d entities", spec.name, spec.num_slots, spec.db_size)
    return spec


def bundled_domains() -> list[str]:
    folder = resources.files("iqreward") / "domains"
    return sorted(entry.name[: -len(".json")] for entry in folder.iterdir() if entry.name.endswith(".json"))
