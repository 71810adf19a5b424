"""Relational persistence layer: schemas with key constraints, immutable
instances with per-fact insert timestamps, conjunctive queries, and atomic
parameterized actions.

An Instance never mutates; apply_action returns either a new Instance or a
ConstraintViolation value describing why the change was rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .exprs import (
    Const,
    DbCount,
    DefinitionError,
    EvalError,
    Param,
    Var,
    Wild,
    eval_expr,
    resolve_term,
)
from .values import ColorType, SCALAR_KINDS, conforms, value_key


@dataclass(frozen=True)
class Column:
    name: str
    color: ColorType

    def __post_init__(self) -> None:
        if self.color.kind not in SCALAR_KINDS:
            raise DefinitionError(f"column {self.name!r}: relation columns must be scalar")


@dataclass(frozen=True)
class Relation:
    name: str
    columns: tuple[Column, ...]
    key: tuple[str, ...]

    def __post_init__(self) -> None:
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DefinitionError(f"relation {self.name!r}: duplicate column names")
        if not self.key:
            raise DefinitionError(f"relation {self.name!r}: key must be non-empty")
        for k in self.key:
            if k not in names:
                raise DefinitionError(f"relation {self.name!r}: key column {k!r} not declared")

    @property
    def arity(self) -> int:
        return len(self.columns)

    def key_indexes(self) -> tuple[int, ...]:
        names = [c.name for c in self.columns]
        return tuple(names.index(k) for k in self.key)


@dataclass(frozen=True)
class Schema:
    relations: tuple[Relation, ...]

    def __post_init__(self) -> None:
        names = [r.name for r in self.relations]
        if len(set(names)) != len(names):
            raise DefinitionError("duplicate relation names in schema")

    def relation(self, name: str) -> Relation:
        for r in self.relations:
            if r.name == name:
                return r
        raise DefinitionError(f"unknown relation {name!r}")

    def has_relation(self, name: str) -> bool:
        return any(r.name == name for r in self.relations)


@dataclass(frozen=True)
class Fact:
    relation: str
    values: tuple


@dataclass(frozen=True)
class ConstraintViolation:
    """Why an instance (or an attempted change) is not compliant.

    kind is "key" or "type"; witnesses are the offending (values, at) rows.
    This is a value the engine reacts to, not an exception.
    """

    relation: str
    kind: str
    key: tuple
    witnesses: tuple
    message: str


def _row_sort(rows: Iterable[tuple]) -> tuple:
    rows = list(rows)
    try:
        # columns are homogeneously typed, so natural ordering agrees with
        # the value_key ordering and is much cheaper
        rows.sort(key=lambda r: (r[0], r[1]))
    except TypeError:
        rows.sort(key=lambda r: (value_key(r[0]), r[1]))
    return tuple(rows)


class Instance:
    """Immutable set of timestamped facts grouped by relation.

    Rows are (values, inserted_at) pairs kept in canonical order.  Lookup
    caches are built lazily per object; since instances never change after
    construction this is safe.
    """

    __slots__ = ("schema", "_rows", "_count_cache")

    def __init__(self, schema: Schema, rows: Mapping[str, Iterable[tuple]] | None = None):
        self.schema = schema
        store: dict[str, tuple] = {r.name: () for r in schema.relations}
        if rows:
            for rel, rs in rows.items():
                if not schema.has_relation(rel):
                    raise DefinitionError(f"unknown relation {rel!r}")
                store[rel] = _row_sort(rs)
        self._rows = store
        self._count_cache: dict = {}

    @classmethod
    def empty(cls, schema: Schema) -> "Instance":
        return cls(schema)

    @classmethod
    def from_facts(cls, schema: Schema, facts: Iterable[tuple]) -> "Instance":
        """facts: iterable of (relation, values, at).  No constraint check is
        performed here; use check_compliance for that."""
        grouped: dict[str, list] = {}
        for rel, values, at in facts:
            grouped.setdefault(rel, []).append((tuple(values), at))
        return cls(schema, grouped)

    def rows(self, relation: str) -> tuple:
        try:
            return self._rows[relation]
        except KeyError:
            raise DefinitionError(f"unknown relation {relation!r}") from None

    def all_rows(self) -> Iterable[tuple]:
        for rel in sorted(self._rows):
            for values, at in self._rows[rel]:
                yield rel, values, at

    def total_facts(self) -> int:
        return sum(len(v) for v in self._rows.values())

    def relation_sizes(self) -> dict[str, int]:
        return {rel: len(rows) for rel, rows in sorted(self._rows.items())}

    def match_rows(self, relation: str, pattern: Optional[Sequence]) -> list[tuple]:
        """Rows whose values agree with pattern (None entries are wildcards;
        a pattern of None matches everything)."""
        rel = self.schema.relation(relation)
        if pattern is None:
            pattern = (None,) * rel.arity
        if len(pattern) != rel.arity:
            raise DefinitionError(
                f"pattern arity {len(pattern)} does not match relation {relation!r} arity {rel.arity}"
            )
        out = []
        for values, at in self.rows(relation):
            if all(p is None or p == v for p, v in zip(pattern, values)):
                out.append((values, at))
        return out

    def match_values(self, relation: str, pattern: Optional[Sequence]) -> list[tuple]:
        return [values for values, _ in self.match_rows(relation, pattern)]

    def count_matching(self, relation: str, pattern: Optional[Sequence]) -> int:
        key = (relation, tuple(pattern) if pattern is not None else None)
        hit = self._count_cache.get(key)
        if hit is None:
            hit = len(self.match_rows(relation, pattern))
            self._count_cache[key] = hit
        return hit

    def contains(self, relation: str, values: tuple) -> bool:
        return any(v == values for v, _ in self.rows(relation))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Instance)
            and self.schema == other.schema
            and self._rows == other._rows
        )

    def __hash__(self):
        raise TypeError("Instance is not hashable")

    def __repr__(self) -> str:
        parts = ", ".join(f"{rel}:{len(rows)}" for rel, rows in sorted(self._rows.items()) if rows)
        return f"Instance({parts or 'empty'})"


# ---------------------------------------------------------------------------
# queries

@dataclass(frozen=True)
class Atom:
    relation: str
    terms: tuple


@dataclass(frozen=True)
class Filter:
    """Comparison between terms; either side may also be a DbCount."""

    op: str
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Query:
    name: str
    params: tuple = ()  # (name, ColorType) pairs
    atoms: tuple = ()
    filters: tuple = ()
    output: tuple = ()  # projected variable names
    order_by: Optional[tuple] = None  # indexes into output


_FILTER_OPS = {"=", "!=", "<", "<=", ">", ">="}


def _query_check(schema: Schema, query: Query) -> None:
    if getattr(query, "_checked_against", None) is schema:
        return
    bound: set[str] = set()
    for i, atom in enumerate(query.atoms):
        rel = schema.relation(atom.relation)
        if len(atom.terms) != rel.arity:
            raise DefinitionError(
                f"query {query.name!r} atom {i}: arity {len(atom.terms)} != {rel.arity}"
            )
        for t in atom.terms:
            if isinstance(t, Var):
                bound.add(t.name)
    param_names = {p[0] for p in query.params}
    for f in query.filters:
        if f.op not in _FILTER_OPS:
            raise DefinitionError(f"query {query.name!r}: bad filter op {f.op!r}")
        for side in (f.lhs, f.rhs):
            for v in _filter_vars(side):
                if v not in bound:
                    raise DefinitionError(f"query {query.name!r}: filter uses unbound variable {v!r}")
            for p in _filter_params(side):
                if p not in param_names:
                    raise DefinitionError(f"query {query.name!r}: unknown parameter {p!r}")
    for v in query.output:
        if v not in bound:
            raise DefinitionError(f"query {query.name!r}: output variable {v!r} is unbound")
    if query.order_by is not None:
        for idx in query.order_by:
            if not (0 <= idx < len(query.output)):
                raise DefinitionError(f"query {query.name!r}: order_by index {idx} out of range")
    object.__setattr__(query, "_checked_against", schema)


def _filter_vars(side) -> list[str]:
    if isinstance(side, Var):
        return [side.name]
    if isinstance(side, DbCount):
        return [t.name for t in side.terms if isinstance(t, Var)]
    return []


def _filter_params(side) -> list[str]:
    if isinstance(side, Param):
        return [side.name]
    if isinstance(side, DbCount):
        return [t.name for t in side.terms if isinstance(t, Param)]
    return []


def eval_query(instance: Instance, query: Query, args: Sequence = ()) -> tuple:
    """Evaluate a conjunctive query with comparison/count filters.

    Returns a tuple of result rows (each a tuple), de-duplicated and in
    canonical lexicographic order unless order_by overrides it.
    """
    schema = instance.schema
    _query_check(schema, query)
    if len(args) != len(query.params):
        raise DefinitionError(
            f"query {query.name!r} expects {len(query.params)} args, got {len(args)}"
        )
    if (
        not query.filters
        and not query.params
        and not query.order_by
        and len(query.atoms) == 1
    ):
        # whole-relation scan projected to the atom's own variables, in the
        # relation's canonical row order: return rows directly
        atom = query.atoms[0]
        terms = atom.terms
        if (
            all(type(t) is Var for t in terms)
            and len({t.name for t in terms}) == len(terms)
            and tuple(query.output) == tuple(t.name for t in terms)
        ):
            return tuple(v for v, _ in instance.rows(atom.relation))
    arg_env: dict[str, object] = {}
    for (pname, pcolor), a in zip(query.params, args):
        if not conforms(a, pcolor):
            raise DefinitionError(f"query {query.name!r}: argument {pname!r} has wrong type")
        arg_env[pname] = a

    envs: list[dict] = [{}]
    for atom in query.atoms:
        next_envs: list[dict] = []
        for env in envs:
            pattern = []
            free: list[tuple[int, str]] = []
            for idx, t in enumerate(atom.terms):
                if isinstance(t, Wild):
                    pattern.append(None)
                elif isinstance(t, Const):
                    pattern.append(t.value)
                elif isinstance(t, Param):
                    pattern.append(arg_env[t.name])
                elif isinstance(t, Var):
                    if t.name in env:
                        pattern.append(env[t.name])
                    else:
                        pattern.append(None)
                        free.append((idx, t.name))
                else:
                    raise DefinitionError(f"query {query.name!r}: bad atom term {t!r}")
            for values, _at in instance.match_rows(atom.relation, pattern):
                env2 = env
                ok = True
                for idx, name in free:
                    if env2 is env:
                        env2 = dict(env)
                    if name in env2 and env2[name] != values[idx]:
                        ok = False
                        break
                    env2[name] = values[idx]
                if ok:
                    next_envs.append(env2 if env2 is not env else dict(env))
        envs = next_envs
        if not envs:
            break

    def side_value(side, env):
        if isinstance(side, DbCount):
            pattern = tuple(
                None if isinstance(t, Wild) else resolve_term(t, env, arg_env) for t in side.terms
            )
            return instance.count_matching(side.relation, pattern)
        return resolve_term(side, env, arg_env)

    from .exprs import _CMP  # comparison table shared with guards

    kept = []
    for env in envs:
        ok = True
        for f in query.filters:
            if not _CMP[f.op](side_value(f.lhs, env), side_value(f.rhs, env)):
                ok = False
                break
        if ok:
            kept.append(tuple(env[v] for v in query.output))

    rows = sorted(set(kept), key=lambda r: tuple(value_key(v) for v in r))
    if query.order_by is not None:
        rows.sort(key=lambda r: tuple(value_key(r[i]) for i in query.order_by))
    return tuple(rows)


# ---------------------------------------------------------------------------
# actions

@dataclass(frozen=True)
class FactTemplate:
    relation: str
    terms: tuple  # additions: Param/Const; deletions may also use Wild


@dataclass(frozen=True)
class Action:
    """Parameterized atomic change: deletions applied first, then additions
    stamped with the firing time."""

    name: str
    params: tuple = ()  # (name, ColorType) pairs
    adds: tuple = ()
    dels: tuple = ()


def _action_check(schema: Schema, action: Action) -> None:
    if getattr(action, "_checked_against", None) is schema:
        return
    param_names = {p[0] for p in action.params}
    for tmpl in action.adds + action.dels:
        rel = schema.relation(tmpl.relation)
        if len(tmpl.terms) != rel.arity:
            raise DefinitionError(
                f"action {action.name!r}: template for {tmpl.relation!r} has wrong arity"
            )
        allow_wild = tmpl in action.dels
        for t in tmpl.terms:
            if isinstance(t, Wild):
                if not allow_wild:
                    raise DefinitionError(
                        f"action {action.name!r}: wildcard not allowed in additions"
                    )
            elif isinstance(t, Param):
                if t.name not in param_names:
                    raise DefinitionError(f"action {action.name!r}: unknown parameter {t.name!r}")
            elif not isinstance(t, Const):
                raise DefinitionError(f"action {action.name!r}: bad template term {t!r}")
    object.__setattr__(action, "_checked_against", schema)


def _typecheck_row(rel: Relation, values: tuple) -> Optional[str]:
    if len(values) != rel.arity:
        return f"arity {len(values)} != {rel.arity}"
    for col, v in zip(rel.columns, values):
        if not conforms(v, col.color):
            return f"column {col.name!r} expects {col.color.kind}, got {v!r}"
    return None


def apply_action_delta(
    instance: Instance, action: Action, args: Sequence, at: int
):
    """Core of apply_action; also reports the net change.

    Returns (new_instance, added, deleted) with added/deleted lists of
    (relation, values, at) rows, or a ConstraintViolation.
    """
    schema = instance.schema
    _action_check(schema, action)
    if len(args) != len(action.params):
        raise DefinitionError(
            f"action {action.name!r} expects {len(action.params)} args, got {len(args)}"
        )
    arg_env: dict[str, object] = {}
    for (pname, pcolor), a in zip(action.params, args):
        if not conforms(a, pcolor):
            raise DefinitionError(f"action {action.name!r}: argument {pname!r} has wrong type")
        arg_env[pname] = a

    work: dict[str, list] = {}  # only relations the action touches

    def bucket(rel_name: str) -> list:
        if rel_name not in work:
            work[rel_name] = list(instance.rows(rel_name))
        return work[rel_name]

    deleted: list[tuple] = []
    for tmpl in action.dels:
        pattern = [None if isinstance(t, Wild) else resolve_term(t, {}, arg_env) for t in tmpl.terms]
        keep = []
        for values, ts in bucket(tmpl.relation):
            if all(p is None or p == v for p, v in zip(pattern, values)):
                deleted.append((tmpl.relation, values, ts))
            else:
                keep.append((values, ts))
        work[tmpl.relation] = keep

    added: list[tuple] = []
    for tmpl in action.adds:
        rel = schema.relation(tmpl.relation)
        values = tuple(resolve_term(t, {}, arg_env) for t in tmpl.terms)
        err = _typecheck_row(rel, values)
        if err is not None:
            return ConstraintViolation(
                relation=tmpl.relation,
                kind="type",
                key=values,
                witnesses=((values, at),),
                message=f"type constraint on {tmpl.relation!r}: {err}",
            )
        bucket(tmpl.relation).append((values, at))
        added.append((tmpl.relation, values, at))

    # key check only where something was added
    for relname in {a[0] for a in added}:
        rel = schema.relation(relname)
        kidx = rel.key_indexes()
        seen: dict[tuple, tuple] = {}
        for values, ts in work[relname]:
            k = tuple(values[i] for i in kidx)
            if k in seen:
                return ConstraintViolation(
                    relation=relname,
                    kind="key",
                    key=k,
                    witnesses=(seen[k], (values, ts)),
                    message=f"duplicate key {k!r} in relation {relname!r}",
                )
            seen[k] = (values, ts)

    store = dict(instance._rows)
    for rel_name, rows in work.items():
        store[rel_name] = _row_sort(rows)
    new = Instance.__new__(Instance)
    new.schema = schema
    new._rows = store
    new._count_cache = {}
    return new, added, deleted


def apply_action(instance: Instance, action: Action, args: Sequence, at: int):
    """Apply an action atomically.  Returns the new Instance, or a
    ConstraintViolation leaving the original untouched."""
    res = apply_action_delta(instance, action, args, at)
    if isinstance(res, ConstraintViolation):
        return res
    return res[0]


def check_compliance(instance: Instance, schema: Schema | None = None) -> list[ConstraintViolation]:
    """All key and type violations in an instance, in deterministic order."""
    schema = schema or instance.schema
    out: list[ConstraintViolation] = []
    for rel in schema.relations:
        rows = instance.rows(rel.name)
        for values, ts in rows:
            err = _typecheck_row(rel, values)
            if err is not None:
                out.append(
                    ConstraintViolation(rel.name, "type", values, ((values, ts),), f"type constraint on {rel.name!r}: {err}")
                )
        kidx = rel.key_indexes()
        groups: dict[tuple, list] = {}
        for values, ts in rows:
            if len(values) != rel.arity:
                continue
            groups.setdefault(tuple(values[i] for i in kidx), []).append((values, ts))
        for k in sorted(groups, key=lambda kk: tuple(value_key(v) for v in kk)):
            members = groups[k]
            if len(members) > 1:
                out.append(
                    ConstraintViolation(rel.name, "key", k, tuple(members), f"duplicate key {k!r} in relation {rel.name!r}")
                )
    return out
