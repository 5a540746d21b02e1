"""Brute-force oracles shared between the module tests and the acceptance
suite.  Everything here is deliberately independent of the implementations
it checks."""

import itertools
import re

from dbtagger.schema import Attribute, Schema, Table, build_schema_graph


def steiner_min_edges(edges, required):
    """Smallest number of edges in any connected edge subset covering the
    required nodes, by exhaustive subset enumeration; None when impossible."""
    required = set(required)
    if len(required) == 1:
        return 0
    edges = [tuple(e) for e in edges]
    for size in range(1, len(edges) + 1):
        for subset in itertools.combinations(edges, size):
            nodes = set()
            for a, b in subset:
                nodes.add(a)
                nodes.add(b)
            if not required <= nodes:
                continue
            # connectivity of the subset graph restricted to its own nodes
            adjacency = {n: set() for n in nodes}
            for a, b in subset:
                adjacency[a].add(b)
                adjacency[b].add(a)
            start = next(iter(required))
            seen = {start}
            frontier = [start]
            while frontier:
                for neighbor in adjacency[frontier.pop()]:
                    if neighbor not in seen:
                        seen.add(neighbor)
                        frontier.append(neighbor)
            if required <= seen:
                return size
    return None


def random_schema_graph(rng, max_tables=8):
    """A random FK schema with <= max_tables tables and its join graph."""
    count = int(rng.integers(2, max_tables + 1))
    names = [f"t{chr(ord('a') + i)}" for i in range(count)]
    tables = []
    fk_lists = {name: [] for name in names}
    pair_pool = list(itertools.combinations(range(count), 2))
    rng.shuffle(pair_pool)
    edge_count = int(rng.integers(1, min(len(pair_pool), 2 * count) + 1))
    for a, b in pair_pool[:edge_count]:
        fk_lists[names[a]].append(names[b])
    for name in names:
        attrs = [Attribute(name="id", is_pk=True, kind="number")]
        for i, ref in enumerate(fk_lists[name]):
            attrs.append(Attribute(name=f"{ref}_ref{i}", is_fk=True, ref_table=ref, kind="number"))
        tables.append(Table(name=name, kind="entity", attributes=tuple(attrs)))
    schema = Schema(name="random", tables=tuple(tables))
    return schema, build_schema_graph(schema)


_IDENT = r"[A-Za-z_][A-Za-z0-9_]*"
_QUALIFIED = rf"{_IDENT}\.{_IDENT}"
_SQL_RE = re.compile(
    rf"^SELECT (\*|{_QUALIFIED}(, {_QUALIFIED})*) FROM {_IDENT}"
    rf"( JOIN {_IDENT} ON {_QUALIFIED} = {_QUALIFIED})*"
    rf"( WHERE {_QUALIFIED} = '(?:[^']|'')*'( AND {_QUALIFIED} = '(?:[^']|'')*')*)?$"
)


def sql_grammar_ok(sql: str) -> bool:
    """Minimal select-join-where grammar check."""
    return _SQL_RE.match(sql) is not None
