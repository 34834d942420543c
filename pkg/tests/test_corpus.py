from __future__ import annotations

import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rustport.corpus import (
    CodeMetrics,
    CorpusError,
    extract_code_metrics,
    load_corpus,
    strip_dead_functions,
    write_corpus,
)

from conftest import ADD_C_SOURCE, ADD_CASES, write_program_dir

# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def test_empty_directory_gives_empty_corpus(tmp_path):
    assert load_corpus(tmp_path) == []


def test_two_programs_loaded_in_id_order(tmp_path):
    # enumerated by hand: beta written first, alpha second; ids sort alpha < beta
    write_program_dir(tmp_path, "beta", cases=[("1 1\n", "2\n")])
    write_program_dir(tmp_path, "alpha")
    programs = load_corpus(tmp_path)
    assert [p.id for p in programs] == ["alpha", "beta"]
    assert [(c.input, c.expected_output) for c in programs[0].test_cases] == ADD_CASES
    assert len(programs[1].test_cases) == 1
    assert programs[0].source_text == ADD_C_SOURCE  # nothing dead to strip


def test_program_without_tests_excluded_with_warning(tmp_path, caplog):
    write_program_dir(tmp_path, "good")
    bad = tmp_path / "no_tests"
    bad.mkdir()
    (bad / "main.c").write_text(ADD_C_SOURCE, encoding="utf-8")
    with caplog.at_level(logging.WARNING):
        programs = load_corpus(tmp_path)
    assert [p.id for p in programs] == ["good"]
    assert any("no usable test cases" in rec.message for rec in caplog.records)


def test_program_without_source_skipped(tmp_path, caplog):
    write_program_dir(tmp_path, "good")
    (tmp_path / "empty_dir").mkdir()
    with caplog.at_level(logging.WARNING):
        programs = load_corpus(tmp_path)
    assert [p.id for p in programs] == ["good"]


def test_unreadable_root_is_fatal(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "does_not_exist")


def test_unpaired_test_input_skipped(tmp_path, caplog):
    prog = write_program_dir(tmp_path, "prog")
    (prog / "tests" / "9.in").write_text("1 2\n", encoding="utf-8")  # no 9.out
    with caplog.at_level(logging.WARNING):
        programs = load_corpus(tmp_path)
    assert len(programs[0].test_cases) == len(ADD_CASES)


def test_meta_json_coverage_is_picked_up(tmp_path):
    prog = write_program_dir(tmp_path, "prog")
    (prog / "meta.json").write_text('{"coverage": {"line": 0.91, "function": 0.975}}')
    programs = load_corpus(tmp_path)
    assert programs[0].coverage == {"line": 0.91, "function": 0.975}


def test_corpus_round_trips_through_serialization(tmp_path):
    write_program_dir(tmp_path / "src", "alpha")
    write_program_dir(tmp_path / "src", "beta", cases=[("7 8\n", "15\n")])
    first = load_corpus(tmp_path / "src")
    write_corpus(first, tmp_path / "copy")
    second = load_corpus(tmp_path / "copy")
    assert [p.id for p in first] == [p.id for p in second]
    assert [p.source_text for p in first] == [p.source_text for p in second]
    assert [p.test_cases for p in first] == [p.test_cases for p in second]


# ---------------------------------------------------------------------------
# dead-function removal
# ---------------------------------------------------------------------------

_HELPER_TEXT = "int unused_helper(int y) {\n    return y - 1;\n}\n"

_DEAD_FIXTURE = (
    "#include <stdio.h>\n"
    "\n"
    "static int twice(int x) {\n"
    "    return x * 2;\n"
    "}\n"
    "\n" + _HELPER_TEXT + "\n"
    "int main(void) {\n"
    '    printf("%d\\n", twice(21));\n'
    "    return 0;\n"
    "}\n"
)


def test_uncalled_helper_removed_rest_unchanged():
    # call graph built by hand: main -> twice; unused_helper unreachable
    expected = _DEAD_FIXTURE.replace(_HELPER_TEXT, "")
    assert strip_dead_functions(_DEAD_FIXTURE) == expected


def test_entry_point_only_program_unchanged():
    src = "int main(void) {\n    return 0;\n}\n"
    assert strip_dead_functions(src) == src


def test_mutually_recursive_orphans_both_removed():
    # reachability closure from main is {main}; ping/pong only reach each other
    src = (
        "int ping(int x);\n"
        "int pong(int x) {\n"
        "    return ping(x - 1);\n"
        "}\n"
        "int ping(int x) {\n"
        "    return pong(x + 1);\n"
        "}\n"
        "int main(void) {\n"
        "    return 0;\n"
        "}\n"
    )
    stripped = strip_dead_functions(src)
    assert "return ping" not in stripped  # pong's body gone
    assert "return pong" not in stripped  # ping's body gone
    assert "int main(void)" in stripped
    assert "int ping(int x);" in stripped  # the prototype is not a definition


def test_address_taken_function_is_kept():
    src = (
        "#include <stdlib.h>\n"
        "int cmp(const void *a, const void *b) {\n"
        "    return 0;\n"
        "}\n"
        "int main(void) {\n"
        "    int v[2];\n"
        "    qsort(v, 2, sizeof(int), cmp);\n"
        "    return 0;\n"
        "}\n"
    )
    assert strip_dead_functions(src) == src


def test_without_entry_point_nothing_removed():
    src = "int lib_fn(int x) {\n    return x;\n}\n"
    assert strip_dead_functions(src) == src


def test_unbalanced_braces_returned_unchanged(caplog):
    src = "int main(void) {\n    return 0;\n"  # missing closing brace
    with caplog.at_level(logging.WARNING):
        assert strip_dead_functions(src) == src
    assert any("unbalanced" in rec.message for rec in caplog.records)


@st.composite
def call_graph_programs(draw):
    n = draw(st.integers(min_value=0, max_value=5))
    names = [f"fn_{i}" for i in range(n)]
    edges = {}
    for name in names:
        others = [m for m in names if m != name]
        edges[name] = draw(st.frozensets(st.sampled_from(others))) if others else frozenset()
    main_calls = draw(st.frozensets(st.sampled_from(names))) if names else frozenset()
    return names, edges, main_calls


def _render(names, edges, main_calls) -> str:
    parts = []
    for name in names:
        calls = "".join(f"    {callee}(0);\n" for callee in sorted(edges[name]))
        parts.append(f"int {name}(int x) {{\n{calls}    return x;\n}}\n")
    calls = "".join(f"    {callee}(1);\n" for callee in sorted(main_calls))
    parts.append(f"int main(void) {{\n{calls}    return 0;\n}}\n")
    return "\n".join(parts)


def _closure(edges, roots) -> set:
    # independent reachability oracle: plain BFS
    seen = set()
    frontier = list(roots)
    while frontier:
        cur = frontier.pop()
        if cur in seen:
            continue
        seen.add(cur)
        frontier.extend(edges.get(cur, ()))
    return seen


@settings(max_examples=150, deadline=None)
@given(call_graph_programs())
def test_strip_matches_reachability_oracle(graph):
    names, edges, main_calls = graph
    src = _render(names, edges, main_calls)
    stripped = strip_dead_functions(src)
    expected = _closure(edges, main_calls)
    survivors = {name for name in names if f"int {name}(int x)" in stripped}
    assert survivors == expected
    assert "int main(void)" in stripped


@settings(max_examples=80, deadline=None)
@given(call_graph_programs())
def test_strip_is_idempotent(graph):
    src = _render(*graph)
    once = strip_dead_functions(src)
    assert strip_dead_functions(once) == once


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

_METRICS_FIXTURE = (
    "int *wrap(int value) {\n"
    "    int *box = malloc(sizeof(int));\n"
    "    *box = value;\n"
    "    return box;\n"
    "}\n"
    "\n"
    "int main(void) {\n"
    "    int *owned = wrap(7);\n"
    "    free(owned);\n"
    "    return 0;\n"
    "}\n"
)


def test_empty_text_yields_zero_metrics():
    assert extract_code_metrics("") == CodeMetrics(0, 0, 0, 0, 0)


def test_metrics_on_hand_counted_fixture():
    # manual count: 10 non-blank lines, 2 definitions, declarator stars on
    # `int *wrap`, `int *box`, `int *owned` (the `*box = value` deref does not
    # count), one malloc + one free
    m = extract_code_metrics(_METRICS_FIXTURE)
    assert m.loc == 10
    assert m.functions == 2
    assert m.pointers == 3
    assert m.memory_calls == 2
    assert m.structs == 0


def test_struct_definitions_and_typedef_pointers():
    src = (
        "typedef struct {\n"
        "    int x;\n"
        "} Node;\n"
        "struct point { int x, y; };\n"
        "int main(void) {\n"
        "    Node *head = 0;\n"
        "    struct point *p = 0;\n"
        "    return 0;\n"
        "}\n"
    )
    m = extract_code_metrics(src)
    assert m.structs == 2
    assert m.pointers == 2  # typedef name and struct tag both recognized


def test_comments_and_strings_do_not_count():
    src = (
        "#include <stdio.h>\n"
        "/* int *fake(void) { malloc } */\n"
        "int main(void) {\n"
        '    printf("int *p = malloc(1); free(p);");\n'
        "    // free(something)\n"
        "    return 0;\n"
        "}\n"
    )
    m = extract_code_metrics(src)
    assert m.functions == 1
    assert m.pointers == 0
    assert m.memory_calls == 0


_PROGRAM_TEMPLATES = [
    "int {p}_first(void) {{\n    int *{p}_ptr = malloc(4);\n    free({p}_ptr);\n    return 0;\n}}\n",
    "struct {p}_node {{ int v; }};\nint {p}_second(void) {{\n    struct {p}_node *{p}_n = 0;\n    return 0;\n}}\n",
    "int {p}_third(int x) {{\n    return x * 2;\n}}\n",
]


@st.composite
def disjoint_unit_pair(draw):
    left = "".join(
        t.format(p="a") for t in draw(st.lists(st.sampled_from(_PROGRAM_TEMPLATES), max_size=3))
    )
    right = "".join(
        t.format(p="b") for t in draw(st.lists(st.sampled_from(_PROGRAM_TEMPLATES), max_size=3))
    )
    return left, right


@settings(max_examples=100, deadline=None)
@given(disjoint_unit_pair())
def test_metrics_add_up_under_concatenation(pair):
    left, right = pair
    a, b, ab = (extract_code_metrics(t) for t in (left, right, left + "\n" + right))
    for attr in ("loc", "functions", "pointers", "structs", "memory_calls"):
        assert getattr(a, attr) + getattr(b, attr) == getattr(ab, attr)
