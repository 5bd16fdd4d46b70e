import pytest
from hypothesis import given, settings, strategies as st

from oracles import TASKS, complete_traces, oracle_enabled, reachable_states
from procchain.process import (
    ORDER_PROCESSING,
    And,
    DefinitionError,
    Flag,
    FlagState,
    GuardError,
    Lit,
    Not,
    Or,
    ProcessDefinition,
    ProcessSyntaxError,
    Status,
    TransactionDef,
    TxKind,
    builtin_order_processing,
    enabled_transactions,
    evaluate_guard,
    fire,
    parse_guard,
    parse_process_definition,
    render_definition,
    render_guard,
    validate_definition,
)


def state(*on, closed=False):
    flags = {t: t in on for t in TASKS}
    return FlagState(flags, Status.CLOSED if closed else Status.ACTIVE)


# --- parsing ---------------------------------------------------------------


def test_builtin_has_three_parties_one_create_nine_tasks(defn):
    assert defn.parties == ("shopper", "seller", "delivery")
    kinds = [t.kind for t in defn.transactions]
    assert kinds.count(TxKind.CREATE) == 1
    assert kinds.count(TxKind.TASK) == 9
    assert defn.flags == TASKS


def test_builtin_details(defn):
    assert defn.transaction("makePayment").actor == "shopper"
    assert defn.transaction("shipOrder").guard == Flag("fillOrder")
    assert defn.transaction("shipOrder").actor == "delivery"
    assert defn.transaction("closeOrder").closes
    assert not any(t.closes for t in defn.tasks if t.name != "closeOrder")
    assert defn.create.name == "createOrder" and defn.create.actor == "shopper"
    assert validate_definition(defn).ok


def test_builtin_is_the_documented_text(defn):
    assert parse_process_definition(ORDER_PROCESSING) == defn
    assert builtin_order_processing() is defn


def test_close_order_guard_ast():
    text = ORDER_PROCESSING
    d = parse_process_definition(text)
    expected = Or((Flag("rejected"), And((Flag("acceptPayment"), Flag("shipOrder")))))
    assert d.transaction("closeOrder").guard == expected


def test_minimal_single_task_process():
    d = parse_process_definition("process P\nparties a\ncreate mk by a\ntask t by a when true\n")
    assert d.flags == ("t",)
    assert d.transaction("t").guard == Lit(True)
    assert validate_definition(d).ok


@pytest.mark.parametrize(
    "text, expected",
    [
        ("a | b & c", Or((Flag("a"), And((Flag("b"), Flag("c")))))),
        ("!a & b", And((Not(Flag("a")), Flag("b")))),
        ("!(a | b)", Not(Or((Flag("a"), Flag("b"))))),
        ("(a | b) & c", And((Or((Flag("a"), Flag("b"))), Flag("c")))),
        ("a & b & c", And((Flag("a"), Flag("b"), Flag("c")))),
        ("!!false", Not(Not(Lit(False)))),
    ],
)
def test_guard_precedence(text, expected):
    assert parse_guard(text) == expected


HEAD = "process P\nparties a, b\ncreate mk by a\n"


@pytest.mark.parametrize(
    "body, line, column",
    [
        ("task t by a when x &\n", 4, 21),          # dangling operator
        ("task t by a when (x\n", 4, 20),            # unclosed paren
        ("task t by a when x $ y\n", 4, 20),         # bad character
        ("task t by c when true\n", 4, 11),          # undeclared party
        ("task t by a when nope\n", 4, 6),           # undeclared flag
        ("task t by a when true\ntask t by b when true\n", 5, 6),  # duplicate name
        ("job t by a\n", 4, 1),                      # unknown statement
        ("task t a when true\n", 4, 8),              # missing 'by'
    ],
)
def test_syntax_errors_carry_position(body, line, column):
    with pytest.raises(ProcessSyntaxError) as info:
        parse_process_definition(HEAD + body)
    assert (info.value.line, info.value.column) == (line, column)


@pytest.mark.parametrize(
    "text",
    [
        "process P\nparties a\ntask t by a when true\n",
        "process P\nparties a\ncreate c1 by a\ncreate c2 by a\ntask t by a when true\n",
    ],
)
def test_create_count_is_enforced_by_parser(text):
    with pytest.raises(DefinitionError) as info:
        parse_process_definition(text)
    assert any(v.kind == "create-count" for v in info.value.violations)


def test_comments_and_blank_lines_ignored():
    d = parse_process_definition("# hi\n\nprocess P  # name\nparties a\n create mk by a\ntask t by a when true\n")
    assert d.name == "P"


# --- validation ------------------------------------------------------------


def _defn(*txs, parties=("shopper", "seller")):
    return ProcessDefinition("P", parties, tuple(txs))


def test_validate_unknown_flag():
    d = _defn(
        TransactionDef("mk", "shopper", TxKind.CREATE),
        TransactionDef("ship", "seller", guard=Flag("shipped")),
    )
    kinds = [v.kind for v in validate_definition(d).violations]
    assert kinds == ["unknown flag"]


def test_validate_two_creates():
    d = _defn(
        TransactionDef("mk", "shopper", TxKind.CREATE),
        TransactionDef("mk2", "shopper", TxKind.CREATE),
        TransactionDef("t", "seller"),
    )
    assert [v.kind for v in validate_definition(d).violations] == ["create-count"]


def test_validate_actor_duplicates_and_reserved_names():
    d = _defn(
        TransactionDef("mk", "shopper", TxKind.CREATE),
        TransactionDef("t", "ghost"),
        TransactionDef("t", "seller"),
        TransactionDef("status", "seller"),
    )
    kinds = sorted(v.kind for v in validate_definition(d).violations)
    assert kinds == ["duplicate transaction", "reserved name", "unknown actor"]
    assert not validate_definition(d)


# --- guard evaluation ------------------------------------------------------


def test_evaluate_guard_examples(defn):
    close_guard = defn.transaction("closeOrder").guard
    assert evaluate_guard(close_guard, state("rejected")) is True
    assert evaluate_guard(Lit(True), state()) is True
    assert evaluate_guard(parse_guard("acceptPayment & shipOrder"), state("acceptPayment")) is False


def test_evaluate_guard_unknown_identifier():
    with pytest.raises(GuardError):
        evaluate_guard(Flag("nope"), state())


# --- enabled transactions --------------------------------------------------


def test_enabled_initial(defn):
    assert enabled_transactions(defn, defn.initial_state()) == {"receiveOrder"}


def test_enabled_after_fill_order(defn):
    s = state("receiveOrder", "accepted", "fillOrder")
    assert enabled_transactions(defn, s) == {"sendInvoice", "shipOrder"}


def test_enabled_closed_is_empty(defn):
    assert enabled_transactions(defn, state("receiveOrder", "rejected", "closeOrder", closed=True)) == set()


def test_enabled_rejects_mismatched_flags(defn):
    with pytest.raises(ValueError):
        enabled_transactions(defn, FlagState({"receiveOrder": False}))


def test_fire_closes_only_on_closing_task(defn):
    s = fire(defn, state("receiveOrder", "rejected"), "closeOrder")
    assert s.status is Status.CLOSED and s["closeOrder"]
    assert fire(defn, defn.initial_state(), "receiveOrder").active


# --- exhaustive exploration ------------------------------------------------


def _explore(defn):
    start = defn.initial_state()
    seen = {start}
    frontier = [start]
    while frontier:
        s = frontier.pop()
        for t in enabled_transactions(defn, s):
            n = fire(defn, s, t)
            if n not in seen:
                seen.add(n)
                frontier.append(n)
    return seen


def test_reachable_states_safe(defn):
    for s in _explore(defn):
        enabled = enabled_transactions(defn, s)
        assert enabled <= set(TASKS)
        assert not any(s[t] for t in enabled)
        assert not (s["accepted"] and s["rejected"])
        assert (s.status is Status.CLOSED) == s["closeOrder"]


def test_exploration_matches_oracle(defn):
    ours = {frozenset(t for t in TASKS if s[t]) for s in _explore(defn)}
    assert ours == reachable_states()
    assert len(ours) == 14
    assert len(complete_traces()) == 5
    for done in ours:
        s = state(*done, closed="closeOrder" in done)
        assert enabled_transactions(defn, s) == oracle_enabled(done)


# --- round trip ------------------------------------------------------------

FLAGS = ["a", "b", "c", "d"]

guards = st.recursive(
    st.one_of(st.builds(Lit, st.booleans()), st.sampled_from(FLAGS).map(Flag)),
    lambda inner: st.one_of(
        inner.map(Not),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: And(tuple(xs))),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: Or(tuple(xs))),
    ),
    max_leaves=12,
)


@given(guards)
def test_guard_render_parse_round_trip(g):
    assert parse_guard(render_guard(g)) == g


@given(st.lists(st.tuples(guards, st.sampled_from(["x", "y"]), st.booleans()), min_size=4, max_size=4))
@settings(max_examples=50)
def test_definition_round_trip(specs):
    txs = [TransactionDef("open", "x", TxKind.CREATE)]
    txs += [TransactionDef(name, actor, TxKind.TASK, g, closes) for name, (g, actor, closes) in zip(FLAGS, specs)]
    d = ProcessDefinition("Gen", ("x", "y"), tuple(txs))
    assert validate_definition(d).ok
    assert parse_process_definition(render_definition(d)) == d


def test_builtin_round_trip(defn):
    assert parse_process_definition(render_definition(defn)) == defn
