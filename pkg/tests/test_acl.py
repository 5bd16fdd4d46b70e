import pytest
from hypothesis import given, strategies as st

from procchain.acl import (
    ANY,
    AclError,
    AclOperation,
    AclPolicy,
    AclRule,
    Binding,
    Effect,
    default_order_processing_policy,
    evaluate,
    filter_readable,
)
from procchain.model import ADMIN, OrderAsset, Participant, TxTarget
from procchain.process import builtin_order_processing

S1, S2 = Participant("S1", "shopper"), Participant("S2", "shopper")
M1, M2 = Participant("M1", "seller"), Participant("M2", "seller")
L1, L2 = Participant("L1", "delivery"), Participant("L2", "delivery")
EVERYONE = [S1, S2, M1, M2, L1, L2, ADMIN]

POLICY = default_order_processing_policy()


def order(oid="O1", shopper="S1", seller="M1", delivery="L1", responsible=(), **flags):
    d = builtin_order_processing()
    state = d.initial_state()
    for f in flags:
        state = state.with_flag(f)
    return OrderAsset(oid, oid, "", state, {"shopper": shopper, "seller": seller, "delivery": delivery},
                      frozenset(responsible))


def allowed(who, op, resource, policy=POLICY):
    return evaluate(policy, who, op, resource).allowed


def test_read_examples():
    o1 = order()
    assert evaluate(POLICY, S1, AclOperation.READ, o1).allowed
    assert evaluate(POLICY, S1, AclOperation.READ, o1).rule == 1
    d = evaluate(POLICY, S2, AclOperation.READ, o1)
    assert d.effect is Effect.DENY and d.rule is None


@pytest.mark.parametrize("who", EVERYONE)
def test_delete_never_granted(who):
    o1 = order()
    assert not allowed(who, AclOperation.DELETE, o1)
    for t in builtin_order_processing().flags:
        assert not allowed(who, AclOperation.DELETE, TxTarget(t, o1))


def test_create_examples():
    proposed_by_seller = order(shopper="M1")
    assert not allowed(M1, AclOperation.CREATE, TxTarget("createOrder", proposed_by_seller))
    assert allowed(S1, AclOperation.CREATE, TxTarget("createOrder", order()))
    # a shopper cannot create an order on someone else's behalf
    assert not allowed(S2, AclOperation.CREATE, TxTarget("createOrder", order()))


def test_ship_order_by_bound_delivery():
    o1 = order(responsible={"M1", "L1"}, receiveOrder=True, accepted=True, fillOrder=True)
    assert allowed(L1, AclOperation.UPDATE, TxTarget("shipOrder", o1))
    assert not allowed(L2, AclOperation.UPDATE, TxTarget("shipOrder", o1))


def test_make_payment_role_mismatch():
    o1 = order(responsible={"S1"})
    assert not allowed(M1, AclOperation.UPDATE, TxTarget("makePayment", o1))
    assert allowed(S1, AclOperation.UPDATE, TxTarget("makePayment", o1))


def test_update_requires_responsibility():
    o1 = order(responsible={"M1"})
    assert allowed(M1, AclOperation.UPDATE, TxTarget("receiveOrder", o1))
    assert not allowed(M1, AclOperation.UPDATE, TxTarget("receiveOrder", order(responsible=())))


def test_admin_has_no_order_rights():
    o1 = order(responsible={"M1"})
    for op in AclOperation:
        assert not allowed(ADMIN, op, o1)
        assert not allowed(ADMIN, op, TxTarget("receiveOrder", o1))


@pytest.mark.parametrize("op", list(AclOperation))
@pytest.mark.parametrize("who", EVERYONE)
def test_empty_policy_denies(op, who):
    o1 = order(responsible={"S1", "M1", "L1"})
    assert evaluate(AclPolicy(), who, op, o1).effect is Effect.DENY
    assert evaluate(AclPolicy(), who, op, TxTarget("shipOrder", o1)).effect is Effect.DENY


def test_first_match_wins():
    deny_s1 = AclRule("shopper", frozenset({AclOperation.READ}), "Order", Binding.anyof("shopper"), Effect.DENY)
    policy = AclPolicy((deny_s1, *POLICY.rules))
    d = evaluate(policy, S1, AclOperation.READ, order())
    assert d.effect is Effect.DENY and d.rule == 0
    assert allowed(M1, AclOperation.READ, order(), policy)


def test_binding_on_missing_relationship_raises():
    rule = AclRule(ANY, frozenset({AclOperation.READ}), ANY, Binding.anyof("broker"))
    with pytest.raises(AclError):
        evaluate(AclPolicy((rule,)), S1, AclOperation.READ, order())


def test_rule_needs_operations():
    with pytest.raises(ValueError):
        AclRule(ANY, frozenset(), ANY)


def test_policy_text():
    lines = str(POLICY).splitlines()
    assert lines[0] == "ALLOW shopper CREATE createOrder BOUND shopper"
    assert lines[1] == "ALLOW ANY READ Order BOUND shopper|seller|delivery"
    assert "ALLOW delivery UPDATE shipOrder BOUND delivery&responsible" in lines
    assert lines[-1].startswith("DENY ANY")
    assert len(lines) == 2 + 9 + 1


# --- filter_readable -------------------------------------------------------


def _orders(n, seed_parties):
    return [order(f"O{i}", *seed_parties[i]) for i in range(n)]


def test_filter_readable_shopper_with_three_orders():
    parties = [("S2", "M1", "L1")] * 200
    for i in (5, 70, 199):
        parties[i] = ("S1", "M2", "L2")
    assets = _orders(200, parties)
    got = filter_readable(POLICY, S1, assets)
    assert [a.id for a in got] == ["O5", "O70", "O199"]
    assert [a.id for a in got] == [a.id for a in assets if evaluate(POLICY, S1, AclOperation.READ, a).allowed]


def test_filter_readable_unrelated_is_empty():
    assert filter_readable(POLICY, Participant("S9", "shopper"), _orders(10, [("S1", "M1", "L1")] * 10)) == []


ids = st.tuples(st.sampled_from(["S1", "S2"]), st.sampled_from(["M1", "M2"]), st.sampled_from(["L1", "L2"]))


@given(st.lists(ids, max_size=30), st.sampled_from(EVERYONE))
def test_filter_readable_equals_per_asset_loop(parties, who):
    assets = _orders(len(parties), parties)
    expected = [a for a in assets if evaluate(POLICY, who, AclOperation.READ, a).allowed]
    assert filter_readable(POLICY, who, assets) == expected
    bound = [a for a in assets if who.id in a.parties.values()]
    assert expected == bound
