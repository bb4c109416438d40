import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flocksim import model, oracle
from flocksim.errors import BudgetExceeded, NoFeasibleAssignment
from flocksim.model import Instance, e1_instance
from flocksim.protocol import ProtocolConfig, run
from flocksim.regularize import RegFn
from flocksim.scenarios import GenParams, gen_random_instance


def test_e1_optimum():
    res = oracle.brute_force_optimum(e1_instance(), RegFn(9.0))
    assert res.best_outcome == (0, 0)
    assert res.best_cost == pytest.approx(0.3997913195400176, rel=1e-12)
    assert res.feasible_count == 4 and res.enumerated_count == 4


def test_single_vm_prefers_the_larger_cloud():
    inst = Instance(tau=np.zeros((2, 2)), gamma=[50.0, 100.0], demand=np.zeros((1, 1)),
                    self_demand=[5.0])
    assert oracle.brute_force_optimum(inst, RegFn()).best_outcome == (1,)


def test_unique_feasible_assignment():
    inst = Instance(tau=[[0.0, 1.0], [1.0, 0.0]], gamma=[6.0, 6.0],
                    demand=[[0.0, 5.0], [5.0, 0.0]], self_demand=[0.0, 0.0],
                    strategy_sets=[[0, 1], [1]])
    res = oracle.brute_force_optimum(inst, RegFn())
    assert res.best_outcome == (0, 1) and res.feasible_count == 1


def test_errors():
    inst = gen_random_instance(GenParams(m=5, n=8, seed=0))
    with pytest.raises(BudgetExceeded):
        oracle.brute_force_optimum(inst, RegFn(), budget=1000)
    tight = Instance(tau=[[0.0]], gamma=[4.0], demand=[[0.0, 5.0], [5.0, 0.0]])
    with pytest.raises(NoFeasibleAssignment):
        oracle.brute_force_optimum(tight, RegFn())


def test_verify_nash_e1():
    reg = RegFn()
    assert oracle.verify_nash(e1_instance(), (0, 0), reg)
    assert not oracle.verify_nash(e1_instance(), (0, 1), reg)
    one = Instance(tau=[[0.0]], gamma=[100.0], demand=[[0.0, 1.0], [1.0, 0.0]])
    assert oracle.verify_nash(one, (0, 0), reg)


def test_e1_poa_is_one():
    tr = run(e1_instance(), (0, 1), ProtocolConfig(eta=0.9), np.random.default_rng(0))
    assert oracle.price_of_anarchy(e1_instance(), tr.final, RegFn()) == pytest.approx(1.0, abs=1e-9)


@st.composite
def cases(draw):
    m, n = draw(st.integers(1, 3)), draw(st.integers(1, 5))
    gp = GenParams(m=m, n=n, seed=draw(st.integers(0, 10 ** 6)), p=draw(st.floats(0.0, 1.0)),
                   gamma_range=(20.0, 60.0))
    return gen_random_instance(gp)


@settings(max_examples=60, deadline=None)
@given(cases())
def test_enumeration_matches_itertools(inst):
    reg = RegFn()
    rows = oracle.feasible_assignments(inst)
    assert rows.shape[0] == oracle.count_feasible_naive(inst)
    if rows.shape[0] == 0:
        return
    costs, lat = oracle.batch_costs(inst, rows, reg)
    for row, c, l in zip(rows, costs, lat):
        assert c == pytest.approx(model.social_cost(inst, row, reg), rel=1e-12, abs=1e-12)
        assert l == pytest.approx(model.latency_sum(inst, row), rel=1e-12, abs=1e-12)
    best = oracle.brute_force_optimum(inst, reg)
    naive = min((a for a in itertools.product(range(inst.num_clouds), repeat=inst.num_vms)
                 if model.is_feasible(inst, a)), key=lambda a: (model.social_cost(inst, a, reg), a))
    assert best.best_cost == pytest.approx(model.social_cost(inst, naive, reg), rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(cases(), st.sampled_from([0.9, 0.99, 1.0]))
def test_poa_at_least_one(inst, eta):
    if oracle.count_feasible_naive(inst) == 0:
        return
    start = tuple(int(x) for x in oracle.feasible_assignments(inst)[0])
    tr = run(inst, start, ProtocolConfig(eta=eta), np.random.default_rng(0))
    assert oracle.price_of_anarchy(inst, tr.final, RegFn()) >= 1 - 1e-9
