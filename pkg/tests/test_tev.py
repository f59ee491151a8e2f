import numpy as np
import pytest

from dpmorse.acceptance import ring_model, symmetric_model
from dpmorse.dataset import make_two_moons
from dpmorse.fit import fit_em
from dpmorse.landscape import Landscape, classify, flow_ascend_batch, refine_critical
from dpmorse.model import MixtureModel
from dpmorse.tev import (TransitionRecord, find_all_tevs, find_tev_for_pair, quadratic_string_point,
                         search_saddle_graph, validate_tev)


def test_string_endpoints_and_vertex():
    a, b, v = np.array([0.2, -0.1]), np.array([1.0, 0.7]), np.array([0.3, 0.6])
    np.testing.assert_allclose(quadratic_string_point(a, b, v, 0.0), a)
    np.testing.assert_allclose(quadratic_string_point(a, b, v, 1.0), b)
    np.testing.assert_allclose(quadratic_string_point(a, b, v, 0.5), a + v)


def test_string_worked_value():
    np.testing.assert_allclose(quadratic_string_point([0, 0], [2, 0], [1, 0.5], 0.25), [0.5, 0.375])


def test_symmetric_pair_candidate_at_midpoint():
    L = Landscape(symmetric_model())
    cp = find_tev_for_pair(L, 0, 1)
    assert np.linalg.norm(cp.location) <= 1e-6 and cp.index == 1


def test_candidate_between_components_on_a_line():
    m = MixtureModel([0.3, 0.4, 0.3], [[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]], [np.eye(2) * 0.05] * 3)
    L = Landscape(m)
    cp = find_tev_for_pair(L, 1, 2)
    assert 0.0 < cp.location[0] < 1.0
    assert int(np.sum(np.linalg.eigvalsh(-L.hessian(cp.location)) < 0)) == 1


def test_identical_means_give_no_tev():
    m = MixtureModel([0.5, 0.5], [[0.1, 0.1], [0.1, 0.1]], [np.eye(2) * 0.05, np.eye(2) * 0.08])
    L = Landscape(m)
    cp = find_tev_for_pair(L, 0, 1)
    assert cp is None or validate_tev(L, cp) is None
    assert find_all_tevs(L) == []


def test_midpoint_record_joins_both_components():
    L = Landscape(symmetric_model())
    rec = validate_tev(L, refine_critical(L, [0.0, 0.0]))
    assert (rec.a, rec.b) == (0, 1)
    assert rec.p_value == pytest.approx(np.exp(-rec.f_value))


def test_index_two_point_rejected():
    th = np.arange(4) * np.pi / 2
    m = MixtureModel([0.25] * 4, 0.5 * np.column_stack([np.cos(th), np.sin(th)]), [np.eye(2) * 0.04] * 4)
    L = Landscape(m)
    cp = refine_critical(L, [1e-4, -1e-4])
    assert cp.index == 2 and np.linalg.norm(cp.location) < 1e-8
    assert validate_tev(L, cp) is None


def test_ring_low_point_is_index_one_but_no_tev():
    L = Landscape(ring_model())
    from dpmorse.acceptance import modes_by_flow

    modes = modes_by_flow(L)
    assert len(modes) == 3
    cp = refine_critical(L, [-0.5 * np.sin(0.3), -0.5 * np.cos(0.3)])
    assert cp.index == 1
    e = cp.eigenvectors[:, 0]
    ends = flow_ascend_batch(L, np.array([cp.location + 0.05 * e, cp.location - 0.05 * e])).endpoints
    assert np.linalg.norm(ends[0] - ends[1]) < 1e-4  # both branches reach the same mode
    assert validate_tev(L, cp, centers=modes) is None


def test_all_tevs_symmetric_and_precondition():
    assert len(find_all_tevs(Landscape(symmetric_model()))) == 1
    with pytest.raises(ValueError):
        find_all_tevs(Landscape(MixtureModel([1.0], [[0.0, 0.0]], [np.eye(2)])))


def _invariants(L, records, nodes):
    for rec in records:
        cp = classify(L, rec.t)
        assert cp.index == 1 and cp.gradient_norm <= 1e-6 and rec.a < rec.b
        e = cp.eigenvectors[:, 0]
        ends = flow_ascend_batch(L, np.array([rec.t + 0.05 * e, rec.t - 0.05 * e])).endpoints
        got = sorted(int(np.argmin(np.linalg.norm(nodes - x, axis=1))) for x in ends)
        assert got == [rec.a, rec.b]


@pytest.fixture(scope="module")
def moons_model():
    return fit_em(make_two_moons(400, 0.05, 0), 6, 10, hard=True, seed=0)[0]


def test_records_satisfy_invariants(moons_model):
    L = Landscape(moons_model)
    recs = find_all_tevs(L)
    assert recs == sorted(recs, key=lambda r: (r.a, r.b))
    _invariants(L, recs, moons_model.means)
    sg = search_saddle_graph(L)
    _invariants(L, sg.saddles(), sg.nodes)


def test_pair_order_does_not_matter(moons_model):
    perm = [3, 0, 5, 1, 4, 2]
    shuffled = MixtureModel(moons_model.weights[perm], moons_model.means[perm], moons_model.covariances[perm])
    a = find_all_tevs(Landscape(moons_model))
    b = find_all_tevs(Landscape(shuffled))
    inv = {new: old for new, old in enumerate(perm)}
    remapped = sorted((min(inv[r.a], inv[r.b]), max(inv[r.a], inv[r.b]), round(r.f_value, 6)) for r in b)
    assert remapped == sorted((r.a, r.b, round(r.f_value, 6)) for r in a)


def test_record_json_round_trip():
    rec = TransitionRecord(np.array([0.1, 0.2]), 0, 2, 1.5, float(np.exp(-1.5)))
    back = TransitionRecord.from_dict(rec.to_dict())
    assert back.to_dict() == rec.to_dict()
    assert set(rec.to_dict()) >= {"a", "b", "t", "f_value", "p_value"}


def test_saddle_graph_shares_modes():
    # two components close enough to share one mode, plus a separate one
    m = MixtureModel([0.3, 0.3, 0.4], [[-0.05, 0.0], [0.05, 0.0], [1.0, 0.0]], [np.eye(2) * 0.04] * 3)
    sg = search_saddle_graph(Landscape(m))
    kinds = {(r.a, r.b): r.kind for r in sg.records}
    assert kinds.get((0, 1)) == "shared_mode"
    assert any(k == "saddle" for k in kinds.values())
    assert sg.to_dict()["n_centers"] == 3
