import numpy as np
import pytest

from restent.errors import ConfigError, NumericError
from restent.dynamics import (
    CompactSet,
    identity_system,
    lanford_region,
    lanford_system,
    linear_map_system,
    linear_ode_system,
    sample_set,
)
from restent.entropy import (
    BoundReport,
    aitken_accelerate,
    ct_bound,
    dt_bound,
    lanford_closed_form,
    lanford_metric,
    lyapunov_oracle,
    metric_change_constant,
    minimizing_metric_ct,
    minimizing_metric_dt,
    positive_sum,
    proximate_entropy,
)
from restent.metrics import MetricField, metric_sv_values

A0 = 2.0 / 3.0
LN2 = np.log(2.0)

UNIT_BOX_1 = CompactSet(bounds=((-1.0, 1.0),))
UNIT_BOX_2 = CompactSet(bounds=((-1.0, 1.0), (-1.0, 1.0)))


def test_dt_bound_identity_map_any_metric():
    sys_ = identity_system(2)
    rng = np.random.default_rng(40)
    curved = MetricField.analytic(
        2,
        lambda x: np.eye(2) * np.exp(x[..., 0])[..., None, None]
        + 0.3 * np.outer([1.0, 0.0], [1.0, 0.0]),
        label="curved",
    )
    for metric in (MetricField.identity(2), curved):
        rep = dt_bound(sys_, UNIT_BOX_2, metric, resolution=5)
        assert rep.bound == pytest.approx(0.0, abs=1e-10)
        assert rep.units == "bits/step"


def test_dt_bound_scalar_doubling_map():
    sys_ = linear_map_system(np.array([[2.0]]))
    rep = dt_bound(sys_, UNIT_BOX_1, MetricField.identity(1), resolution=5)
    assert rep.bound == pytest.approx(1.0, abs=1e-12)


def test_dt_bound_matches_oracle_for_diagonal_map():
    m = np.diag([2.0, 0.5])
    sys_ = linear_map_system(m)
    rep = dt_bound(sys_, UNIT_BOX_2, MetricField.identity(2), resolution=3)
    oracle = lyapunov_oracle(sys_, UNIT_BOX_2, horizons=(3, 7), resolution=3)
    assert rep.bound == pytest.approx(1.0, abs=1e-12)
    assert oracle.value == pytest.approx(1.0, abs=1e-12)
    # positive parts of the exponent profile sum to the same value at any t
    assert oracle.values[0] == pytest.approx(1.0, abs=1e-12)


def test_dt_bound_exact_on_normal_matrices():
    rng = np.random.default_rng(41)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    eigs = np.array([1.8, 0.6, -1.1])
    m = q @ np.diag(eigs) @ q.T
    sys_ = linear_map_system(m)
    rep = dt_bound(sys_, CompactSet(bounds=((-1, 1),) * 3), MetricField.identity(3),
                   resolution=2)
    expected = positive_sum(np.log2(np.abs(eigs)))
    assert rep.bound == pytest.approx(float(expected), abs=1e-10)


def test_ct_bound_scalar_cases():
    decay = linear_ode_system(np.array([[-1.0]]))
    rep = ct_bound(decay, UNIT_BOX_1, MetricField.identity(1), resolution=3)
    assert rep.bound == pytest.approx(0.0, abs=1e-12)
    assert rep.per_point[0].spectrum[0] == pytest.approx(-2.0)
    grow = linear_ode_system(np.array([[1.0]]))
    rep = ct_bound(grow, UNIT_BOX_1, MetricField.identity(1), resolution=3)
    assert rep.bound == pytest.approx(1.0 / LN2, abs=1e-12)
    assert rep.units == "bits/time"


def test_ct_bound_lanford_reference_value():
    sys_ = lanford_system(A0)
    rep = ct_bound(sys_, lanford_region(A0), lanford_metric(A0), resolution=21)
    assert rep.bound == pytest.approx(lanford_closed_form(A0), abs=1e-12)
    # maximizer sits on the z-axis
    assert abs(rep.maximizer[0]) < 1e-9 and abs(rep.maximizer[1]) < 1e-9


def test_ct_bound_lanford_lambda_closed_forms():
    a = 0.8
    sys_ = lanford_system(a)
    region = lanford_region(a)
    rep = ct_bound(sys_, region, lanford_metric(a), resolution=9)
    for rec in rep.per_point:
        x, y, z = rec.state
        g = 2.0 * (a * z - z * z - x * x - y * y) / a
        lam1 = 2.0 * (a - 2.0 * z) + g
        lam23 = 2.0 * (a - 1.0 + z) + g
        expected = np.sort([lam1, lam23, lam23])[::-1]
        assert np.allclose(rec.spectrum, expected, atol=1e-8)


def test_ct_bound_requires_matching_time_type_and_pdot():
    sys_ = linear_map_system(np.eye(2))
    with pytest.raises(ConfigError):
        ct_bound(sys_, UNIT_BOX_2, MetricField.identity(2))
    ode = linear_ode_system(np.eye(2))
    tab = MetricField.tabulated(2, lambda x: np.eye(2), label="tab")
    with pytest.raises(ConfigError):
        ct_bound(ode, UNIT_BOX_2, tab)                # no orbital derivative
    rep = ct_bound(ode, UNIT_BOX_2, tab, pdot="fd", resolution=3)
    assert rep.bound == pytest.approx(2.0 / LN2, abs=1e-6)


def test_dt_bound_wrong_time_type():
    with pytest.raises(ConfigError):
        dt_bound(lanford_system(), lanford_region(A0), MetricField.identity(3))


def test_dt_bound_flags_points_where_metric_is_undefined():
    sys_ = identity_system(1)

    def partial(x):
        if np.any(np.abs(x) > 0.5):
            raise NumericError("metric value requested outside its domain")
        return np.eye(1) * (1.0 + x[..., 0] ** 2)

    metric = MetricField.tabulated(1, partial, label="partial")
    rep = dt_bound(sys_, UNIT_BOX_1, metric, resolution=5)
    assert len(rep.excluded) == 2                 # the points at -1 and +1
    assert len(rep.per_point) == 3
    assert all("domain" in e["reason"] for e in rep.excluded)
    assert rep.bound == pytest.approx(0.0, abs=1e-12)


def test_lyapunov_oracle_discrete_blowup_masked():
    sys_ = linear_map_system(np.diag([3.0, 3.0]))
    res = lyapunov_oracle(sys_, UNIT_BOX_2, horizons=(10, 25), resolution=3)
    # every point except the origin exceeds the norm guard by t=25
    assert len(res.excluded) == 8
    assert res.value == pytest.approx(2.0 * np.log2(3.0), abs=1e-12)


def test_minimizing_metric_dt_first_step_is_identity():
    sys_ = linear_map_system(np.array([[2.0, 1.0], [0.0, 2.0]]))
    p1 = minimizing_metric_dt(sys_, 1)
    assert np.allclose(p1.evaluate(np.array([0.3, -0.7])), np.eye(2))
    rep_auto = dt_bound(sys_, UNIT_BOX_2, p1, resolution=2)
    rep_id = dt_bound(sys_, UNIT_BOX_2, MetricField.identity(2), resolution=2)
    assert rep_auto.bound == pytest.approx(rep_id.bound, abs=1e-12)


def test_minimizing_metric_dt_scalar_chain():
    sys_ = linear_map_system(np.array([[2.0]]))
    for n in (2, 4, 6):
        metric = minimizing_metric_dt(sys_, n, tol=1e-12)
        value = metric.evaluate(np.array([0.2]))[0, 0]
        assert value == pytest.approx(2.0 ** (n - 1), rel=1e-8)
        rep = dt_bound(sys_, UNIT_BOX_1, metric, resolution=3)
        assert rep.bound == pytest.approx(1.0, abs=1e-8)


def test_minimizing_metric_dt_singular_jacobian_rejected():
    sys_ = linear_map_system(np.array([[1.0, 0.0], [0.0, 0.0]]))
    metric = minimizing_metric_dt(sys_, 3)
    with pytest.raises(NumericError, match="invertible"):
        metric.evaluate(np.array([0.1, 0.1]))


def test_minimizing_metric_dt_clipped_nonnormal_case():
    # eigenvalues 2 and 1/2: the Euclidean bound overshoots the true rate 1,
    # the metric sequence recovers it
    sys_ = linear_map_system(np.array([[2.0, 1.0], [0.0, 0.5]]))
    box = UNIT_BOX_2
    rep_id = dt_bound(sys_, box, MetricField.identity(2), resolution=2)
    assert rep_id.bound > 1.0 + 0.05
    bounds = []
    for n in (2, 4, 8):
        metric = minimizing_metric_dt(sys_, n, tol=3e-6)
        bounds.append(dt_bound(sys_, box, metric, resolution=2).bound)
    assert bounds[0] <= rep_id.bound + 1e-9
    assert all(b2 <= b1 + 0.01 for b1, b2 in zip(bounds, bounds[1:]))
    assert abs(bounds[-1] - 1.0) < 0.05


def test_minimizing_metric_ct_degenerate_horizon():
    sys_ = linear_ode_system(np.array([[0.7]]))
    metric = minimizing_metric_ct(sys_, 1.0, time_samples=1)
    assert np.allclose(metric.evaluate(np.array([0.4])), np.eye(1))


def test_minimizing_metric_ct_scalar_growth():
    lam = 0.9
    sys_ = linear_ode_system(np.array([[lam]]))
    for horizon in (0.5, 1.5):
        metric = minimizing_metric_ct(sys_, horizon, time_samples=9, tol=1e-10)
        # equal-weight log-mean of e^{-2 lam s} over the node grid
        value = metric.evaluate(np.array([0.1]))[0, 0]
        assert value == pytest.approx(np.exp(lam * horizon), rel=1e-6)
        rep = ct_bound(sys_, UNIT_BOX_1, metric, resolution=3,
                       pdot="fd", pdot_step=1e-4)
        assert rep.bound == pytest.approx(lam / LN2, rel=1e-3)


def test_minimizing_metric_ct_lanford_converges_from_above():
    sys_ = lanford_system(A0)
    region = lanford_region(A0)
    ref = lanford_closed_form(A0)
    bounds = []
    for horizon in (1.0, 3.0):
        metric = minimizing_metric_ct(sys_, horizon, time_samples=16, tol=1e-6)
        rep = ct_bound(sys_, region, metric, resolution=3,
                       pdot="fd", pdot_step=1e-3)
        bounds.append(rep.bound)
        assert rep.bound >= ref - 5e-3
        assert rep.bound <= ref + 0.2
    assert bounds[1] <= bounds[0] + 5e-3


def test_lyapunov_oracle_identity_map():
    sys_ = identity_system(2)
    res = lyapunov_oracle(sys_, UNIT_BOX_2, horizons=(2, 4, 8), resolution=3)
    assert all(v == pytest.approx(0.0, abs=1e-12) for v in res.values)
    assert res.aitken == pytest.approx(0.0, abs=1e-12)
    assert res.profiles and len(res.profiles[0].exponents) == 2


def test_lyapunov_oracle_excludes_blowups():
    sys_ = lanford_system(A0)
    box = CompactSet(bounds=((-0.4, 0.4), (-0.4, 0.4), (-0.3, 0.5)))
    res = lyapunov_oracle(sys_, box, horizons=(1.0, 3.0, 6.0), resolution=3,
                          step=1e-3)
    assert res.excluded
    assert np.isfinite(res.value)


def test_proximate_entropy_values():
    assert proximate_entropy(lanford_system(1.0), np.zeros(3)) == pytest.approx(
        1.0 / LN2, abs=1e-12)
    assert proximate_entropy(lanford_system(A0), np.array([0.0, 0.0, A0])) == \
        pytest.approx(lanford_closed_form(A0), abs=1e-12)
    decay = linear_ode_system(np.array([[-1.0]]))
    assert proximate_entropy(decay, np.zeros(1)) == 0.0
    with pytest.raises(NumericError, match="equilibrium"):
        proximate_entropy(lanford_system(A0), np.array([0.3, 0.0, 0.1]))
    with pytest.raises(ConfigError):
        proximate_entropy(identity_system(2), np.zeros(2))


def test_lanford_closed_form_branch():
    assert lanford_closed_form(A0) == pytest.approx(0.9617966939259754)
    assert lanford_closed_form(1.0) == pytest.approx(2.0 / LN2)
    assert lanford_closed_form(0.75) == pytest.approx(1.0 / LN2)
    with pytest.raises(ConfigError):
        lanford_closed_form(0.5)


def test_aitken_accelerate():
    # geometric error decay is eliminated exactly
    seq = [1.0 + 0.5 ** k for k in range(1, 5)]
    assert aitken_accelerate(seq) == pytest.approx(1.0, abs=1e-12)
    assert aitken_accelerate([2.0, 2.0, 2.0]) == 2.0
    assert aitken_accelerate([3.0]) == 3.0


def test_metric_change_bound_on_lanford_orbits():
    # switching between the adapted metric and the Euclidean one moves the
    # summed positive log singular values by at most the set-wide constant
    a = A0
    sys_ = lanford_system(a)
    metric = lanford_metric(a)
    region = lanford_region(a)
    pts = sample_set(region, 5)
    c_plus = metric_change_constant(metric, pts)
    rng = np.random.default_rng(42)
    idx = rng.choice(len(pts), size=4, replace=False)
    from restent.dynamics import cocycle, flow

    for x in pts[idx]:
        for t in (1.0, 2.0, 4.0):
            a_t = cocycle(sys_, x, t, step=1e-3).matrix
            y = flow(sys_, x, t, step=1e-3)
            p, q = metric.evaluate(x), metric.evaluate(y)
            s_metric = positive_sum(metric_sv_values(p, q, a_t))
            s_eucl = positive_sum(np.log2(np.linalg.svd(a_t, compute_uv=False)))
            gap = float(s_metric - s_eucl)
            assert -c_plus - 1e-8 <= gap <= c_plus + 1e-8


def test_refinement_loop_converges_and_reports():
    sys_ = lanford_system(0.75)
    rep = ct_bound(sys_, lanford_region(0.75), lanford_metric(0.75),
                   resolution=5, refine=True, refine_tol=1e-4, max_refines=4)
    assert rep.refinements >= 1
    assert rep.bound == pytest.approx(lanford_closed_form(0.75), abs=1e-6)
    assert rep.resolution[0] > 5


def test_report_round_trip_and_csv(tmp_path):
    sys_ = linear_map_system(np.diag([2.0, 0.5]))
    rep = dt_bound(sys_, UNIT_BOX_2, MetricField.identity(2), resolution=3)
    assert rep.bound == max(r.local for r in rep.per_point)
    assert all(r.local >= 0.0 for r in rep.per_point)
    jpath = tmp_path / "r.report.json"
    cpath = tmp_path / "r.points.csv"
    rep.to_json(jpath)
    back = BoundReport.from_json(jpath)
    assert back == rep
    rep.to_csv(cpath)
    text = cpath.read_text()
    assert text.splitlines()[0] == "x0,x1,s1,s2,local_bound"
    rep.to_csv(cpath)
    assert cpath.read_text() == text


def test_bound_dominates_oracle_spot():
    m = np.array([[2.0, 1.0], [0.0, 0.5]])
    sys_ = linear_map_system(m)
    rep = dt_bound(sys_, UNIT_BOX_2, MetricField.identity(2), resolution=2)
    res = lyapunov_oracle(sys_, UNIT_BOX_2, horizons=(4, 8, 16), resolution=3)
    for v in res.values:
        assert rep.bound + 1e-9 >= v


def test_thread_override_keeps_results_and_order(monkeypatch):
    sys_ = linear_map_system(np.array([[2.0, 1.0], [0.0, 0.5]]))
    metric = minimizing_metric_dt(sys_, 3, tol=1e-6)
    serial = dt_bound(sys_, UNIT_BOX_2, metric, resolution=2)
    monkeypatch.setenv("RESTENT_THREADS", "4")
    sys2 = linear_map_system(np.array([[2.0, 1.0], [0.0, 0.5]]))
    ode = linear_ode_system(np.array([[0.5]]))
    tab = minimizing_metric_ct(ode, 1.0, time_samples=5, tol=1e-9)
    threaded_ct = ct_bound(ode, UNIT_BOX_1, tab, resolution=5,
                           pdot="fd", pdot_step=1e-4)
    metric2 = minimizing_metric_dt(sys2, 3, tol=1e-6)
    threaded = dt_bound(sys2, UNIT_BOX_2, metric2, resolution=2)
    assert threaded.bound == pytest.approx(serial.bound, abs=1e-12)
    assert [r.state for r in threaded.per_point] == [r.state for r in serial.per_point]
    assert threaded_ct.bound == pytest.approx(0.5 / LN2, rel=1e-3)
