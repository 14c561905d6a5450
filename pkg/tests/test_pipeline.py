import numpy as np
import pytest

from conftest import trained
from plpf import acpf
from plpf import pipeline as pl
from plpf.errors import FingerprintMismatch, LengthMismatch, NonConvergence, VersionMismatch
from plpf.linmodels import exact_alpha, plpf_apply, sdistflow_solve, sqrt_voltage
from plpf.netmodel import Scenario, build_network


def test_training_set_shape(case33):
    net, base = case33
    data = pl.gen_training_set(net, base, pl.TrainingSpec(seed=7))
    assert data.X.shape == (640, 2) and data.y.shape == (640,)
    assert len(set(data.multipliers)) == 20
    assert all(1 <= abs(m) <= 2 for m in data.multipliers)
    # rows of one sample are the receiving-bus injections, in bus order
    m = data.multipliers[3]
    rows = data.sample == 3
    assert np.array_equal(data.X[rows], np.column_stack([m * base.p, m * base.q]))
    assert data.branch[rows].tolist() == list(range(1, 33))
    csv = data.to_csv().decode().splitlines()
    assert csv[0] == "sample,branch,p,q,alpha,guarded" and len(csv) == 641


def test_training_targets_are_exact_alpha(case33):
    net, base = case33
    data = pl.gen_training_set(net, base, pl.TrainingSpec(p_samples=3, seed=1))
    sc = base.scaled(data.multipliers[1])
    a = exact_alpha(net, sc, acpf.solve(net, sc).ell)
    assert np.array_equal(data.y[data.sample == 1], a.alpha)


def test_grid_mode_two_bus(case2):
    net, base = case2
    spec = pl.TrainingSpec(p_samples=4, mode="fixed_granularity", grid_low=-1.5, grid_high=3.0)
    a = pl.gen_training_set(net, base, spec)
    b = pl.gen_training_set(net, base, spec)
    assert a.multipliers == (-1.5, 0.0, 1.5, 3.0)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert np.diff(a.X[:, 0]).tolist() == pytest.approx([1.5 * base.p[0]] * 3, rel=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        pl.TrainingSpec(p_samples=1)
    with pytest.raises(ValueError):
        pl.TrainingSpec(interval_low=0.5)
    with pytest.raises(ValueError):
        pl.TrainingSpec(mode="grid")


def test_zero_base_rejected(case33):
    net, _ = case33
    with pytest.raises(ValueError):
        pl.gen_training_set(net, Scenario.zeros(net.n_buses), pl.TrainingSpec())
    with pytest.raises(LengthMismatch):
        pl.gen_training_set(net, Scenario([-0.1], [0.0]), pl.TrainingSpec())


def test_grid_point_failure_propagates(case33):
    net, base = case33
    with pytest.raises(NonConvergence):
        pl.gen_training_set(net, base, pl.TrainingSpec(p_samples=3, mode="fixed_granularity", grid_high=6.0))


def test_redraw_limit(case33, monkeypatch, caplog):
    net, base = case33
    calls = []

    def failing(*args):
        calls.append(1)
        raise NonConvergence(1, 1.0)

    monkeypatch.setattr(pl, "_sample_rows", failing)
    with pytest.raises(NonConvergence):
        pl.gen_training_set(net, base, pl.TrainingSpec(p_samples=2))
    # two initial draws, then three redraws of the first sample
    assert len(calls) == 2 + pl.MAX_REDRAWS
    assert "redrawing (3/3)" in caplog.text


def test_determinism(case33):
    net, base = case33
    spec = pl.TrainingSpec(p_samples=6, seed=3)
    a, b = pl.gen_training_set(net, base, spec), pl.gen_training_set(net, base, spec)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    ma, mb = pl.parameterize(net, a, seed=3), pl.parameterize(net, b, seed=3)
    assert np.array_equal(ma.alpha(base.p, base.q)[0], mb.alpha(base.p, base.q)[0])


def test_parallel_generation_matches_serial(case33):
    net, base = case33
    spec = pl.TrainingSpec(p_samples=4, seed=2)
    a = pl.gen_training_set(net, base, spec)
    b = pl.gen_training_set(net, base, spec, workers=2)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def test_fingerprint_mismatch(case33, case69):
    net33, _ = case33
    net69, base69 = case69
    data = pl.gen_training_set(net69, base69, pl.TrainingSpec(p_samples=2))
    with pytest.raises(FingerprintMismatch):
        pl.parameterize(net33, data)


def test_noise_free_interpolation_on_distinct_inputs(case33):
    # independent per-bus draws give distinct input rows, so the noise-free GP interpolates
    net, base = case33
    data = pl.gen_training_set(net, base, pl.TrainingSpec(p_samples=3, draw="per_bus", seed=5))
    assert len(np.unique(data.X, axis=0)) == len(data)
    model = pl.parameterize(net, data, noise_var=0.0, restarts=2)
    rows = data.sample == 1
    mu = model.alpha(data.X[rows, 0], data.X[rows, 1], return_var=False)
    ok = ~data.guarded[rows]
    assert np.max(np.abs(mu - data.y[rows])[ok]) <= 1e-4


def test_base_alpha_in_small_regime():
    net, base, model = trained("case33")
    assert np.max(np.abs(model.alpha(base.p, base.q, return_var=False))) < 0.1


def test_zero_scenario_prediction():
    net, base, model = trained("case33")
    pred = pl.predict(model, net, Scenario.zeros(net.n_buses))
    assert np.all(pred.V == np.sqrt(net.root_voltage_sq))
    assert np.all(pred.ci_halfwidth == 0) and np.all(pred.ci_halfwidth_v == 0)


def test_base_and_k2_accuracy():
    net, base, model = trained("case33")
    err = np.abs(pl.predict(model, net, base).V - acpf.solve(net, base).V)
    assert err.max() <= 2 * 0.00125
    sc = base.scaled(2.0)
    exact = acpf.solve(net, sc).V
    e_plpf = np.abs(pl.predict(model, net, sc).V - exact).max()
    e_sdf = np.abs(sqrt_voltage(sdistflow_solve(net, sc)) - exact).max()
    assert err.max() < e_plpf < e_sdf


def test_confidence_widens_outside_training_range():
    net, base, model = trained("case33")
    ci_base = pl.predict(model, net, base).ci_halfwidth
    ci_far = pl.predict(model, net, base.scaled(3.0)).ci_halfwidth
    assert np.all(ci_far > ci_base)


def test_predict_batch_matches_predict():
    net, base, model = trained("case33")
    ks = np.array([0.5, 1.0, -1.2])
    V = pl.predict_batch(model, net, base.p[:, None] * ks, base.q[:, None] * ks)
    for c, k in enumerate(ks):
        assert np.allclose(V[:, c], pl.predict(model, net, base.scaled(k)).V, atol=1e-15, rtol=0)


def test_guarded_branch_is_neutral():
    # a branch carrying nothing has a zero drop term, so its alpha cannot move v
    net = build_network([0, 1, 2], [(0, 1, 0.02, 0.01), (1, 2, 0.03, 0.02)], 0)
    sc = Scenario([-0.2, 0.0], [-0.1, 0.0])
    a = np.array([0.01, 0.0])
    b = np.array([0.01, 0.9])
    assert np.array_equal(plpf_apply(net, a, sc.p, sc.q), plpf_apply(net, b, sc.p, sc.q))


def test_save_load_round_trip(case69):
    net, base, model = trained("case33")
    blob = pl.save_model(model)
    again = pl.load_model(blob, net)
    assert pl.save_model(again) == blob
    a, b = pl.predict(model, net, base), pl.predict(again, net, base)
    assert np.array_equal(a.V, b.V) and np.array_equal(a.ci_halfwidth, b.ci_halfwidth)
    with pytest.raises(VersionMismatch):
        pl.load_model(blob[: len(blob) // 2])
    with pytest.raises(VersionMismatch):
        pl.load_model(blob.replace(b'"version": 1', b'"version": 9'))
    with pytest.raises(FingerprintMismatch):
        pl.load_model(blob, case69[0])
    with pytest.raises(FingerprintMismatch):
        pl.predict(model, case69[0], case69[1])


def test_few_samples_report(case33):
    # report-only: alpha error with 5 versus 20 training samples
    net, base = case33
    rng = np.random.default_rng(99)
    ks = rng.uniform(1, 2, 5) * rng.choice([-1, 1], 5)
    out = {}
    for p in (5, 20):
        model = pl.parameterize(net, pl.gen_training_set(net, base, pl.TrainingSpec(p_samples=p, seed=7)), seed=7)
        errs = []
        for k in ks:
            sc = base.scaled(k)
            exact = exact_alpha(net, sc, acpf.solve(net, sc).ell).alpha
            errs.append(np.mean((model.alpha(sc.p, sc.q, return_var=False) - exact) ** 2))
        out[p] = float(np.mean(errs))
    print(f"held-out alpha MSE: p=5 {out[5]:.2e}, p=20 {out[20]:.2e}")
    assert np.isfinite(out[5]) and np.isfinite(out[20])
