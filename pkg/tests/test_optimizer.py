import numpy as np
import pytest
from hypothesis import given, strategies as st

from czgrape.dynamics import ControlPulse, propagate
from czgrape.model import DeviceParams, TabulatedAnharmonicity, build_decomposition
from czgrape.optimizer import (
    CZ,
    MAX_ITERATIONS,
    STALLED,
    TARGET_REACHED,
    CZPulseOptimizer,
    OptimizationConfig,
    TargetGate,
    fidelity,
    fidelity_and_gradient,
    grape_gradient,
    initial_pulse,
    optimize,
)
from czgrape.statespace import Basis
from czgrape.transfer import GaussianTransferFunction

DIMLESS_T = 9 / (2 * np.pi * 0.1)


def embed(gate4):
    b = Basis()
    u = np.eye(b.dim, dtype=complex)
    idx = b.computational_indices
    u[np.ix_(idx, idx)] = gate4
    return u


def test_fidelity_of_target_is_one():
    assert fidelity(embed(CZ)) == pytest.approx(1.0, abs=1e-15)


def test_fidelity_of_identity():
    assert fidelity(np.eye(10)) == pytest.approx(0.25)


def test_fidelity_with_full_leakage_from_11():
    # |11> fully leaves the computational block: |1+1+1+0|^2 / 16
    b = Basis()
    u = embed(CZ)
    i11, i02 = b.state_index(1, 1, 0), b.state_index(0, 2, 0)
    u[:, [i11, i02]] = u[:, [i02, i11]]
    assert fidelity(u) == pytest.approx(9 / 16)


@given(st.floats(-np.pi, np.pi))
def test_fidelity_ignores_global_phase(phase):
    u = embed(np.diag(np.exp(1j * np.array([0.1, 0.2, -0.3, 2.0]))))
    assert fidelity(np.exp(1j * phase) * u) == pytest.approx(fidelity(u), abs=1e-14)


def test_target_gate_validation():
    with pytest.raises(ValueError):
        TargetGate(np.eye(3))
    with pytest.raises(ValueError):
        TargetGate(2 * np.eye(4))


def test_custom_target():
    tgt = TargetGate(np.eye(4))
    assert fidelity(np.eye(10), tgt) == pytest.approx(1.0)


def _random_pulse(rng, n=12, n_buffer=2, park=(1.0, 1.0)):
    return ControlPulse(0.5, rng.uniform(-0.3, 0.4, (2, n)), n_buffer, park)


def _fd_gradient(pulse, params, transfer=None, h=1e-6):
    decomp = build_decomposition(params)

    def phi(ch):
        p = pulse.with_channels(ch)
        s = p.samples()
        if transfer is not None:
            s = transfer.transform(s, pad_values=p.buffer_values)
        return fidelity(propagate(p, decomp, samples=s))

    out = np.zeros_like(pulse.channels)
    for idx in np.ndindex(*pulse.channels.shape):
        up, dn = pulse.channels.copy(), pulse.channels.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (phi(up) - phi(dn)) / (2 * h)
    return out


def _tabulated_params():
    d = np.linspace(-1.0, 1.5, 26)
    # a smooth, non-affine anharmonicity curve
    a1 = TabulatedAnharmonicity(d, -0.5 + 0.05 * np.tanh(d), order=3)
    a2 = TabulatedAnharmonicity(d, -0.4 - 0.03 * d**2, order=3)
    return DeviceParams(5.0, (6.0, 6.0), (0.1, 0.1), (a1, a2))


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("sigma", [None, 0.8])
@pytest.mark.parametrize("model", ["constant", "tabulated"])
def test_gradient_matches_finite_differences(seed, sigma, model):
    params = DeviceParams.dimensionless() if model == "constant" else _tabulated_params()
    rng = np.random.default_rng(seed)
    pulse = _random_pulse(rng)
    transfer = GaussianTransferFunction(sigma).fit(pulse) if sigma else None
    grad = grape_gradient(pulse, params, transfer=transfer)
    fd = _fd_gradient(pulse, params, transfer)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-6


def test_gradient_covers_only_optimizable_pixels(dimless, rng):
    pulse = _random_pulse(rng, n=7, n_buffer=4)
    assert grape_gradient(pulse, dimless).shape == (2, 7)


def test_symmetric_device_gives_symmetric_gradient(rng):
    params = DeviceParams.dimensionless()
    row = rng.uniform(-0.3, 0.4, 10)
    pulse = ControlPulse(0.5, np.stack([row, row]), 2, (1.0, 1.0))
    grad = grape_gradient(pulse, params)
    np.testing.assert_allclose(grad[0], grad[1], atol=1e-12)


def test_swap_symmetry(table1, rng):
    pulse = _random_pulse(rng, n=20, park=tuple(table1.parking_detuning))
    f = fidelity(propagate(pulse, table1))
    g = grape_gradient(pulse, table1)
    f_sw = fidelity(propagate(pulse.swapped(), table1.swapped()))
    g_sw = grape_gradient(pulse.swapped(), table1.swapped())
    assert f_sw == pytest.approx(f, abs=1e-12)
    np.testing.assert_allclose(g_sw, g[::-1], atol=1e-12)


def test_fidelity_and_gradient_agree_with_propagate(table1, rng):
    pulse = _random_pulse(rng, n=15, park=tuple(table1.parking_detuning))
    phi, grad = fidelity_and_gradient(pulse.samples(), pulse.dt, build_decomposition(table1), TargetGate())
    assert phi == pytest.approx(fidelity(propagate(pulse, table1)), abs=1e-13)
    assert grad.shape == (2, pulse.n_total)


# configuration and starting pulses


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizationConfig(gate_time=0)
    with pytest.raises(ValueError):
        OptimizationConfig(gate_time=10, initial="bogus")
    with pytest.raises(ValueError):
        OptimizationConfig(gate_time=10, fred=3)
    with pytest.raises(ValueError):
        OptimizationConfig(gate_time=10, filter_sigma=0.0)


def test_pixel_grid_spans_gate_time():
    cfg = OptimizationConfig(gate_time=14.3, dt=0.5)
    assert cfg.n_pixels == 29
    assert cfg.n_pixels * cfg.pixel_dt == pytest.approx(14.3)


@pytest.mark.parametrize("kind", ["constant", "random", "nudge"])
def test_initial_pulse_is_deterministic(kind, table1):
    cfg = OptimizationConfig(gate_time=20.0, initial=kind, seed=7)
    a, b = initial_pulse(cfg, table1), initial_pulse(cfg, table1)
    np.testing.assert_array_equal(a.channels, b.channels)
    assert a.n_pixels == 40 and a.n_buffer == 5
    np.testing.assert_allclose(a.buffer_values, table1.parking_detuning)


def test_constant_initial_pulse_sits_at_parking(table1):
    p = initial_pulse(OptimizationConfig(gate_time=10.0, initial="constant"), table1)
    np.testing.assert_allclose(p.channels, np.repeat(table1.parking_detuning[:, None], 20, axis=1))


def test_nudge_initial_pulse(dimless):
    params = DeviceParams.dimensionless(anharmonicity_ratio=(-0.3, -0.1))
    cfg = OptimizationConfig(gate_time=DIMLESS_T, initial="nudge", fred=2, initial_jitter=0.0)
    p = initial_pulse(cfg, params)
    np.testing.assert_allclose(p.channels[0], params.parking_detuning[0])
    np.testing.assert_allclose(p.channels[1], 0.25)
    cfg1 = cfg.replace(fred=1)
    np.testing.assert_allclose(initial_pulse(cfg1, params).channels[0], 0.75)


def test_random_initial_pulse_uses_slow_modes_only(dimless):
    cfg = OptimizationConfig(gate_time=DIMLESS_T, initial="random", initial_jitter=0.0, seed=3)
    p = initial_pulse(cfg, dimless)
    t = (np.arange(p.n_pixels) + 0.5) / p.n_pixels
    m = np.arange(1, 6)
    # every mode used has frequency m / (2 T) below 2 g
    assert np.all(m / (2 * cfg.gate_time) < 2 * dimless.g[0])
    modes = np.sin(np.pi * np.outer(m, t))
    coeffs, *_ = np.linalg.lstsq(modes.T, p.channels.T, rcond=None)
    np.testing.assert_allclose(modes.T @ coeffs, p.channels.T, atol=1e-12)


def test_seed_changes_random_pulse(dimless):
    cfg = OptimizationConfig(gate_time=DIMLESS_T, seed=0)
    a = initial_pulse(cfg, dimless)
    b = initial_pulse(cfg.replace(seed=1), dimless)
    assert not np.allclose(a.channels, b.channels)


# optimization runs


@pytest.fixture(scope="module")
def short_run():
    cfg = OptimizationConfig(gate_time=DIMLESS_T, target_error=1e-4, seed=0)
    return optimize(cfg, DeviceParams.dimensionless())


def test_dimensionless_run_reaches_target(short_run):
    assert short_run.termination == TARGET_REACHED and short_run.success
    assert short_run.error <= 1e-4


def test_history_is_monotone(short_run):
    h = np.array(short_run.fidelity_history)
    assert np.all(np.diff(h) >= -1e-15)
    assert len(short_run.gradient_norms) == len(h)


def test_reported_fidelity_matches_propagation(short_run):
    u = propagate(short_run.pulse, DeviceParams.dimensionless())
    assert fidelity(u) == pytest.approx(short_run.fidelity, abs=1e-13)


def test_buffers_never_move(short_run, dimless):
    p = short_run.pulse
    s = p.samples()
    np.testing.assert_array_equal(s[:, : p.n_buffer], np.repeat(dimless.parking_detuning[:, None], 5, axis=1))
    np.testing.assert_array_equal(s[:, -p.n_buffer :], np.repeat(dimless.parking_detuning[:, None], 5, axis=1))


def test_runs_are_deterministic(short_run, dimless):
    again = optimize(short_run.config, dimless)
    np.testing.assert_array_equal(again.pulse.channels, short_run.pulse.channels)
    assert again.fidelity_history == short_run.fidelity_history


def test_max_iterations_reported(dimless):
    res = optimize(OptimizationConfig(gate_time=DIMLESS_T, max_iterations=3, target_error=1e-12), dimless)
    assert res.termination == MAX_ITERATIONS and res.iterations == 3 and not res.success


def test_stall_reported_by_gradient_tolerance(dimless):
    res = optimize(OptimizationConfig(gate_time=DIMLESS_T, gtol=1e6), dimless)
    assert res.termination == STALLED and res.iterations == 0


def test_callback_sees_each_iteration(dimless):
    seen = []
    optimize(OptimizationConfig(gate_time=DIMLESS_T, max_iterations=5), dimless, callback=lambda i, f, x: seen.append(i))
    assert seen == [1, 2, 3, 4, 5]


def test_initial_pulse_length_checked(dimless):
    with pytest.raises(ValueError, match="pixels"):
        optimize(OptimizationConfig(gate_time=DIMLESS_T), dimless, initial=ControlPulse.constant(0.5, 3, (1, 1)))


def test_filtered_run_reports_seen_samples(dimless):
    cfg = OptimizationConfig(gate_time=DIMLESS_T, filter_sigma=0.8, max_iterations=5)
    res = optimize(cfg, dimless)
    expect = GaussianTransferFunction(0.8).fit(res.pulse).transform(res.pulse)
    np.testing.assert_allclose(res.seen_samples(), expect)
    assert fidelity(propagate(res.pulse, dimless, samples=res.filtered)) == pytest.approx(res.fidelity, abs=1e-13)


def test_tabulated_run_stays_inside_table():
    params = _tabulated_params()
    res = optimize(OptimizationConfig(gate_time=DIMLESS_T, max_iterations=30, initial_step=0.5), params)
    lo, hi = params.anharmonicity[0].domain
    assert res.pulse.channels.min() >= lo and res.pulse.channels.max() <= hi


def test_result_to_dict_is_plain(short_run):
    import json

    d = json.loads(json.dumps(short_run.to_dict()))
    assert d["termination"] == TARGET_REACHED and d["n_pixels"] == short_run.pulse.n_pixels


# estimator interface


def test_estimator_fit_predict_score(dimless):
    est = CZPulseOptimizer(gate_time=DIMLESS_T, target_error=1e-3)
    assert est.fit(dimless) is est
    assert est.score(dimless) == pytest.approx(est.result_.fidelity, abs=1e-13)
    assert est.predict().shape == (10, 10)
    assert est.n_iter_ == est.result_.iterations


def test_estimator_params_round_trip():
    from sklearn.base import clone

    est = CZPulseOptimizer(gate_time=20.0, seed=4, filter_sigma=0.8)
    c = clone(est)
    assert c.get_params() == est.get_params()


def test_estimator_rejects_non_device():
    with pytest.raises(TypeError):
        CZPulseOptimizer().fit(np.zeros((2, 3)))


def test_estimator_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        CZPulseOptimizer().predict(DeviceParams.dimensionless())
