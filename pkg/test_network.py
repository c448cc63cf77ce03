import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

import pog
from constraints import ConstraintSet
from errors import DataFormatError, DegenerateProductError, ValidationError, ZeroDensityError
from gating import context_index
from network import (AGG_SWITCHING, AGG_TOP, NetworkConfig, SwitchingState, build_network, forward, infer,
                     infer_update, load_snapshot, predict_density, save_snapshot, switching_step)
from pog import UnivariateGaussian


def _config(**kwargs):
    params = dict(layer_sizes=(1,), context_dim=1, learning_rate=0.01, side_dim=2, base_count=1,
                  bias_r=None, aggregation=AGG_TOP)
    params.update(kwargs)
    return NetworkConfig(**params)


class TestNetworkConfig:

    def test_rejects_learning_rate_out_of_range(self):
        with pytest.raises(ValidationError):
            _config(learning_rate=1.5)

    def test_rejects_form_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            _config(form=pog.ISOTROPIC)

    def test_rejects_network_without_inputs(self):
        with pytest.raises(ValidationError):
            _config(base_count=0)

    def test_dict_round_trip(self):
        cfg = _config(layer_sizes=(3, 1), constraints=ConstraintSet(w_max=50.0))
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


class TestBuild:

    def test_initial_weights(self):
        net = build_network(_config(layer_sizes=(3, 1), base_count=4), np.random.default_rng(0))
        np.testing.assert_array_equal(net.neuron(1, 0).weights, np.full((2, 4), 0.25))
        np.testing.assert_allclose(net.neuron(2, 0).weights, np.full((2, 3), 1 / 3))

    def test_bias_inputs_counted_in_fan_in(self):
        net = build_network(_config(layer_sizes=(3, 1), base_count=4, bias_r=5.0), np.random.default_rng(0))
        assert net.layers[0].fan_in == 6
        assert net.layers[1].fan_in == 5
        assert net.bias_count == 2

    def test_deterministic_under_seed(self):
        cfg = _config(layer_sizes=(4, 2), context_dim=3, base_count=2)
        a, b = build_network(cfg, np.random.default_rng(7)), build_network(cfg, np.random.default_rng(7))
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.gating.normals, lb.gating.normals)
            np.testing.assert_array_equal(la.gating.offsets, lb.gating.offsets)

    def test_switching_initialized_uniform(self):
        net = build_network(_config(layer_sizes=(3, 1), base_count=2, aggregation=AGG_SWITCHING),
                            np.random.default_rng(0))
        np.testing.assert_allclose(net.switching.weights, np.full(4, 0.25))


class TestInference:

    def test_identity_stacking(self):
        net = build_network(_config(), np.random.default_rng(0))
        out = infer(net, [UnivariateGaussian(1.3, 0.7)], np.array([0.2, -0.4]))
        assert out.mean == pytest.approx(1.3, abs=1e-12)
        assert out.variance == pytest.approx(0.7, abs=1e-12)

    def test_equal_experts_collapse(self):
        rng = np.random.default_rng(1)
        net = build_network(_config(layer_sizes=(5, 3, 1), context_dim=2, base_count=3), rng)
        for layer in net.layers:
            for k in range(layer.neurons):
                net.set_neuron_weights(net.layers.index(layer) + 1, k,
                                       rng.uniform(0.1, 2.0, (layer.cells, layer.fan_in)))
        out = infer(net, [UnivariateGaussian(0.8, 1.5)] * 3, rng.standard_normal(2))
        assert out.mean == pytest.approx(0.8, abs=1e-12)

    def test_matches_neuron_by_neuron_products(self):
        rng = np.random.default_rng(2)
        cfg = _config(layer_sizes=(3, 1), context_dim=2, base_count=2, bias_r=5.0)
        net = build_network(cfg, rng)
        for i, layer in enumerate(net.layers, start=1):
            for k in range(layer.neurons):
                net.set_neuron_weights(i, k, rng.uniform(0.1, 2.0, (layer.cells, layer.fan_in)))
        base = [UnivariateGaussian(-0.5, 0.8), UnivariateGaussian(1.0, 2.0)]
        bias = [UnivariateGaussian(-5.0, 1.0), UnivariateGaussian(5.0, 1.0)]
        z = rng.standard_normal(2)

        inputs = base
        for i, layer in enumerate(net.layers, start=1):
            outputs = []
            for k in range(layer.neurons):
                state = net.neuron(i, k)
                row = state.weights[context_index(state.context, z)]
                outputs.append(pog.pog_univariate(inputs + bias, row))
            inputs = outputs
        out = infer(net, base, z)
        assert out.mean == pytest.approx(inputs[0].mean, abs=1e-12)
        assert out.variance == pytest.approx(inputs[0].variance, abs=1e-12)

    def test_two_layers_match_quadrature(self):
        rng = np.random.default_rng(3)
        net = build_network(_config(layer_sizes=(3, 1), context_dim=2, base_count=2, bias_r=5.0), rng)
        for i, layer in enumerate(net.layers, start=1):
            for k in range(layer.neurons):
                net.set_neuron_weights(i, k, rng.uniform(0.1, 2.0, (layer.cells, layer.fan_in)))
        base = [UnivariateGaussian(-0.5, 0.8), UnivariateGaussian(1.0, 2.0)]
        bias = [UnivariateGaussian(-5.0, 1.0), UnivariateGaussian(5.0, 1.0)]
        z = rng.standard_normal(2)

        grid = np.linspace(-30, 30, 200_001)

        def normalized(log_density):
            shifted = np.exp(log_density - log_density.max())
            return log_density - log_density.max() - np.log(trapezoid(shifted, grid))

        bias_logs = [norm.logpdf(grid, e.mean, math.sqrt(e.variance)) for e in bias]
        logs = [norm.logpdf(grid, e.mean, math.sqrt(e.variance)) for e in base]
        for i, layer in enumerate(net.layers, start=1):
            outputs = []
            for k in range(layer.neurons):
                state = net.neuron(i, k)
                row = state.weights[context_index(state.context, z)]
                outputs.append(normalized(sum(w * f for w, f in zip(row, logs + bias_logs))))
            logs = outputs
        density = np.exp(logs[0])
        mean = trapezoid(grid * density, grid)
        variance = trapezoid((grid - mean) ** 2 * density, grid)

        out = infer(net, base, z)
        assert out.mean == pytest.approx(mean, abs=1e-5)
        assert out.variance == pytest.approx(variance, abs=1e-5)

    def test_degenerate_neuron_named(self):
        net = build_network(_config(layer_sizes=(3, 1), base_count=2), np.random.default_rng(0))
        layer = net.layers[0]
        net.set_neuron_weights(1, 2, np.zeros((layer.cells, layer.fan_in)))
        with pytest.raises(DegenerateProductError) as info:
            infer(net, [UnivariateGaussian(0, 1), UnivariateGaussian(1, 1)], np.zeros(2))
        assert (info.value.layer, info.value.neuron) == (1, 2)

    def test_wrong_base_count(self):
        net = build_network(_config(), np.random.default_rng(0))
        with pytest.raises(ValidationError):
            infer(net, [UnivariateGaussian(0, 1)] * 2, np.zeros(2))

    def test_standard_normal_density(self):
        net = build_network(_config(), np.random.default_rng(0))
        assert predict_density(net, [UnivariateGaussian(0, 1)], np.zeros(2), 0.0) == pytest.approx(0.39894, abs=1e-5)

    def test_density_symmetric_and_normalized(self):
        rng = np.random.default_rng(4)
        net = build_network(_config(layer_sizes=(3, 1), context_dim=2, base_count=2, bias_r=5.0), rng)
        base = [UnivariateGaussian(0.3, 0.5), UnivariateGaussian(-1.0, 1.5)]
        z = rng.standard_normal(2)
        out = infer(net, base, z)
        for a in (0.1, 0.5, 2.0):
            assert predict_density(net, base, z, out.mean + a) == \
                pytest.approx(predict_density(net, base, z, out.mean - a), rel=1e-9)
        sd = math.sqrt(out.variance)
        grid = np.linspace(out.mean - 12 * sd, out.mean + 12 * sd, 4001)
        values = [predict_density(net, base, z, y) for y in grid]
        assert trapezoid(values, grid) == pytest.approx(1.0, abs=1e-6)


class TestUpdate:

    def test_zero_learning_rate_is_noop(self):
        net = build_network(_config(layer_sizes=(3, 1), base_count=2), np.random.default_rng(0))
        base = [UnivariateGaussian(0, 1), UnivariateGaussian(2, 1)]
        before = [layer.weights(k) for layer in net.layers for k in range(layer.neurons)]
        expected = infer(net, base, np.ones(2))
        prediction, _ = infer_update(net, base, np.ones(2), 2.0, eta=0.0)
        after = [layer.weights(k) for layer in net.layers for k in range(layer.neurons)]
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)
        assert prediction.mean == expected.mean

    def test_weight_moves_towards_target_expert(self):
        net = build_network(_config(base_count=2), np.random.default_rng(0))
        z = np.array([0.3, 0.1])
        idx = net.layers[0].gating.indices(z)[0]
        infer_update(net, [UnivariateGaussian(0, 1), UnivariateGaussian(2, 1)], z, 2.0)
        row = net.neuron(1, 0).weights[idx]
        assert row[1] > 0.5
        assert row[0] < 0.5

    def test_only_active_rows_change(self):
        rng = np.random.default_rng(3)
        net = build_network(_config(layer_sizes=(4, 2), context_dim=3, base_count=2, bias_r=5.0), rng)
        for _ in range(20):
            z = rng.standard_normal(2)
            active = [layer.gating.indices(z) for layer in net.layers]
            before = [[layer.weights(k) for k in range(layer.neurons)] for layer in net.layers]
            base = [UnivariateGaussian(rng.uniform(-1, 1), 1.0) for _ in range(2)]
            infer_update(net, base, z, rng.uniform(-2, 2))
            for layer, old, idx in zip(net.layers, before, active):
                for k in range(layer.neurons):
                    untouched = np.arange(layer.cells) != idx[k]
                    np.testing.assert_array_equal(layer.weights(k)[untouched], old[k][untouched])

    def test_repeated_presentation_lowers_loss(self):
        rng = np.random.default_rng(4)
        cs = ConstraintSet(use_barrier=False)
        for _ in range(100):
            net = build_network(_config(base_count=3, learning_rate=1e-3, constraints=cs), rng)
            base = [UnivariateGaussian(rng.uniform(-2, 2), rng.uniform(0.3, 2.0)) for _ in range(3)]
            mu, unc = pog.stack_experts(base)[1:]
            z, y = rng.standard_normal(2), rng.uniform(-2, 2)
            first = forward(net, mu, unc, z).layer_nll(y)[0][0]
            infer_update(net, base, z, y)
            second = forward(net, mu, unc, z).layer_nll(y)[0][0]
            assert second <= first + 1e-12

    def test_weights_stay_feasible(self):
        rng = np.random.default_rng(5)
        cs = ConstraintSet(w_max=5.0, sigma2_min=0.05, sigma2_max=20.0)
        net = build_network(_config(layer_sizes=(3, 1), base_count=2, bias_r=5.0, learning_rate=0.5,
                                    constraints=cs), rng)
        for _ in range(200):
            base = [UnivariateGaussian(rng.uniform(-3, 3), 0.5) for _ in range(2)]
            infer_update(net, base, rng.standard_normal(2), rng.uniform(-3, 3))
        for layer in net.layers:
            for k in range(layer.neurons):
                W = layer.weights(k)
                assert np.all((W >= 0) & (W <= cs.w_max))


class TestSwitching:

    def test_symmetric_pair_is_fixed_point(self):
        _, st = switching_step(SwitchingState.initial(2), [0.3, 0.3])
        np.testing.assert_allclose(st.weights, [0.5, 0.5], atol=1e-15)

    def test_winner_takes_posterior_share(self):
        pi, st = switching_step(SwitchingState.initial(3), [1.0, 0.0, 0.0])
        assert pi == pytest.approx(1 / 3)
        np.testing.assert_allclose(st.weights, [0.5, 0.25, 0.25])
        assert st.t == 2

    def test_zero_density_raises(self):
        with pytest.raises(ZeroDensityError):
            switching_step(SwitchingState.initial(2), [0.0, 0.0])

    def test_negative_density_rejected(self):
        with pytest.raises(ValidationError):
            switching_step(SwitchingState.initial(2), [-1.0, 1.0])

    def test_weights_remain_a_distribution(self):
        rng = np.random.default_rng(6)
        st = SwitchingState.initial(5)
        for _ in range(1000):
            _, st = switching_step(st, rng.uniform(0.0, 2.0, 5) + 1e-12)
            assert np.all((st.weights >= 0) & (st.weights <= 1))
            assert abs(st.weights.sum() - 1.0) <= 1e-12

    def test_mixture_density(self):
        net = build_network(_config(layer_sizes=(2, 1), base_count=1, aggregation=AGG_SWITCHING),
                            np.random.default_rng(0))
        base = [UnivariateGaussian(0.5, 2.0)]
        # все нейроны повторяют единственный вход
        expected = math.exp(-pog.nll(pog.UNIVARIATE, 1.0, np.array([0.5]), np.array([2.0]))[0])
        assert predict_density(net, base, np.zeros(2), 1.0) == pytest.approx(expected)


class TestSnapshot:

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        net = build_network(_config(layer_sizes=(3, 1), context_dim=2, base_count=2, bias_r=5.0,
                                    aggregation=AGG_SWITCHING), rng)
        for _ in range(30):
            base = [UnivariateGaussian(rng.uniform(-1, 1), 1.0) for _ in range(2)]
            infer_update(net, base, rng.standard_normal(2), rng.uniform(-1, 1))
        path = tmp_path / 'net.ggln'
        save_snapshot(net, path)
        loaded = load_snapshot(path)

        assert loaded.cfg == net.cfg
        assert loaded.switching.t == net.switching.t
        np.testing.assert_array_equal(loaded.switching.weights, net.switching.weights)
        for i in (1, 2):
            for k in range(net.layers[i - 1].neurons):
                np.testing.assert_array_equal(loaded.neuron(i, k).weights, net.neuron(i, k).weights)
        base = [UnivariateGaussian(0.2, 1.0), UnivariateGaussian(-0.1, 1.0)]
        z = np.array([0.4, -0.9])
        assert infer(loaded, base, z).mean == infer(net, base, z).mean

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'bad.ggln'
        path.write_bytes(b'NOPE' + bytes(16))
        with pytest.raises(DataFormatError):
            load_snapshot(path)

    def test_truncated_file(self, tmp_path):
        net = build_network(_config(), np.random.default_rng(0))
        path = tmp_path / 'net.ggln'
        save_snapshot(net, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataFormatError):
            load_snapshot(path)
