import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tde import nn
from tde.autodiff import Tensor
from tde.data import Instance
from tde.errors import ConfigError, ContractError, DataError, DimensionError
from tde.model import (
    TdeConfig,
    TdeModel,
    TimeStepGroup,
    aggregate_attention,
    aggregate_mean,
    attention_weights,
    export_embeddings,
    forward,
    head_outputs,
    pack,
    predict_online,
    time_embed,
    variable_embed,
)
from tde.data import Dataset, Schema, VariableSpec


def set_param(model, name, value):
    model.params[name].data = np.array(value, dtype=np.float64)


def random_instance(rng, D, n_times, D_static=0, iid="x", label=0, max_per_time=None):
    times = np.sort(rng.choice(np.arange(1, 200) / 4.0, size=n_times, replace=False))
    obs = []
    for t in times:
        k = rng.integers(1, (max_per_time or D) + 1)
        for d in rng.choice(D, size=k, replace=False):
            obs.append((float(t), float(rng.normal()), int(d)))
    statics = []
    if D_static:
        for d in rng.choice(D_static, size=rng.integers(1, D_static + 1), replace=False):
            statics.append((int(d), float(rng.normal())))
    return Instance(iid, obs, statics, label)


def small_model(mode="attention", softmax=False, seed=0, **kw):
    cfg = dict(D=5, D_static=3, mode=mode, attention_softmax=softmax, var_dim=4, static_dim=3,
               time_dim=4 if mode == "mean" else 3, hidden=5, heads=2, clf_hidden=4)
    cfg.update(kw)
    return TdeModel(TdeConfig(**cfg), seed=seed)


class TestConfig:
    def test_mean_needs_matching_dims(self):
        with pytest.raises(ConfigError):
            TdeConfig(D=3, mode="mean", var_dim=4, agg_dim=6)

    def test_defaults_split_heads(self):
        c = TdeConfig(D=3, var_dim=8, heads=2)
        assert c.qk_dim == c.v_dim == 4

    def test_time_projection_only_when_sizes_differ(self):
        assert "W_t" not in TdeModel(TdeConfig(D=3, var_dim=4, time_dim=4)).params
        assert TdeModel(TdeConfig(D=3, var_dim=4, time_dim=6)).params["W_t"].shape == (4, 6)


class TestVariableEmbed:
    def test_zero_weights(self):
        m = small_model()
        set_param(m, "W_e", np.zeros((4, 5)))
        set_param(m, "b_e", np.zeros(4))
        assert variable_embed(3, m).tolist() == [0.0] * 4

    def test_identity(self):
        m = TdeModel(TdeConfig(D=4, var_dim=4))
        set_param(m, "W_e", np.eye(4))
        set_param(m, "b_e", np.zeros(4))
        assert variable_embed(2, m).tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_hand_evaluation(self):
        m = TdeModel(TdeConfig(D=1, var_dim=2))
        set_param(m, "W_e", [[-1.0], [2.0]])
        set_param(m, "b_e", [0.5, -3.0])
        assert variable_embed(0, m).tolist() == [0.0, 0.0]

    def test_out_of_range(self):
        with pytest.raises(DimensionError):
            variable_embed(5, small_model())

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 20))
    def test_positivity(self, seed, scale):
        m = small_model(seed=seed)
        rng = np.random.default_rng(seed)
        set_param(m, "W_e", rng.normal(scale=scale, size=(4, 5)))
        set_param(m, "b_e", rng.normal(scale=scale, size=4))
        for i in range(5):
            assert np.all(variable_embed(i, m) >= 0)


class TestTimeEmbed:
    def test_zero(self):
        m = small_model()
        set_param(m, "beta", np.zeros(3))
        assert time_embed(0.0, m).tolist() == [0.0, 0.0, 0.0]

    def test_direct_evaluation(self):
        m = TdeModel(TdeConfig(D=2, var_dim=2, time_dim=2))
        set_param(m, "omega", [1.0, math.pi / 2])
        set_param(m, "beta", [0.0, 0.0])
        np.testing.assert_allclose(time_embed(1.0, m), [1.0, 1.0], rtol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 100), st.floats(-10, 10), st.integers(0, 1000))
    def test_linear_term_translation(self, t, delta, seed):
        m = small_model(seed=seed)
        w0 = m.params["omega"].data[0]
        shift = time_embed(t + delta, m)[0] - time_embed(t, m)[0]
        assert shift == pytest.approx(w0 * delta, abs=1e-9)


class TestAggregateMean:
    def model(self, seed=0):
        return small_model("mean", seed=seed)

    def zero_time(self, m):
        set_param(m, "omega", np.zeros(4))
        set_param(m, "beta", np.zeros(4))

    def test_singleton(self):
        m = self.model()
        self.zero_time(m)
        out = aggregate_mean(TimeStepGroup(2.0, [3], [1.0]), m)
        assert out.tolist() == variable_embed(3, m).tolist()

    def test_cancellation(self):
        m = self.model()
        W = m.params["W_e"].data.copy()
        W[:, 1] = W[:, 0]
        set_param(m, "W_e", W)
        out = aggregate_mean(TimeStepGroup(1.5, [0, 1], [2.0, -2.0]), m)
        np.testing.assert_allclose(out, time_embed(1.5, m), atol=1e-15)

    def test_three_observations_oracle(self):
        m = self.model(seed=4)
        g = TimeStepGroup(3.25, [0, 2, 4], [0.7, -1.2, 2.5])
        expected = oracles.mean_status(oracles._p(m), 3.25, list(zip(g.variables.tolist(), g.values.tolist())))
        np.testing.assert_allclose(aggregate_mean(g, m), expected, rtol=1e-10, atol=1e-14)

    def test_empty_group(self):
        with pytest.raises(ContractError):
            TimeStepGroup(0.0, [], [])


class TestAggregateAttention:
    def test_zero_values(self):
        m = small_model()
        out = aggregate_attention(TimeStepGroup(1.0, [0, 1, 3], [0.0, 0.0, 0.0]), m)
        np.testing.assert_array_equal(head_outputs(TimeStepGroup(1.0, [0, 1, 3], [0.0] * 3), m), 0.0)
        p = oracles._p(m)
        f0 = [max(0.0, b) for b in p["f_b1"]]
        f0 = [v + b for v, b in zip(oracles.matvec(p["f_W2"], f0), p["f_b2"])]
        expected = [a + b for a, b in zip(f0, oracles.time_vec(p, 1.0))]
        np.testing.assert_allclose(out, expected, rtol=1e-12)

    def test_softmax_single_variable_weight_is_one(self):
        m = small_model(softmax=True)
        w = attention_weights(TimeStepGroup(1.0, [2], [0.3]), m)
        assert w.tolist() == [[1.0, 1.0]]

    def test_two_variable_literal_oracle(self):
        m = TdeModel(TdeConfig(D=3, var_dim=2, heads=1, qk_dim=2, v_dim=2, time_dim=2))
        set_param(m, "W_e", [[0.5, -0.2, 1.0], [0.3, 0.8, -0.4]])
        set_param(m, "b_e", [0.1, 0.2])
        set_param(m, "W_q", [[1.0, 0.5], [-0.3, 0.2]])
        set_param(m, "W_k", [[0.4, -0.6], [0.9, 0.1]])
        set_param(m, "W_v", [[0.2, 0.7], [-0.5, 0.3]])
        g = TimeStepGroup(2.0, [0, 1], [1.5, -0.5])
        p = oracles._p(m)
        obs = [(0, 1.5), (1, -0.5)]
        # the literal double sum: sum_i sum_j x_j (Q_i.K_j)/sqrt(D_k) V_i
        E = [oracles.embed(p, i) for i, _ in obs]
        Q = [oracles.matvec(p["W_q"], e) for e in E]
        K = [oracles.matvec(p["W_k"], e) for e in E]
        V = [oracles.matvec(p["W_v"], e) for e in E]
        head = [0.0, 0.0]
        for a in range(2):
            for j in range(2):
                w = obs[j][1] * (Q[a][0] * K[j][0] + Q[a][1] * K[j][1]) / math.sqrt(2)
                head = [head[q] + w * V[a][q] for q in range(2)]
        np.testing.assert_allclose(head_outputs(g, m), head, rtol=1e-12)
        np.testing.assert_allclose(aggregate_attention(g, m), oracles.attention_status(p, m.config, 2.0, obs), rtol=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.booleans())
    def test_random_against_oracle(self, seed, softmax):
        rng = np.random.default_rng(seed)
        m = small_model(softmax=softmax, seed=seed % 1000)
        k = int(rng.integers(1, 6))
        g = TimeStepGroup(float(rng.uniform(0, 48)), rng.choice(5, k, replace=False), rng.normal(size=k))
        obs = list(zip(g.variables.tolist(), g.values.tolist()))
        p = oracles._p(m)
        np.testing.assert_allclose(attention_weights(g, m), oracles.attention_weights(p, m.config, obs), rtol=1e-10, atol=1e-13)
        np.testing.assert_allclose(aggregate_attention(g, m), oracles.attention_status(p, m.config, g.time, obs), rtol=1e-10, atol=1e-13)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31))
    def test_softmax_weights_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        m = small_model(softmax=True, seed=seed % 997)
        k = int(rng.integers(1, 6))
        g = TimeStepGroup(1.0, rng.choice(5, k, replace=False), rng.normal(scale=3, size=k))
        np.testing.assert_allclose(attention_weights(g, m).sum(axis=0), 1.0, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-5, 5))
    def test_nonsoftmax_bilinearity(self, seed, c):
        rng = np.random.default_rng(seed)
        m = small_model(seed=seed % 991)
        k = int(rng.integers(1, 6))
        var, x = rng.choice(5, k, replace=False), rng.normal(size=k)
        base = head_outputs(TimeStepGroup(1.0, var, x), m)
        scaled = head_outputs(TimeStepGroup(1.0, var, c * x), m)
        np.testing.assert_allclose(scaled, c * base, rtol=1e-9, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["mean", "attention"]))
    def test_observed_subset_locality(self, seed, mode):
        rng = np.random.default_rng(seed)
        m = small_model(mode, seed=seed % 983)
        wider = TdeModel(TdeConfig(**{**m.config.to_dict(), "D": 6}), seed=1)
        for name, t in m.params.items():
            wider.params[name].data = t.data.copy() if name != "W_e" else np.hstack(
                [t.data, rng.normal(size=(4, 1))]
            )
        k = int(rng.integers(1, 6))
        g = TimeStepGroup(2.0, rng.choice(5, k, replace=False), rng.normal(size=k))
        agg = aggregate_mean if mode == "mean" else aggregate_attention
        np.testing.assert_array_equal(agg(g, m), agg(g, wider))


class TestGruStep:
    def zero_params(self, n=3, d=2):
        p = nn.gru_params(np.random.default_rng(0), d, n)
        for t in p.values():
            t.data = np.zeros(t.shape)
        return p

    def test_zero_weight_fixed_point(self):
        h = nn.gru_step(np.array([0.4, -1.0, 2.0]), np.array([5.0, -3.0]), self.zero_params())
        np.testing.assert_array_equal(h.data, [0.2, -0.5, 1.0])

    def test_all_zero(self):
        h = nn.gru_step(np.zeros(3), np.zeros(2), self.zero_params())
        assert h.data.tolist() == [0.0, 0.0, 0.0]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = nn.gru_params(rng, 2, 2)
        h, s = rng.normal(size=2), rng.normal(size=2)
        expected = oracles.gru({k: v.data.tolist() for k, v in p.items()}, h.tolist(), s.tolist())
        np.testing.assert_allclose(nn.gru_step(h, s, p).data, expected, rtol=1e-10, atol=1e-15)


class TestForward:
    def test_length_contract(self):
        m = small_model()
        inst = Instance("a", [(0.5, 1.0, 0), (0.5, 2.0, 1), (1.0, 0.3, 2), (4.0, -1.0, 0)])
        tr = forward(inst, m)
        assert tr.local.shape == (3, m.config.agg_dim)
        assert tr.hidden.shape == (3, m.config.hidden)
        assert tr.times.tolist() == [0.5, 1.0, 4.0]

    def test_id_independence(self):
        m = small_model()
        obs = [(0.5, 1.0, 0), (1.0, 0.3, 2)]
        a, b = forward(Instance("a", obs), m), forward(Instance("zz", obs), m)
        np.testing.assert_array_equal(a.hidden, b.hidden)
        np.testing.assert_array_equal(a.probabilities, b.probabilities)

    def test_empty_instance_rejected(self):
        inst = Instance("a", [], [(0, 1.0)])
        object.__setattr__  # statics-only instances are fine
        assert forward(inst, small_model()).hidden.shape == (0, 5)
        with pytest.raises(DataError):
            Instance("b")

    @pytest.mark.parametrize("mode,softmax", [("mean", False), ("attention", False), ("attention", True)])
    def test_matches_loop_oracle(self, mode, softmax):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            m = small_model(mode, softmax, seed=seed)
            inst = random_instance(rng, 5, int(rng.integers(1, 6)), D_static=3)
            tr = forward(inst, m)
            times, local, hidden, probs = oracles.forward(m, inst)
            assert tr.times.tolist() == times
            np.testing.assert_allclose(tr.local, local, rtol=1e-10, atol=1e-13)
            np.testing.assert_allclose(tr.hidden, hidden, rtol=1e-10, atol=1e-13)
            np.testing.assert_allclose(tr.probabilities, probs, rtol=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["mean", "attention"]))
    def test_observation_order_invariance(self, seed, mode):
        rng = np.random.default_rng(seed)
        m = small_model(mode, seed=seed % 101)
        inst = random_instance(rng, 5, int(rng.integers(1, 6)), D_static=3)
        perm = rng.permutation(len(inst))
        shuffled = Instance.from_arrays(inst.id, inst.times[perm], inst.values[perm],
                                        inst.variables[perm], inst.static_vars, inst.static_values)
        a, b = forward(inst, m), forward(shuffled, m)
        np.testing.assert_array_equal(a.local, b.local)
        np.testing.assert_array_equal(a.probabilities, b.probabilities)

    def test_batch_matches_single(self):
        m = small_model()
        rng = np.random.default_rng(3)
        insts = [random_instance(rng, 5, int(rng.integers(1, 7)), 3, iid=str(k)) for k in range(6)]
        probs = m.predict_batch(pack(insts)).data
        for k, inst in enumerate(insts):
            np.testing.assert_allclose(probs[k], forward(inst, m).probabilities, rtol=1e-12)


class TestPredictOnline:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["mean", "attention"]), st.booleans())
    def test_causality_exact(self, seed, mode, softmax):
        rng = np.random.default_rng(seed)
        m = small_model(mode, softmax and mode == "attention", seed=seed % 89)
        inst = random_instance(rng, 5, int(rng.integers(1, 7)), D_static=3)
        online = predict_online(inst, m)
        k = int(rng.integers(len(online)))
        t_k, p_k = online[k]
        truncated = forward(inst.truncate(t_k), m)
        assert truncated.probabilities[1] == p_k

    def test_single_step(self):
        m = small_model()
        inst = Instance("a", [(2.0, 1.0, 0), (2.0, -1.0, 4)])
        online = predict_online(inst, m)
        assert len(online) == 1
        assert online[0] == (2.0, forward(inst, m).probabilities[1])

    def test_five_steps_monotone(self):
        rng = np.random.default_rng(1)
        inst = random_instance(rng, 5, 5)
        times = [t for t, _ in predict_online(inst, small_model())]
        assert len(times) == 5 and times == sorted(times)


class TestExport:
    def dataset(self):
        schema = Schema(specs=tuple(VariableSpec(f"v{k}") for k in range(5))
                        + tuple(VariableSpec(f"s{k}", static=True) for k in range(3)))
        rng = np.random.default_rng(0)
        a = random_instance(rng, 5, 3, 3, iid="a", label=0)
        b = random_instance(rng, 5, 4, 3, iid="b", label=1)
        return Dataset([a, b], schema)

    def read(self, path):
        with open(path) as fh:
            return list(csv.reader(fh))

    def test_global(self, tmp_path):
        m = small_model()
        assert export_embeddings(self.dataset(), m, tmp_path / "g.csv", "global") == 2
        rows = self.read(tmp_path / "g.csv")
        assert len(rows) == 3 and len(rows[0]) == m.config.hidden + 3
        ds = self.dataset()
        np.testing.assert_allclose([float(v) for v in rows[2][3:]], forward(ds[1], m).hidden[-1], rtol=1e-12)

    def test_local(self, tmp_path):
        m = small_model()
        assert export_embeddings(self.dataset(), m, tmp_path / "l.csv", "local") == 7
        rows = self.read(tmp_path / "l.csv")
        assert rows[0][:4] == ["instance_id", "time", "label", "dim_0"]
        assert all(len(r) == m.config.agg_dim + 3 for r in rows)


def test_checkpoint_round_trip_bitwise(tmp_path):
    m = small_model(softmax=True, seed=5)
    m.save(tmp_path / "m.json")
    back = TdeModel.from_checkpoint(nn.load_checkpoint(tmp_path / "m.json"))
    assert back.config == m.config
    assert list(back.params) == list(m.params)
    for k in m.params:
        assert back.params[k].data.tobytes() == m.params[k].data.tobytes()


@pytest.mark.parametrize("mode,softmax", [("mean", False), ("attention", False), ("attention", True)])
def test_full_loss_gradient(mode, softmax):
    from tde.autodiff import grad_check
    from tde.training import nll_loss

    m = small_model(mode, softmax, seed=2, time_dim=3)
    assert "W_t" in m.params and "W_s" in m.params
    rng = np.random.default_rng(11)
    insts = [random_instance(rng, 5, 3, 3, iid=str(k), label=k % 2) for k in range(3)]
    batch = pack(insts)
    err = grad_check(lambda: nll_loss(m.predict_batch(batch), batch.labels), m.parameters())
    assert err < 1e-4
