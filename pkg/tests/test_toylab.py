import dataclasses
import json

import numpy as np
import pytest

from interplab import tensor_store as ts
from interplab.grid import GridSpec
from interplab.tensor_store import ParameterSet
from interplab.toylab import (
    AdamState,
    ToyDataset,
    ToyTaskConfig,
    adam_step,
    backward,
    compute_loss,
    encoder_variant_config,
    evaluate_accuracy,
    finetune,
    forward,
    generate_task,
    init_adam_state,
    init_decoder_weights,
    init_weights,
    orthonormal_cols,
    pretrain_autoencoder,
    run_transfer_experiment,
    stream,
)

REDUCED = ToyTaskConfig(n_unlabeled=600, n_train=400, n_dev=200,
                        pretrain_epochs=4, finetune_epochs=4)


@pytest.fixture(scope="module")
def pipeline():
    """One reduced-size pretrain + three fine-tunes, shared across tests."""
    data = generate_task(REDUCED)
    init = init_weights(REDUCED)
    mixture = np.concatenate([data["src"]["unlabeled"].inputs,
                              data["tgt"]["unlabeled"].inputs])
    pre = pretrain_autoencoder(init, mixture, REDUCED)
    theta_src = finetune(pre, [data["src"]["train"]], REDUCED, "src")
    theta_tgt = finetune(pre, [data["tgt"]["train"]], REDUCED, "tgt")
    theta_bi = finetune(pre, [data["src"]["train"], data["tgt"]["train"]],
                        REDUCED, "bilingual")
    return data, init, pre, theta_src, theta_tgt, theta_bi


def tiny_weights(rng, d_in=4, h=3, k=3, decoder=False):
    w = {
        "encoder.w1": rng.normal(size=(d_in, h)) * 0.5,
        "encoder.b1": rng.normal(size=h) * 0.1,
        "encoder.w2": rng.normal(size=(h, h)) * 0.5,
        "encoder.b2": rng.normal(size=h) * 0.1,
    }
    if decoder:
        w["decoder.w"] = rng.normal(size=(h, d_in)) * 0.5
        w["decoder.b"] = rng.normal(size=d_in) * 0.1
    else:
        w["head.w"] = rng.normal(size=(h, k)) * 0.5
        w["head.b"] = rng.normal(size=k) * 0.1
    return w


def numeric_grads(weights, inputs, targets, objective, h=1e-5):
    # plain float64 dicts avoid quantizing the perturbation to float32
    out = {}
    for name, arr in weights.items():
        flat = arr.ravel()
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = compute_loss(weights, inputs, targets, objective)
            flat[i] = orig - h
            lm = compute_loss(weights, inputs, targets, objective)
            flat[i] = orig
            g[i] = (lp - lm) / (2.0 * h)
        out[name] = g.reshape(arr.shape)
    return out


def max_rel_err(analytic, numeric):
    worst = 0.0
    for name, fd in numeric.items():
        an = analytic[name].astype(np.float64)
        denom = np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)
        worst = max(worst, float(np.max(np.abs(an - fd) / denom)))
    return worst


class TestConfig:
    def test_defaults_valid(self):
        cfg = ToyTaskConfig()
        assert cfg.n_classes == 5 and cfg.obs_dim == 32

    @pytest.mark.parametrize("field,value", [
        ("n_classes", 1), ("latent_dim", 0), ("latent_dim", 64),
        ("shift_gamma", -0.1), ("noise_sigma", 0.0), ("n_train", 0),
        ("pretrain_epochs", -1), ("learning_rate", 0.0), ("batch_size", 0),
    ])
    def test_invalid_values(self, field, value):
        with pytest.raises(ValueError):
            dataclasses.replace(ToyTaskConfig(), **{field: value})

    def test_dict_roundtrip(self):
        cfg = ToyTaskConfig(hidden_dim=16, seed=9)
        assert ToyTaskConfig.from_dict(cfg.to_dict()) == cfg

    def test_from_dict_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            ToyTaskConfig.from_dict({"widht": 3})

    def test_from_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"hidden_dim": 16, "seed": 3}))
        cfg = ToyTaskConfig.from_file(p)
        assert cfg.hidden_dim == 16 and cfg.seed == 3

    def test_variants(self):
        cfg = ToyTaskConfig()
        assert encoder_variant_config(cfg, "small").hidden_dim == 16
        assert encoder_variant_config(cfg, "large").hidden_dim == 64
        with pytest.raises(ValueError):
            encoder_variant_config(cfg, "huge")


class TestStreams:
    def test_reproducible(self):
        a = stream(0, "data").standard_normal(8)
        b = stream(0, "data").standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_purposes_independent(self):
        a = stream(0, "data").standard_normal(8)
        b = stream(0, "init").standard_normal(8)
        assert not np.array_equal(a, b)

    def test_seeds_independent(self):
        a = stream(0, "data").standard_normal(8)
        b = stream(1, "data").standard_normal(8)
        assert not np.array_equal(a, b)


class TestDataGeneration:
    def test_orthonormal_columns(self):
        rng = np.random.default_rng(30)
        for _ in range(5):
            q = orthonormal_cols(rng.normal(size=(8, 3)))
            np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)

    def test_orthonormal_sign_convention_idempotent(self):
        rng = np.random.default_rng(31)
        q = orthonormal_cols(rng.normal(size=(6, 4)))
        np.testing.assert_allclose(orthonormal_cols(q), q, atol=1e-10)

    def test_shapes_and_splits(self):
        cfg = dataclasses.replace(REDUCED, n_unlabeled=50, n_train=30, n_dev=20)
        data = generate_task(cfg)
        for domain in ("src", "tgt"):
            assert data[domain]["unlabeled"].inputs.shape == (50, cfg.obs_dim)
            assert data[domain]["train"].inputs.shape == (30, cfg.obs_dim)
            assert len(data[domain]["dev"]) == 20
            assert data[domain]["dev"].domain == domain

    def test_deterministic(self):
        cfg = dataclasses.replace(REDUCED, n_unlabeled=10, n_train=10, n_dev=10)
        a, b = generate_task(cfg), generate_task(cfg)
        for domain in ("src", "tgt"):
            for split in ("unlabeled", "train", "dev"):
                assert a[domain][split].inputs.tobytes() == b[domain][split].inputs.tobytes()
                assert a[domain][split].labels.tobytes() == b[domain][split].labels.tobytes()

    def test_domains_share_labels(self):
        cfg = dataclasses.replace(REDUCED, n_unlabeled=10, n_train=25, n_dev=10)
        data = generate_task(cfg)
        np.testing.assert_array_equal(data["src"]["train"].labels,
                                      data["tgt"]["train"].labels)

    def test_balanced_labels_with_remainder(self):
        cfg = dataclasses.replace(REDUCED, n_unlabeled=5, n_train=7, n_dev=5)
        data = generate_task(cfg)
        counts = np.bincount(data["src"]["train"].labels, minlength=5)
        assert sorted(counts.tolist()) == [1, 1, 1, 2, 2]

    def test_zero_gamma_collapses_domains(self):
        cfg = dataclasses.replace(REDUCED, shift_gamma=0.0,
                                  n_unlabeled=10, n_train=10, n_dev=10)
        data = generate_task(cfg)
        for split in ("unlabeled", "train", "dev"):
            assert data["src"][split].inputs.tobytes() == data["tgt"][split].inputs.tobytes()

    def test_positive_gamma_separates_domains(self):
        cfg = dataclasses.replace(REDUCED, n_unlabeled=10, n_train=10, n_dev=10)
        data = generate_task(cfg)
        assert data["src"]["train"].inputs.tobytes() != data["tgt"]["train"].inputs.tobytes()

    def test_zero_gamma_model_sees_no_gap(self):
        cfg = dataclasses.replace(REDUCED, shift_gamma=0.0,
                                  n_unlabeled=10, n_train=10, n_dev=50)
        data = generate_task(cfg)
        theta = init_weights(cfg)
        acc_src = evaluate_accuracy(theta, data["src"]["dev"])
        acc_tgt = evaluate_accuracy(theta, data["tgt"]["dev"])
        assert acc_src == acc_tgt  # identical inputs, identical predictions


class TestInitialization:
    def test_shapes_and_meta(self):
        cfg = ToyTaskConfig(seed=4)
        w = init_weights(cfg)
        assert w["encoder.w1"].shape == (32, 32)
        assert w["head.w"].shape == (32, 5)
        assert np.all(w["encoder.b1"] == 0.0) and np.all(w["head.b"] == 0.0)
        assert w.meta == {"role": "init", "seed": "4", "arch": "mlp-D32-h32-K5"}

    def test_deterministic_per_seed(self):
        assert init_weights(ToyTaskConfig()).same_tensors(init_weights(ToyTaskConfig()))
        assert not init_weights(ToyTaskConfig()).same_tensors(init_weights(ToyTaskConfig(seed=1)))

    def test_decoder_shapes(self):
        dec = init_decoder_weights(ToyTaskConfig())
        assert dec["decoder.w"].shape == (32, 32)
        assert np.all(dec["decoder.b"] == 0.0)


class TestForward:
    def test_zero_weights_give_uniform_probs(self):
        zeros = ParameterSet({
            "encoder.w1": np.zeros((4, 3)), "encoder.b1": np.zeros(3),
            "encoder.w2": np.zeros((3, 3)), "encoder.b2": np.zeros(3),
            "head.w": np.zeros((3, 5)), "head.b": np.zeros(5),
        })
        probs, cache = forward(zeros, np.ones((6, 4)))
        assert cache["mode"] == "classification"
        assert np.all(probs == 0.2)

    def test_rows_stochastic(self):
        rng = np.random.default_rng(32)
        for _ in range(10):
            w = ParameterSet(tiny_weights(rng))
            probs, _ = forward(w, rng.normal(size=(7, 4)))
            assert np.all(probs > 0)
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_single_input_matches_batch(self):
        rng = np.random.default_rng(33)
        w = ParameterSet(tiny_weights(rng))
        x = rng.normal(size=(5, 4))
        batch, _ = forward(w, x)
        single, _ = forward(w, x[2])
        assert single.shape == (3,)
        np.testing.assert_allclose(single, batch[2], atol=1e-12)

    def test_reconstruction_mode(self):
        rng = np.random.default_rng(34)
        w = ParameterSet(tiny_weights(rng, decoder=True))
        out, cache = forward(w, rng.normal(size=(5, 4)))
        assert cache["mode"] == "reconstruction"
        assert out.shape == (5, 4)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(35)
        w = ParameterSet(tiny_weights(rng))
        with pytest.raises(ValueError, match="dim"):
            forward(w, np.ones((2, 9)))

    def test_headless_weights_rejected(self):
        w = ParameterSet({"encoder.w1": np.zeros((4, 3)), "encoder.b1": np.zeros(3),
                          "encoder.w2": np.zeros((3, 3)), "encoder.b2": np.zeros(3)})
        with pytest.raises(ValueError):
            forward(w, np.ones((1, 4)))


class TestLosses:
    def test_uniform_cross_entropy_is_log_k(self):
        zeros = ParameterSet({
            "encoder.w1": np.zeros((4, 3)), "encoder.b1": np.zeros(3),
            "encoder.w2": np.zeros((3, 3)), "encoder.b2": np.zeros(3),
            "head.w": np.zeros((3, 5)), "head.b": np.zeros(5),
        })
        loss = compute_loss(zeros, np.ones((6, 4)), np.zeros(6, dtype=np.int64),
                            "cross_entropy")
        assert loss == pytest.approx(np.log(5.0), rel=1e-12)

    def test_perfect_reconstruction_is_zero(self):
        w = {k: np.zeros_like(v) for k, v in
             tiny_weights(np.random.default_rng(36), decoder=True).items()}
        x = np.zeros((4, 4))
        assert compute_loss(w, x, x, "mse_reconstruction") == 0.0

    def test_objective_vocabulary(self):
        rng = np.random.default_rng(37)
        w = ParameterSet(tiny_weights(rng))
        with pytest.raises(ValueError):
            compute_loss(w, np.ones((1, 4)), [0], "hinge")

    def test_objective_mode_mismatch(self):
        rng = np.random.default_rng(38)
        w = ParameterSet(tiny_weights(rng))
        with pytest.raises(ValueError):
            compute_loss(w, np.ones((1, 4)), np.ones((1, 4)), "mse_reconstruction")


class TestGradients:
    def test_cross_entropy_matches_finite_differences(self):
        rng = np.random.default_rng(40)
        for _ in range(3):
            w = tiny_weights(rng)
            x = rng.normal(size=(6, 4))
            y = rng.integers(0, 3, size=6)
            analytic = backward(w, x, y, "cross_entropy")
            numeric = numeric_grads(w, x, y, "cross_entropy")
            assert max_rel_err(analytic, numeric) < 1e-4

    def test_reconstruction_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        for _ in range(3):
            w = tiny_weights(rng, decoder=True)
            x = rng.normal(size=(6, 4))
            t = rng.normal(size=(6, 4))
            analytic = backward(w, x, t, "mse_reconstruction")
            numeric = numeric_grads(w, x, t, "mse_reconstruction")
            assert max_rel_err(analytic, numeric) < 1e-4

    def test_zero_residual_means_zero_gradient(self):
        w = {k: np.zeros_like(v) for k, v in
             tiny_weights(np.random.default_rng(42), decoder=True).items()}
        x = np.zeros((4, 4))
        g = backward(w, x, x, "mse_reconstruction")
        assert all(np.all(g[n] == 0.0) for n in g.names())

    def test_duplicated_batch_invariance(self):
        rng = np.random.default_rng(43)
        w = tiny_weights(rng)
        x = rng.normal(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        once = backward(w, x, y, "cross_entropy")
        twice = backward(w, np.concatenate([x, x]), np.concatenate([y, y]),
                         "cross_entropy")
        for n in once.names():
            np.testing.assert_allclose(once[n], twice[n], atol=1e-7)


class TestAdam:
    def test_single_step_hand_values(self):
        w = ParameterSet({"w": [0.0]})
        g = ParameterSet({"w": [1.0]})
        out, state = adam_step(w, g, init_adam_state(w), t=1, learning_rate=1e-3)
        assert out["w"][0] == np.float32(-0.0009999999900000003)
        assert state.m["w"][0] == 0.09999999999999998
        assert state.v["w"][0] == 0.0010000000000000009

    def test_zero_gradient_is_noop(self):
        rng = np.random.default_rng(44)
        w = ParameterSet({"a": rng.normal(size=(3, 3))})
        g = ParameterSet({"a": np.zeros((3, 3))})
        out, _ = adam_step(w, g, init_adam_state(w), t=1, learning_rate=1e-3)
        assert out.same_tensors(w)

    def test_identical_coordinates_move_identically(self):
        w = ParameterSet({"a": [1.0, 1.0]})
        g = ParameterSet({"a": [0.5, 0.5]})
        out, _ = adam_step(w, g, init_adam_state(w), t=1, learning_rate=1e-2)
        assert out["a"][0] == out["a"][1]

    def test_step_index_validation(self):
        w = ParameterSet({"a": [1.0]})
        with pytest.raises(ValueError):
            adam_step(w, w, init_adam_state(w), t=0, learning_rate=1e-3)

    def test_moments_stay_float64(self):
        w = ParameterSet({"a": [1.0]})
        g = ParameterSet({"a": [1.0]})
        _, state = adam_step(w, g, init_adam_state(w), t=1, learning_rate=1e-3)
        assert state.m["a"].dtype == np.float64
        assert state.v["a"].dtype == np.float64

    def test_meta_carried_through(self):
        w = ParameterSet({"a": [1.0]}, {"role": "init"})
        g = ParameterSet({"a": [1.0]})
        out, _ = adam_step(w, g, init_adam_state(w), t=1, learning_rate=1e-3)
        assert out.meta == {"role": "init"}

    def test_descends_a_quadratic(self):
        # minimize mean((w - 3)^2) coordinate-wise for a few hundred steps
        w = ParameterSet({"a": [0.0]})
        state = init_adam_state(w)
        for t in range(1, 400):
            g = ParameterSet({"a": [2.0 * (float(w["a"][0]) - 3.0)]})
            w, state = adam_step(w, g, state, t=t, learning_rate=0.05)
        assert abs(float(w["a"][0]) - 3.0) < 0.05


class TestPretraining:
    def test_zero_epochs_identity(self):
        cfg = dataclasses.replace(REDUCED, pretrain_epochs=0)
        init = init_weights(cfg)
        out = pretrain_autoencoder(init, np.zeros((8, cfg.obs_dim)), cfg)
        assert out.same_tensors(init)
        assert out.meta["role"] == "pretrained"

    def test_reduces_reconstruction_error(self, pipeline):
        _, _, pre, _, _, _ = pipeline
        assert float(pre.meta["pretrain_mse_final"]) < float(pre.meta["pretrain_mse_initial"])

    def test_changes_encoder_keeps_head(self, pipeline):
        _, init, pre, _, _, _ = pipeline
        assert pre["encoder.w1"].tobytes() != init["encoder.w1"].tobytes()
        assert pre["head.w"].tobytes() == init["head.w"].tobytes()
        assert pre.names() == init.names()  # decoder never leaks out

    def test_deterministic(self):
        cfg = dataclasses.replace(REDUCED, n_unlabeled=40, pretrain_epochs=2)
        data = generate_task(cfg)
        init = init_weights(cfg)
        a = pretrain_autoencoder(init, data["src"]["unlabeled"].inputs, cfg)
        b = pretrain_autoencoder(init, data["src"]["unlabeled"].inputs, cfg)
        assert ts.dumps(a) == ts.dumps(b)

    def test_empty_inputs_rejected(self):
        cfg = REDUCED
        with pytest.raises(ValueError):
            pretrain_autoencoder(init_weights(cfg), np.zeros((0, cfg.obs_dim)), cfg)


class TestFinetuning:
    def test_zero_epochs_identity(self, pipeline):
        data, _, pre, _, _, _ = pipeline
        cfg = dataclasses.replace(REDUCED, finetune_epochs=0)
        out = finetune(pre, [data["src"]["train"]], cfg, "src")
        assert out.same_tensors(pre)
        assert out.meta["role"] == "src"

    def test_learns_source_task(self, pipeline):
        data, _, _, theta_src, _, _ = pipeline
        acc = evaluate_accuracy(theta_src, data["src"]["dev"])
        assert acc > 0.4  # chance is 0.2 for five classes

    def test_bilingual_beats_source_only_on_target(self, pipeline):
        data, _, _, theta_src, _, theta_bi = pipeline
        acc_src_model = evaluate_accuracy(theta_src, data["tgt"]["dev"])
        acc_bi_model = evaluate_accuracy(theta_bi, data["tgt"]["dev"])
        assert acc_bi_model > acc_src_model + 0.1

    def test_role_vocabulary(self, pipeline):
        data, _, pre, _, _, _ = pipeline
        with pytest.raises(ValueError):
            finetune(pre, [data["src"]["train"]], REDUCED, "multi")

    def test_empty_training_data_rejected(self, pipeline):
        _, _, pre, _, _, _ = pipeline
        with pytest.raises(ValueError):
            finetune(pre, [], REDUCED, "src")

    def test_roles_produce_distinct_models(self, pipeline):
        _, _, _, theta_src, theta_tgt, theta_bi = pipeline
        assert not theta_src.same_tensors(theta_tgt)
        assert not theta_src.same_tensors(theta_bi)

    def test_deterministic(self, pipeline):
        data, _, pre, theta_src, _, _ = pipeline
        again = finetune(pre, [data["src"]["train"]], REDUCED, "src")
        assert ts.dumps(again) == ts.dumps(theta_src)


class TestEvaluation:
    def test_uniform_model_scores_chance_on_balanced_dev(self, pipeline):
        data, _, _, _, _, _ = pipeline
        zeros = ParameterSet({n: np.zeros_like(init_weights(REDUCED)[n])
                              for n in init_weights(REDUCED).names()})
        acc = evaluate_accuracy(zeros, data["src"]["dev"])
        assert acc == pytest.approx(0.2)  # argmax ties resolve to class 0

    def test_self_consistent_labels_score_one(self, pipeline):
        data, _, _, theta_src, _, _ = pipeline
        dev = data["src"]["dev"]
        probs, _ = forward(theta_src, dev.inputs)
        relabeled = ToyDataset(inputs=dev.inputs, labels=np.argmax(probs, axis=1),
                               domain="src", split="dev")
        assert evaluate_accuracy(theta_src, relabeled) == 1.0

    def test_empty_dev_rejected(self, pipeline):
        _, _, _, theta_src, _, _ = pipeline
        empty = ToyDataset(inputs=np.zeros((0, REDUCED.obs_dim)),
                           labels=np.zeros(0, dtype=np.int64),
                           domain="src", split="dev")
        with pytest.raises(ValueError):
            evaluate_accuracy(theta_src, empty)


class TestExperiment:
    def test_full_protocol_small(self, tmp_path):
        cfg = ToyTaskConfig(n_unlabeled=200, n_train=100, n_dev=80,
                            pretrain_epochs=1, finetune_epochs=1)
        grid1 = GridSpec(kind="one_d", lo=0.0, hi=1.0, base_step=0.5, extra_points=())
        grid2 = GridSpec(kind="two_d", lo=0.0, hi=1.0, base_step=0.5)
        messages = []
        result = run_transfer_experiment(cfg, n_seeds=2, out_dir=tmp_path,
                                         grid_1d=grid1, grid_2d=grid2,
                                         progress=messages.append)
        assert result.seeds == [0, 1]
        assert messages

        # 3 alphas x 2 sides x 2 paths + 9 cells x 2 sides, per seed
        one_d = [r for r in result.records if r.kind == "one_d"]
        two_d = [r for r in result.records if r.kind == "two_d"]
        assert len(one_d) == 2 * 12 and len(two_d) == 2 * 18
        assert all(r.normalized is not None for r in result.records)
        assert {r.pair for r in one_d} == {("src", "tgt"), ("tgt", "src")}
        assert {r.pair for r in two_d} == {("src", "tgt")}

        # bilingual references normalize to exactly 1.0
        for r in one_d:
            if r.alpha1 == 1.0:
                assert r.normalized == 1.0
        for r in two_d:
            if r.alpha1 == 0.0 and r.alpha2 == 0.0:
                assert r.normalized == 1.0

        assert set(result.aggregates) == {"one_d:per_pair", "one_d:pooled", "two_d:pooled"}
        per_pair = result.aggregates["one_d:per_pair"]
        assert {a.group for a in per_pair} == {"pair=src-tgt", "pair=tgt-src"}

        for seed in (0, 1):
            for role in ("src", "tgt", "bi"):
                path = tmp_path / f"seed-{seed}" / f"{role}.lscp"
                assert path.exists()
        loaded = ts.load_checkpoint(tmp_path / "seed-1" / "src.lscp")
        assert loaded == result.checkpoints[1]["src"]

    def test_seed_count_validation(self):
        with pytest.raises(ValueError):
            run_transfer_experiment(ToyTaskConfig(), n_seeds=0)
