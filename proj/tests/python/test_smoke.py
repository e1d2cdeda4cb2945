"""Smoke tests for the python bindings; the C++ suites carry the real load."""

import math

import pytest

import sahp


@pytest.fixture(scope="module")
def dataset():
    spec = sahp.benchmark_two_type_spec()
    data = sahp.Dataset()
    data.num_types = 2
    seqs = []
    seed = 0
    while len(seqs) < 24:
        seq = sahp.simulate_thinning(spec, 12.0, seed)
        seed += 1
        if len(seq) >= 2:
            seqs.append(seq)
    data.sequences = seqs
    return sahp.split_dataset(data, 0.7, 0.15, 0.15, seed=3)


def test_simulation_is_deterministic():
    spec = sahp.benchmark_two_type_spec()
    a = sahp.simulate_thinning(spec, 10.0, 7)
    b = sahp.simulate_thinning(spec, 10.0, 7)
    assert [e.time for e in a.events] == [e.time for e in b.events]
    assert all(0.0 < e.time <= 10.0 for e in a.events)


def test_dataset_roundtrip(tmp_path, dataset):
    path = tmp_path / "data.jsonl"
    sahp.save_dataset(dataset, path)
    back = sahp.load_dataset(path)
    assert back.num_types == dataset.num_types
    assert len(back.sequences) == len(dataset.sequences)
    assert back.split_names() == dataset.split_names()
    stats = sahp.dataset_stats(back)
    assert stats["num_sequences"] == len(dataset.sequences)


def test_validation_reports_violations():
    seq = sahp.Sequence([sahp.Event(0, 1.0), sahp.Event(0, 0.5)], 2.0)
    messages = [msg for _, msg in sahp.validate_sequence(seq, 1)]
    assert any("not strictly increasing" in msg for msg in messages)


def test_hp_fit_and_likelihood(dataset):
    fit = sahp.hp_fit(dataset, max_iterations=200)
    params = fit["params"]
    assert all(mu > 0 for mu in params.base)
    seq = dataset.sequences[0]
    ll = sahp.hp_loglik(params, seq)
    assert math.isfinite(ll)
    nll, counted = sahp.hp_windowed_nll(params, seq)
    assert counted == len(seq) - 1


def test_model_train_predict_evaluate(tmp_path, dataset):
    config = sahp.SAHPConfig()
    config.num_types = 2
    config.model_dim = 8
    config.num_heads = 2
    config.num_layers = 1
    config.dropout_rate = 0.0
    config.time_rescale = 0.5

    model = sahp.Model(config, seed=1)
    tc = sahp.TrainConfig()
    tc.learning_rate = 2e-3
    tc.warmup_steps = 4
    tc.batch_size = 8
    tc.max_epochs = 2
    tc.mc_samples = 3
    tc.seed = 5
    result = sahp.train(model, dataset, tc)
    trained = result["model"]
    assert len(result["history"]) == 3  # epoch 0 plus two epochs

    path = tmp_path / "ckpt.json"
    trained.save(path)
    back = sahp.Model.load(path)
    prefix = dataset.sequences[0].events[:2]
    pred_a = trained.predict_next(prefix)
    pred_b = back.predict_next(prefix)
    assert pred_a["predicted_time"] == pred_b["predicted_time"]
    assert pred_a["predicted_time"] > prefix[-1].time
    assert abs(sum(pred_a["type_scores"]) - 1.0) < 1e-9

    report = trained.evaluate(dataset, split="test", n_mc=3, seed=2,
                              truth=sahp.benchmark_two_type_spec())
    assert 0.0 <= report["macro_f1"] <= 1.0
    assert len(report["qq_pairs"]) == 2
    for row in report["attention_map"]:
        assert abs(sum(row) - 1.0) < 1e-9


def test_qq_data_diagonal():
    values = [0.1, 0.5, 1.0, 2.0, 5.0]
    pairs = sahp.qq_data(values, values, [10.0, 50.0, 90.0])
    for q_true, q_est in pairs:
        assert q_true == pytest.approx(q_est)
