import numpy as np
import pytest

from derrt import env as E
from derrt import hmm
from derrt.neural import ArchConfig, RecurrentSteeringModel
from derrt.training import (
    CollectConfig,
    EmptyDatasetError,
    OptimConfig,
    TraceDataset,
    collect_traces,
    dataset_from_lines,
    dataset_to_lines,
    load_model,
    save_model,
    trace_from_path,
    train_hmm,
    train_recurrent,
)


@pytest.fixture(scope="module")
def passage_ds():
    return collect_traces(CollectConfig(kind="passage", n_envs=6, budget=2500, seed=3, step_radius=20.0), target=6)


@pytest.fixture(scope="module")
def bugtrap_ds():
    return collect_traces(CollectConfig(kind="bugtrap", n_envs=3, budget=3000, seed=1, step_radius=5.0), target=2)


def test_trace_from_path_records_each_edge():
    env = E.gen_narrow_passage(0)
    path = np.array([env.start, env.start + [3.0, 0.0], env.start + [3.0, 4.0]])
    tr = trace_from_path(env, path, np.random.default_rng(0), 10.0)
    assert len(tr) == 2
    np.testing.assert_array_equal(tr.x_prev, path[:-1])
    np.testing.assert_array_equal(tr.x_next, path[1:])
    assert np.all(np.linalg.norm(tr.mu - tr.x_prev, axis=1) <= 10.0 + 1e-9)
    np.testing.assert_allclose(tr.obs, E.passage_features_batch(env, path[:-1]))
    np.testing.assert_allclose(tr.hmm_features()[:, 2:], E.passage_features_batch(env, path[1:]))
    single = trace_from_path(env, path[:2], np.random.default_rng(0), 10.0)
    assert len(single) == 1


def test_harvested_steps_are_collision_free(passage_ds):
    assert len(passage_ds) == 6
    for tr, seed in zip(passage_ds.traces, passage_ds.manifest["env_seeds"]):
        env = E.gen_narrow_passage(seed, 300, 300)
        assert env.start.tolist() == tr.x_prev[0].tolist()
        assert env.in_goal(tr.x_next[-1])
        for step in tr.steps():
            assert E.segment_free(env, step.x_prev, step.x_next)
            assert np.linalg.norm(step.x_next - step.x_prev) <= 20.0 + 1e-9


def test_collection_is_deterministic(passage_ds):
    again = collect_traces(CollectConfig(kind="passage", n_envs=6, budget=2500, seed=3, step_radius=20.0), target=6)
    assert list(dataset_to_lines(again)) == list(dataset_to_lines(passage_ds))


@pytest.mark.parametrize("name", ["passage_ds", "bugtrap_ds"])
def test_jsonl_roundtrip(name, request):
    ds = request.getfixturevalue(name)
    back = dataset_from_lines(list(dataset_to_lines(ds)))
    assert back.kind == ds.kind and len(back) == len(ds)
    for a, b in zip(ds.traces, back.traces):
        for field in ("x_prev", "x_next", "mu", "obs", "next_obs", "t"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    with pytest.raises(ValueError):
        dataset_from_lines(['{"format": "something-else"}'])


def test_empty_collection_and_training_raise():
    with pytest.raises(EmptyDatasetError):
        collect_traces(CollectConfig(kind="bugtrap", n_envs=2, budget=1))
    with pytest.raises(EmptyDatasetError):
        train_hmm(TraceDataset("passage", []))


def test_single_state_hmm_is_the_feature_mean(passage_ds):
    m = train_hmm(passage_ds, n_states=1)
    X = np.concatenate([tr.hmm_features() for tr in passage_ds.traces if len(tr) >= 2])
    np.testing.assert_allclose(m.means[0], X.mean(axis=0), rtol=1e-9, atol=1e-9)


def test_trained_hmm_beats_random_on_held_out_traces(passage_ds):
    train = TraceDataset("passage", passage_ds.traces[:4])
    m = train_hmm(train, n_states=2, seed=0)
    rand = hmm.random_model(np.random.default_rng(0), 2, m.n_features)
    for tr in passage_ds.traces[4:]:
        f = tr.hmm_features()
        assert hmm.sequence_loglik(m, f) > hmm.sequence_loglik(rand, f)


def test_hmm_training_is_deterministic(passage_ds):
    a, b = train_hmm(passage_ds, 2, seed=4), train_hmm(passage_ds, 2, seed=4)
    np.testing.assert_array_equal(a.log_A, b.log_A)
    assert a.train_loglik == b.train_loglik


def test_recurrent_training_lowers_loss(passage_ds):
    arch = ArchConfig.for_env("passage", 20.0)
    model, log = train_recurrent(passage_ds, arch, OptimConfig(epochs=3), seed=0)
    assert log.gradient_check_error < 1e-4
    assert log.epoch_loss[-1] < log.initial_loss
    assert np.isfinite(log.epoch_loss).all()


def test_conv_training_gate_passes(bugtrap_ds):
    arch = ArchConfig.for_env("bugtrap", 5.0)
    _, log = train_recurrent(bugtrap_ds, arch, OptimConfig(epochs=1), seed=1)
    assert log.gradient_check_error < 1e-4


def test_model_files_roundtrip(tmp_path, passage_ds):
    h = train_hmm(passage_ds, 2)
    save_model(h, tmp_path / "h.prm")
    back = load_model(tmp_path / "h.prm")
    np.testing.assert_array_equal(back.means, h.means)
    g = RecurrentSteeringModel(ArchConfig.for_env("passage", 20.0), seed=4)
    save_model(g, tmp_path / "g.prm")
    assert isinstance(load_model(tmp_path / "g.prm"), RecurrentSteeringModel)
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "missing.prm")
