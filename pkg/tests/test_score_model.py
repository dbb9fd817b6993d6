import numpy as np
import pytest
from toy import gaussian_corpus, score_relative_l2

from guidedsynth.data import DEFAULT_INVENTORY, build_phone_dictionary, generate_corpus
from guidedsynth.errors import CheckpointError, DomainError, NumericError, ShapeError
from guidedsynth.nn import MLP, gradient_check
from guidedsynth.schedule import NoiseSchedule, forward_sample, moments_at
from guidedsynth.score_model import (
    SPEAKER_DIM,
    ScoreNet,
    ScoreTrainConfig,
    TrainBatch,
    dsm_loss,
    dsm_objective,
    dsm_target,
    load_score_net,
    make_batch,
    save_score_net,
    score_forward,
    smooth,
    speaker_onehot,
    time_embedding,
    train_score,
)

SCHED = NoiseSchedule()


def _batch(rng, n=16, dim=3, t_low=1e-3):
    return TrainBatch(
        rng.standard_normal((n, dim)), rng.standard_normal((n, dim)), rng.integers(0, 4, n),
        rng.uniform(t_low, 1.0, n), rng.standard_normal((n, dim)),
    )


def test_input_layout():
    net = ScoreNet.create(3, SCHED, hidden=(5,))
    assert net.mlp.sizes[0] == 2 * 3 + 4 + SPEAKER_DIM
    assert net.mlp.sizes[-1] == 3
    emb = time_embedding(SCHED, 0.25, 2)
    np.testing.assert_allclose(emb[0], [0.25, 1.0, np.cos(np.pi / 2), np.sqrt(moments_at(SCHED, 0.25).sigma2)],
                               atol=1e-15)
    oh = speaker_onehot(np.array([0, 15]), 2)
    assert oh.shape == (2, 16) and oh[0, 0] == 1 and oh[1, 15] == 1 and oh.sum() == 2
    with pytest.raises((ShapeError, DomainError)):
        speaker_onehot(np.array([16]), 1)


def test_zero_net_outputs_zero():
    net = ScoreNet.zeros(4, SCHED)
    rng = np.random.default_rng(0)
    out = score_forward(net, rng.standard_normal((7, 4)), 0.3, rng.standard_normal((7, 4)), 2)
    np.testing.assert_array_equal(out, 0.0)


def test_non_finite_input_is_rejected():
    net = ScoreNet.create(2, SCHED, hidden=(4,))
    x = np.array([[0.0, np.nan]])
    with pytest.raises(NumericError):
        score_forward(net, x, 0.5, np.zeros((1, 2)), 0)


def test_shape_mismatch_is_rejected():
    net = ScoreNet.create(2, SCHED, hidden=(4,))
    with pytest.raises(ShapeError):
        score_forward(net, np.zeros((3, 2)), 0.5, np.zeros((2, 2)), 0)
    with pytest.raises(ShapeError):
        score_forward(net, np.zeros((3, 3)), 0.5, np.zeros((3, 3)), 0)


def test_row_permutation_equivariance():
    rng = np.random.default_rng(1)
    net = ScoreNet.create(3, SCHED, hidden=(8, 8), seed=4, dtype=np.float64)
    x, mu = rng.standard_normal((9, 3)), rng.standard_normal((9, 3))
    perm = rng.permutation(9)
    out = score_forward(net, x, 0.4, mu, 1)
    np.testing.assert_array_equal(score_forward(net, x[perm], 0.4, mu[perm], 1), out[perm])


def test_frame_locality():
    rng = np.random.default_rng(2)
    net = ScoreNet.create(3, SCHED, hidden=(8, 8), seed=5, dtype=np.float64)
    x, mu = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    base = score_forward(net, x, 0.6, mu, 0)
    x2, mu2 = x.copy(), mu.copy()
    x2[4] += 10.0
    mu2[4] -= 3.0
    moved = score_forward(net, x2, 0.6, mu2, 0)
    np.testing.assert_array_equal(np.delete(moved, 4, axis=0), np.delete(base, 4, axis=0))
    assert not np.allclose(moved[4], base[4])


def test_exact_target_gives_zero_loss():
    batch = _batch(np.random.default_rng(3), n=128, dim=4)
    assert dsm_objective(dsm_target(batch, SCHED), batch, SCHED) < 1e-12


def test_zero_net_loss_is_mean_squared_noise():
    batch = _batch(np.random.default_rng(4), n=128, dim=4)
    loss, _ = dsm_loss(ScoreNet.zeros(4, SCHED, hidden=(6,), dtype=np.float64), batch, SCHED)
    assert abs(loss - np.mean(np.sum(batch.eps**2, axis=1))) < 1e-9


def test_loss_matches_weighted_definition():
    rng = np.random.default_rng(5)
    batch = _batch(rng, n=10, dim=2)
    net = ScoreNet.create(2, SCHED, hidden=(4,), seed=1, dtype=np.float64)
    loss, _ = dsm_loss(net, batch, SCHED)
    x_t = forward_sample(SCHED, batch.t, batch.x0, batch.mu, batch.eps)
    sigma2 = moments_at(SCHED, batch.t).sigma2
    ref = 0.0
    for i in range(10):
        s = score_forward(net, x_t[i : i + 1], batch.t[i], batch.mu[i : i + 1], batch.speakers[i])[0]
        ref += sigma2[i] * np.sum((s + batch.eps[i] / np.sqrt(sigma2[i])) ** 2)
    assert loss == pytest.approx(ref / 10, rel=1e-12)


def test_gradient_check_mini_net():
    # 1-dim frames and a 2-unit hidden layer: 2*1+4+16 = 22 inputs, 51 parameters
    rng = np.random.default_rng(6)
    net = ScoreNet.create(1, SCHED, hidden=(2,), seed=3, dtype=np.float64)
    assert net.mlp.n_params() == 22 * 2 + 2 + 2 * 1 + 1 == 49
    batch = _batch(rng, n=12, dim=1, t_low=0.05)
    _, grads = dsm_loss(net, batch, SCHED)
    rel, _ = gradient_check(lambda: dsm_loss(net, batch, SCHED, need_grads=False)[0], net.mlp.params, grads,
                            h=1e-4)
    assert rel < 1e-4


@pytest.mark.parametrize("hidden", [(6,), (5, 4), (4, 4, 3)])
def test_gradient_check_every_layer(hidden):
    rng = np.random.default_rng(7)
    net = ScoreNet.create(2, SCHED, hidden=hidden, seed=2, dtype=np.float64)
    batch = _batch(rng, n=8, dim=2, t_low=0.05)
    _, grads = dsm_loss(net, batch, SCHED)
    f = lambda: dsm_loss(net, batch, SCHED, need_grads=False)[0]  # noqa: E731
    for p, g in zip(net.mlp.params, grads):
        rel, _ = gradient_check(f, [p], [g])
        assert rel < 1e-4


def test_gradient_check_helper_on_quadratic():
    a = np.array([1.0, -2.0, 3.0])
    rel, err = gradient_check(lambda: float(np.sum(a**2)), [a], [2 * a])
    assert rel < 1e-9 and err < 1e-8
    rel, _ = gradient_check(lambda: float(np.sum(a**2)), [a], [3 * a])
    assert rel > 0.3


def test_make_batch_respects_t_min():
    rng = np.random.default_rng(8)
    b = make_batch(np.zeros((5000, 2)), np.zeros((5000, 2)), np.zeros(5000, int), rng, t_min=0.2)
    assert b.t.min() >= 0.2 and b.t.max() <= 1.0
    assert abs(b.t.mean() - 0.6) < 0.01
    assert abs(b.eps.std() - 1.0) < 0.02


def test_loss_rejects_sigma_below_floor():
    batch = _batch(np.random.default_rng(9), n=3, dim=2)
    batch.t[0] = 0.0
    with pytest.raises(DomainError):
        dsm_loss(ScoreNet.zeros(2, SCHED), batch, SCHED)


@pytest.fixture(scope="module")
def toy():
    return gaussian_corpus()


@pytest.fixture(scope="module")
def toy_run(toy):
    corpus, dictionary, _, _ = toy
    cfg = ScoreTrainConfig(steps=1500, batch_size=256, lr=0.05, hidden=(32, 32), seed=1)
    return train_score(None, corpus, dictionary, SCHED, cfg)


def test_training_halves_smoothed_loss(toy_run):
    _, losses = toy_run
    sm = smooth(losses, 50)
    assert sm[-1] < 0.5 * sm[0]
    # coarse monotonicity: block means of the smoothed curve never rise by more than noise
    blocks = sm[: sm.size // 100 * 100].reshape(-1, 100).mean(axis=1)
    assert np.all(np.diff(blocks) < 0.05 * blocks[0])


def test_short_training_approaches_analytic_score(toy, toy_run):
    _, dictionary, mean, var = toy
    net, _ = toy_run
    err = score_relative_l2(net, SCHED, dictionary["a"], mean, var)
    assert err < 0.3


def test_training_is_deterministic(toy):
    corpus, dictionary, _, _ = toy
    cfg = ScoreTrainConfig(steps=30, batch_size=32, hidden=(8,), seed=3)
    a, la = train_score(None, corpus, dictionary, SCHED, cfg)
    b, lb = train_score(None, corpus, dictionary, SCHED, cfg)
    np.testing.assert_array_equal(la, lb)
    for p, q in zip(a.mlp.params, b.mlp.params):
        np.testing.assert_array_equal(p, q)


def test_training_uses_every_speaker():
    corpus = generate_corpus(DEFAULT_INVENTORY, 2, 4, seed=1)
    net, _ = train_score(None, corpus, build_phone_dictionary(corpus), SCHED,
                         ScoreTrainConfig(steps=5, batch_size=2048, hidden=(4,)))
    # the speaker one-hot block of the first layer only moves for speakers that were seen
    w = net.mlp.weights[0]
    fresh = ScoreNet.create(corpus.dim, SCHED, hidden=(4,), seed=0).mlp.weights[0]
    start = 2 * corpus.dim + 4
    moved = np.abs(w[start : start + SPEAKER_DIM] - fresh[start : start + SPEAKER_DIM]).sum(axis=1) > 0
    np.testing.assert_array_equal(moved[:3], True)
    np.testing.assert_array_equal(moved[3:], False)


def test_divergence_aborts(toy):
    corpus, dictionary, _, _ = toy
    with pytest.raises(NumericError, match="diverged"):
        train_score(None, corpus, dictionary, SCHED,
                    ScoreTrainConfig(steps=200, lr=1e4, clip=None, momentum=0.9, hidden=(8,)))


def test_empty_corpus_is_rejected(toy):
    corpus = toy[0]
    with pytest.raises(DomainError):
        train_score(None, corpus.subset("target"), toy[1], SCHED, ScoreTrainConfig(steps=1))


def test_checkpoint_round_trip(tmp_path):
    net = ScoreNet.create(3, NoiseSchedule(0.1, 10.0), hidden=(5, 4), seed=9)
    save_score_net(net, tmp_path / "s.json", ScoreTrainConfig(steps=3), seed=9)
    back = load_score_net(tmp_path / "s.json")
    assert back.sched == net.sched and back.dim == 3
    for p, q in zip(net.mlp.params, back.mlp.params):
        np.testing.assert_array_equal(p, q)
        assert p.dtype == q.dtype


def test_corrupted_checkpoint_raises(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_score_net(path)
    net = ScoreNet.create(2, SCHED, hidden=(3,))
    save_score_net(net, path)
    text = path.read_text().replace('"score"', '"classifier"')
    path.write_text(text)
    with pytest.raises(CheckpointError):
        load_score_net(path)


def test_mlp_zero_output_init():
    mlp = MLP.init([3, 4, 2], np.random.default_rng(0), zero_output=True)
    np.testing.assert_array_equal(mlp.forward(np.ones((2, 3))), 0.0)
