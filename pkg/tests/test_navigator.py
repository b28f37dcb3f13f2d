import numpy as np
import pytest

from camadapt import diffcore as dc
from camadapt import navigator as nv
from camadapt.diffcore import Graph, ParamSet, ShapeError, Tensor
from camadapt.episodes import VOCABULARY
from camadapt.perception import init_encoders
from camadapt.world import Action, CameraConfig, cost_to_go

V = len(VOCABULARY)
sig = lambda x: 1 / (1 + np.exp(-x))


@pytest.fixture(scope="module", params=nv.KINDS)
def nav(request):
    return nv.init_navigator(request.param, 0, V)


def test_lstm_cell_matches_reference():
    rng = np.random.default_rng(0)
    x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    wx, wh, b = rng.normal(size=(3, 16)), rng.normal(size=(4, 16)), rng.normal(size=16)
    g = x @ wx + h @ wh + b
    i, f, gg, o = sig(g[:, :4]), sig(g[:, 4:8]), np.tanh(g[:, 8:12]), sig(g[:, 12:])
    c_ref = f * c + i * gg
    h_new, c_new = nv.lstm_cell(Tensor(x), Tensor(h), Tensor(c), Tensor(wx), Tensor(wh), Tensor(b))
    np.testing.assert_allclose(c_new.data, c_ref, atol=1e-14)
    np.testing.assert_allclose(h_new.data, o * np.tanh(c_ref), atol=1e-14)


def test_gru_cell_matches_reference():
    rng = np.random.default_rng(1)
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    wx, wh, b = rng.normal(size=(3, 12)), rng.normal(size=(4, 12)), rng.normal(size=12)
    xs, hs = x @ wx + b, h @ wh
    z, r = sig(xs[:, :4] + hs[:, :4]), sig(xs[:, 4:8] + hs[:, 4:8])
    cand = np.tanh(xs[:, 8:] + r * hs[:, 8:])
    out = nv.gru_cell(Tensor(x), Tensor(h), Tensor(wx), Tensor(wh), Tensor(b))
    np.testing.assert_allclose(out.data, (1 - z) * cand + z * h, atol=1e-14)


def test_attention_weights_and_mask():
    rng = np.random.default_rng(2)
    q, k = rng.normal(size=(2, 4)), rng.normal(size=(2, 3, 4))
    mask = np.array([[1, 1, 0], [1, 1, 1.0]])
    ctx, w = nv.attention(q, k, k, mask, return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0)
    assert w.data[0, 2] == 0.0
    scores = np.einsum("bd,bnd->bn", q, k) / 2.0
    ref = np.exp(scores[1] - scores[1].max())
    np.testing.assert_allclose(w.data[1], ref / ref.sum(), atol=1e-14)
    np.testing.assert_allclose(ctx.data[1], w.data[1] @ k[1], atol=1e-14)
    with pytest.raises(ShapeError):
        nv.attention(q, np.zeros((2, 0, 4)), np.zeros((2, 0, 4)))


def test_single_key_attention_returns_value():
    v = np.random.default_rng(3).normal(size=(2, 1, 5))
    np.testing.assert_allclose(nv.attention(np.ones((2, 5)), v, v).data, v[:, 0])


def test_prev_action_embedding():
    table = np.arange(8.0).reshape(4, 2)
    out = nv.prev_action_embedding(table, [-1, 2])
    np.testing.assert_allclose(out.data, [[0, 0], [4, 5]])


def test_parameter_names(nav):
    kind = nv.navigator_kind(nav)
    assert all(k.startswith(f"nav.{kind}.") for k in nav.names())
    assert nav[f"nav.{kind}.head.w"].shape == (4, 128)
    if kind == "cma":
        assert nav["nav.cma.act_gru.wx"].shape == (400, 384)


def test_instruction_encoding_shapes(nav):
    toks = [[2, 4, 7], [3, 4]]
    out = nv.encode_instruction(nav, toks)
    if nv.navigator_kind(nav) == "seq2seq":
        assert out.shape == (2, 64)
        # padding does not change the shorter instruction's encoding
        np.testing.assert_allclose(out.data[1], nv.encode_instruction(nav, [[3, 4]]).data[0], atol=1e-14)
    else:
        omega, mask = out
        assert omega.shape == (2, 3, 128) and mask.tolist() == [[1, 1, 1], [1, 1, 0]]
    with pytest.raises(ValueError):
        nv.encode_instruction(nav, [[V]])
    with pytest.raises(ValueError):
        nv.encode_instruction(nav, [[]])


def test_step_is_batch_independent(nav):
    rng = np.random.default_rng(4)
    toks = [[2, 4, 7, 11], [3, 4]]
    phi, phi_d = rng.normal(size=(2, 64)), rng.normal(size=(2, 64))
    _, both = nv.nav_step(nav, nv.init_nav_state(nav, toks), phi, phi_d)
    _, one = nv.nav_step(nav, nv.init_nav_state(nav, toks[1:]), phi[1:], phi_d[1:])
    np.testing.assert_allclose(both.data[1], one.data[0], atol=1e-12)
    assert both.shape == (2, 4)


def test_seq2seq_step_rejects_wrong_width():
    nav = nv.init_navigator("seq2seq", 0, V)
    with pytest.raises(ShapeError):
        nv.seq2seq_step(nav, np.zeros((1, 32)), np.zeros((1, 64)), np.zeros((1, 64)), np.zeros((1, 128)))


def test_teacher_probability():
    assert nv.teacher_probability("seq2seq", 0) == 1.0
    assert nv.teacher_probability("seq2seq", 2) == 0.5625
    assert nv.teacher_probability("cma", 0) == 0.75


def _seqs(ds, n=2):
    cam = CameraConfig()
    worlds = [ds.world(e.world_id) for e in ds.episodes[:n]]
    _, recs = nv.rollout_batch(nv.init_navigator("seq2seq", 0, V), init_encoders(0), ds.episodes[:n],
                               worlds, cam, 100, teacher_prob=1.0, rng=np.random.default_rng(0),
                               record=True)
    return [nv.Sequence_(np.array(r.rgb), np.array(r.depth), np.array(r.executed),
                         np.array(r.labels), e.instruction) for r, e in zip(recs, ds.episodes)]


def test_teacher_forced_rollout_follows_oracle(small_splits):
    ds = small_splits["val_seen"]
    seqs = _seqs(ds)
    for s, e in zip(seqs, ds.episodes):
        assert s.labels.tolist() == e.reference_actions
        assert s.executed.tolist() == e.reference_actions
        assert s.rgb.shape == (len(e.reference_actions), 64, 3)


@pytest.mark.parametrize("kind", nv.KINDS)
def test_sequence_loss_gradient_directional(small_splits, kind):
    seqs = [nv.Sequence_(s.rgb[:6], s.depth[:6], s.executed[:6], s.labels[:6], s.tokens)
            for s in _seqs(small_splits["val_seen"])]
    nav, enc = nv.init_navigator(kind, 1, V), init_encoders(1)
    names = [f"nav.{kind}.head.b", f"nav.{kind}.emb", "depth.fc.b", "rgb.conv1.w"]
    params = nav.merged(enc)
    g = Graph()
    att = params.attach(g)
    split = lambda p: ({k: v for k, v in p.items() if k.startswith("nav.")},
                       {k: v for k, v in p.items() if not k.startswith("nav.")})
    grads = g.backward(nv.sequence_loss(*split(att), seqs, 10.0), [att[k] for k in names])
    rng = np.random.default_rng(5)
    for name, gr in zip(names, grads):
        d = rng.normal(size=params[name].shape)
        h = 1e-5

        def at(sgn):
            p = dict(params.items())
            p[name] = params[name] + sgn * h * d
            with dc.no_grad():
                return nv.sequence_loss(*split(p), seqs, 10.0).item()

        fd = (at(1) - at(-1)) / (2 * h)
        assert np.sum(gr.data * d) == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_oracle_override_rollout_succeeds(small_splits):
    ds = small_splits["val_unseen"]
    worlds = [ds.world(e.world_id) for e in ds.episodes]
    ctgs = [cost_to_go(w, e.goal, 3.0) for w, e in zip(worlds, ds.episodes)]
    trajs = nv.rollout_batch({}, {}, ds.episodes, worlds, CameraConfig(), 200,
                             action_override=lambda i, s: ctgs[i].action(s))
    for t, e in zip(trajs, ds.episodes):
        assert t.stopped and t.actions == [Action(a) for a in e.reference_actions]
        assert len(t.states) == len(t.actions) + 1 and t.terminal == "stopped"


def test_policy_rollout_deterministic_and_limited(small_splits):
    ds = small_splits["val_seen"]
    nav, enc = nv.init_navigator("cma", 2, V), init_encoders(2)
    w = ds.world(ds.episodes[0].world_id)
    a = nv.rollout(nav, enc, ds.episodes[0], w, CameraConfig(), step_limit=15)
    b = nv.rollout(nav, enc, ds.episodes[0], w, CameraConfig(), step_limit=15)
    assert a.actions == b.actions and a.states == b.states and len(a) <= 15
    z = nv.rollout(nav, enc, ds.episodes[0], w, CameraConfig(), step_limit=0)
    assert len(z) == 0 and not z.stopped and z.terminal == "step-limit"


def test_tiny_pretrain_is_deterministic(small_splits):
    from camadapt.episodes import Dataset
    full = small_splits["train"]
    ds = Dataset(full.episodes[:2], full.worlds, full.threshold, full.vocabulary, "t")
    cfg = nv.PretrainConfig(rounds=2, epochs=2, lr=1e-3, batch_size=2)
    a = nv.pretrain("seq2seq", ds, CameraConfig(), cfg, seed=0)
    b = nv.pretrain("seq2seq", ds, CameraConfig(), cfg, seed=0)
    assert a[0].equal(b[0]) and a[1].equal(b[1])
    assert [r["loss"] for r in a[2]] == [r["loss"] for r in b[2]]
    assert [r["sequences"] for r in a[2]] == [2, 4]
    with pytest.raises(ValueError):
        nv.pretrain("seq2seq", Dataset(), CameraConfig(), cfg)


def test_single_token_encoding_is_one_lstm_step():
    nav = nv.init_navigator("seq2seq", 3, V)
    p = {k[len("nav.seq2seq."):]: v for k, v in nav.items()}
    x = p["emb"][[5]]
    zeros = np.zeros((1, 64))
    h, _ = nv.lstm_cell(Tensor(x), Tensor(zeros), Tensor(zeros),
                        Tensor(p["lstm.wx"]), Tensor(p["lstm.wh"]), Tensor(p["lstm.b"]))
    np.testing.assert_allclose(nv.encode_instruction(nav, [[5]]).data, h.data, atol=1e-15)


def test_reversed_tokens_change_omega():
    toks = [4, 7, 11, 2, 9]
    for seed in range(20):
        nav = nv.init_navigator("cma", seed, V)
        a, _ = nv.encode_instruction(nav, [toks])
        b, _ = nv.encode_instruction(nav, [toks[::-1]])
        assert a.shape == (1, 5, 128) and not np.allclose(a.data, b.data[:, ::-1])


def _zero(kind):
    nav = nv.init_navigator(kind, 0, V)
    return ParamSet((k, np.zeros_like(v)) for k, v in nav.items())


def test_zero_weights_give_uniform_policy_and_zero_hidden():
    nav = _zero("seq2seq")
    h, logits = nv.seq2seq_step(nav, np.zeros((1, 64)), np.zeros((1, 64)), np.zeros((1, 64)), np.zeros((1, 128)))
    assert np.all(h.data == 0.0)
    np.testing.assert_allclose(dc.softmax(logits).data, [[0.25] * 4], atol=1e-15)
    cma = _zero("cma")
    omega = Tensor(np.zeros((1, 3, 128)))
    h_o, h_a, _ = nv.cma_step(cma, np.zeros((1, 64)), np.zeros((1, 64)), omega, np.ones((1, 3)),
                              [-1], np.zeros((1, 128)), np.zeros((1, 128)))
    assert np.all(h_o.data == 0.0) and np.all(h_a.data == 0.0)


def test_argmax_order_matches_action_enum():
    assert Action(int(np.argmax([3.0, 1.0, 1.0, 1.0]))) == Action.FORWARD


def test_identical_keys_give_mean_of_values():
    keys = np.tile(np.random.default_rng(0).normal(size=(1, 1, 4)), (2, 3, 1))
    vals = np.random.default_rng(1).normal(size=(2, 3, 6))
    ctx = nv.attention(np.random.default_rng(2).normal(size=(2, 4)), keys, vals)
    np.testing.assert_allclose(ctx.data, vals.mean(axis=1), atol=1e-14)


def test_cma_visual_attention_is_identity_and_prev_action_matters():
    rng = np.random.default_rng(3)
    phi = rng.normal(size=(1, 64))
    one = phi.reshape(1, 1, 64)
    np.testing.assert_allclose(nv.attention(rng.normal(size=(1, 64)), one, one).data, phi, atol=1e-15)
    for seed in range(20):
        nav = nv.init_navigator("cma", seed, V)
        omega, mask = nv.encode_instruction(nav, [[4, 7, 11]])
        args = (phi, rng.normal(size=(1, 64)), omega, mask)
        h0 = (np.zeros((1, 128)), np.zeros((1, 128)))
        *_, a = nv.cma_step(nav, *args, [0], *h0)
        *_, b = nv.cma_step(nav, *args, [2], *h0)
        assert not np.allclose(a.data, b.data)


def test_always_stop_policy(small_splits):
    ds = small_splits["val_seen"]
    e = ds.episodes[0]
    nav = nv.init_navigator("seq2seq", 0, V)
    nav["nav.seq2seq.head.b"] = np.array([0.0, 0.0, 0.0, 1e6])
    t = nv.rollout(nav, init_encoders(0), e, ds.world(e.world_id), CameraConfig())
    assert t.actions == [Action.STOP] and t.states == [e.start, e.start] and t.stopped


def test_rollout_softmax_normalized(small_splits):
    ds = small_splits["val_seen"]
    nav, enc = nv.init_navigator("cma", 4, V), init_encoders(4)
    state = nv.init_nav_state(nav, [e.instruction for e in ds.episodes])
    rng = np.random.default_rng(0)
    for _ in range(5):
        state, logits = nv.nav_step(nav, state, rng.normal(size=(3, 64)), rng.normal(size=(3, 64)))
        np.testing.assert_allclose(dc.softmax(logits).data.sum(-1), 1.0, atol=1e-12)
