"""Instruction encoders, the seq2seq and cross-modal attention navigators,
batched rollouts and DAgger pretraining at the reference camera."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import NonFiniteError, ParamSet, ShapeError, Tensor
from .episodes import Dataset, Episode
from .perception import FEATURE_DIM, encode_pair, init_encoders, prepare_inputs
from .world import Action, AgentState, CameraConfig, WorldSpec, cost_to_go, render_batch, step

KINDS = ("seq2seq", "cma")
EMBED_DIM = 32
LSTM_HIDDEN = 64
GRU_HIDDEN = 128
ACTION_EMBED = 16
N_ACTIONS = len(Action)
DEFAULT_STEP_LIMIT = 200


def _glorot(rng, shape):
    return rng.normal(0.0, math.sqrt(2.0 / (shape[0] + shape[-1])), shape)


def _add_lstm(ps: ParamSet, prefix: str, n_in: int, hidden: int, rng):
    ps.add(prefix + "wx", _glorot(rng, (n_in, 4 * hidden)))
    ps.add(prefix + "wh", _glorot(rng, (hidden, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    ps.add(prefix + "b", b)


def _add_gru(ps: ParamSet, prefix: str, n_in: int, hidden: int, rng):
    ps.add(prefix + "wx", _glorot(rng, (n_in, 3 * hidden)))
    ps.add(prefix + "wh", _glorot(rng, (hidden, 3 * hidden)))
    ps.add(prefix + "b", np.zeros(3 * hidden))


def init_navigator(kind: str, seed, vocab_size: int, feat_dim: int = FEATURE_DIM) -> ParamSet:
    """Navigator weights under the prefix ``nav.<kind>.``."""
    if kind not in KINDS:
        raise ValueError(f"unknown navigator kind {kind!r}")
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    ps.add("emb", rng.normal(0.0, 0.3, (vocab_size, EMBED_DIM)))
    if kind == "seq2seq":
        _add_lstm(ps, "lstm.", EMBED_DIM, LSTM_HIDDEN, rng)
        _add_gru(ps, "gru.", 2 * feat_dim + LSTM_HIDDEN, GRU_HIDDEN, rng)
    else:
        _add_lstm(ps, "lstm_f.", EMBED_DIM, LSTM_HIDDEN, rng)
        _add_lstm(ps, "lstm_b.", EMBED_DIM, LSTM_HIDDEN, rng)
        ps.add("act_emb", rng.normal(0.0, 0.3, (N_ACTIONS, ACTION_EMBED)))
        _add_gru(ps, "obs_gru.", 2 * feat_dim + ACTION_EMBED, GRU_HIDDEN, rng)
        ps.add("att_rgb.wq", _glorot(rng, (2 * LSTM_HIDDEN, feat_dim)))
        ps.add("att_depth.wq", _glorot(rng, (2 * LSTM_HIDDEN, feat_dim)))
        n_in = 2 * LSTM_HIDDEN + 2 * feat_dim + ACTION_EMBED + GRU_HIDDEN
        _add_gru(ps, "act_gru.", n_in, GRU_HIDDEN, rng)
    ps.add("head.w", _glorot(rng, (N_ACTIONS, GRU_HIDDEN)))
    ps.add("head.b", np.zeros(N_ACTIONS))
    return ps.prefixed(f"nav.{kind}.")


def navigator_kind(params: Mapping) -> str:
    for kind in KINDS:
        if f"nav.{kind}.head.w" in params:
            return kind
    raise KeyError("parameters contain no navigator")


# ---------------------------------------------------------------------------
# recurrent cells


def lstm_cell(x, h, c, wx, wh, b):
    gates = x @ wx + h @ wh + b
    n = h.shape[-1]
    i = dc.sigmoid(gates[:, :n])
    f = dc.sigmoid(gates[:, n:2 * n])
    g = dc.tanh(gates[:, 2 * n:3 * n])
    o = dc.sigmoid(gates[:, 3 * n:])
    c_new = f * c + i * g
    return o * dc.tanh(c_new), c_new


def gru_cell(x, h, wx, wh, b):
    """GRU update: z, r gates; candidate n = tanh(Wx x + r * (Wh h) + b)."""
    n = h.shape[-1]
    xs = x @ wx + b
    hs = h @ wh
    z = dc.sigmoid(xs[:, :n] + hs[:, :n])
    r = dc.sigmoid(xs[:, n:2 * n] + hs[:, n:2 * n])
    cand = dc.tanh(xs[:, 2 * n:] + r * hs[:, 2 * n:])
    return (1.0 - z) * cand + z * h


def _masked(new, old, m):
    return new * m + old * (1.0 - m)


# ---------------------------------------------------------------------------
# instruction encoders


def _pad_tokens(tokens_list, vocab_size: int):
    if any(len(t) == 0 for t in tokens_list):
        raise ValueError("empty instruction")
    length = max(len(t) for t in tokens_list)
    arr = np.zeros((len(tokens_list), length), dtype=np.int64)
    mask = np.zeros((len(tokens_list), length))
    for i, t in enumerate(tokens_list):
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 0) or np.any(t >= vocab_size):
            raise ValueError(f"token id out of vocabulary (size {vocab_size})")
        arr[i, :len(t)] = t
        mask[i, :len(t)] = 1.0
    return arr, mask


def _run_lstm(p: Mapping, prefix: str, emb, mask, reverse: bool):
    bsz, length = mask.shape
    h = Tensor(np.zeros((bsz, LSTM_HIDDEN)))
    c = Tensor(np.zeros((bsz, LSTM_HIDDEN)))
    outs = [None] * length
    order = range(length - 1, -1, -1) if reverse else range(length)
    for t in order:
        m = mask[:, t:t + 1]
        h_new, c_new = lstm_cell(emb[:, t, :], h, c, p[prefix + "wx"], p[prefix + "wh"], p[prefix + "b"])
        h, c = _masked(h_new, h, m), _masked(c_new, c, m)
        outs[t] = h
    return h, outs


def encode_instruction(params: Mapping, tokens_list: Sequence[Sequence[int]]):
    """seq2seq: final LSTM state omega (B, 64).  CMA: (Omega (B, L, 128), mask (B, L))."""
    kind = navigator_kind(params)
    p = _local(params, kind)
    table = dc.as_tensor(p["emb"])
    arr, mask = _pad_tokens(tokens_list, table.shape[0])
    emb = table[arr]
    if kind == "seq2seq":
        h, _ = _run_lstm(p, "lstm.", emb, mask, reverse=False)
        return h
    _, fwd = _run_lstm(p, "lstm_f.", emb, mask, reverse=False)
    _, bwd = _run_lstm(p, "lstm_b.", emb, mask, reverse=True)
    omega = dc.stack([dc.concat([f, b], axis=-1) for f, b in zip(fwd, bwd)], axis=1)
    return omega, mask


def _local(params: Mapping, kind: str) -> dict:
    prefix = f"nav.{kind}."
    return {k[len(prefix):]: dc.as_tensor(v) for k, v in params.items() if k.startswith(prefix)}


# ---------------------------------------------------------------------------
# single steps


def seq2seq_step(params: Mapping, phi, phi_d, omega, h_prev):
    """h = GRU([phi, phi_d, omega], h_prev); logits = W_a h + b_a."""
    p = _local(params, "seq2seq")
    x = dc.concat([dc.as_tensor(phi), dc.as_tensor(phi_d), dc.as_tensor(omega)], axis=-1)
    if x.shape[-1] != p["gru.wx"].shape[0]:
        raise ShapeError(f"seq2seq_step: input width {x.shape[-1]} != {p['gru.wx'].shape[0]}")
    h = gru_cell(x, dc.as_tensor(h_prev), p["gru.wx"], p["gru.wh"], p["gru.b"])
    return h, h @ p["head.w"].T + p["head.b"]


def attention(query, keys, values, mask=None, return_weights: bool = False):
    """Scaled dot-product attention of a (B, d) query over (B, N, d) keys."""
    query, keys, values = dc.as_tensor(query), dc.as_tensor(keys), dc.as_tensor(values)
    if keys.shape[-2] == 0:
        raise ShapeError("attention: empty key set")
    if keys.shape[:-1] != values.shape[:-1] or query.shape[-1] != keys.shape[-1]:
        raise ShapeError(f"attention: query {query.shape}, keys {keys.shape}, values {values.shape}")
    d = keys.shape[-1]
    q = dc.reshape(query, query.shape[:-1] + (1, d))
    scores = dc.scale(q @ keys.T, 1.0 / math.sqrt(d))  # (B, 1, N)
    if mask is not None:
        scores = scores + (np.asarray(mask)[:, None, :] - 1.0) * 1e9
    w = dc.softmax(scores, axis=-1)
    ctx = w @ values
    ctx = dc.reshape(ctx, ctx.shape[:-2] + (values.shape[-1],))
    return (ctx, dc.reshape(w, w.shape[:-2] + (w.shape[-1],))) if return_weights else ctx


def prev_action_embedding(table, prev_actions):
    """Rows of the 4 x 16 table for the previous actions; zeros where prev < 0."""
    prev = np.asarray(prev_actions, dtype=np.int64)
    onehot = np.zeros((prev.size, N_ACTIONS))
    ok = prev >= 0
    onehot[np.flatnonzero(ok), prev[ok]] = 1.0
    return Tensor(onehot) @ dc.as_tensor(table)


def cma_step(params: Mapping, phi, phi_d, omega, mask, prev_actions, h_o_prev, h_a_prev):
    """One cross-modal attention step; returns (h_o, h_a, logits)."""
    p = _local(params, "cma")
    phi, phi_d = dc.as_tensor(phi), dc.as_tensor(phi_d)
    a_emb = prev_action_embedding(p["act_emb"], prev_actions)
    h_o = gru_cell(dc.concat([phi, phi_d, a_emb], axis=-1), dc.as_tensor(h_o_prev),
                   p["obs_gru.wx"], p["obs_gru.wh"], p["obs_gru.b"])
    omega_hat = attention(h_o, omega, omega, mask)
    one = lambda f: dc.reshape(f, (f.shape[0], 1, f.shape[1]))
    phi_hat = attention(omega_hat @ p["att_rgb.wq"], one(phi), one(phi))
    phi_d_hat = attention(omega_hat @ p["att_depth.wq"], one(phi_d), one(phi_d))
    x = dc.concat([omega_hat, phi_hat, phi_d_hat, a_emb, h_o], axis=-1)
    h_a = gru_cell(x, dc.as_tensor(h_a_prev), p["act_gru.wx"], p["act_gru.wh"], p["act_gru.b"])
    return h_o, h_a, h_a @ p["head.w"].T + p["head.b"]


class NavState:
    """Recurrent state of a batch of navigators plus their instruction encodings."""

    def __init__(self, kind, instr, hidden, prev):
        self.kind, self.instr, self.hidden, self.prev = kind, instr, hidden, prev

    def subset(self, idx) -> "NavState":
        idx = np.asarray(idx, dtype=np.int64)
        if self.kind == "seq2seq":
            instr = Tensor(self.instr.data[idx])
        else:
            instr = (Tensor(self.instr[0].data[idx]), self.instr[1][idx])
        hidden = tuple(Tensor(h.data[idx]) for h in self.hidden)
        return NavState(self.kind, instr, hidden, self.prev[idx])


def init_nav_state(params: Mapping, tokens_list) -> NavState:
    kind = navigator_kind(params)
    instr = encode_instruction(params, tokens_list)
    n = len(tokens_list)
    zeros = Tensor(np.zeros((n, GRU_HIDDEN)))
    hidden = (zeros,) if kind == "seq2seq" else (zeros, zeros)
    return NavState(kind, instr, hidden, np.full(n, -1, dtype=np.int64))


def nav_step(params: Mapping, state: NavState, phi, phi_d) -> tuple[NavState, Tensor]:
    if state.kind == "seq2seq":
        h, logits = seq2seq_step(params, phi, phi_d, state.instr, state.hidden[0])
        return NavState(state.kind, state.instr, (h,), state.prev), logits
    omega, mask = state.instr
    h_o, h_a, logits = cma_step(params, phi, phi_d, omega, mask, state.prev, *state.hidden)
    return NavState(state.kind, state.instr, (h_o, h_a), state.prev), logits


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class Trajectory:
    """States visited (one more than actions) and actions taken."""

    states: list[AgentState]
    actions: list[Action]
    stopped: bool
    episode_id: int = -1

    @property
    def steps(self) -> list[tuple[AgentState, Action]]:
        return list(zip(self.states[:-1], self.actions))

    @property
    def terminal(self) -> str:
        return "stopped" if self.stopped else "step-limit"

    def __len__(self):
        return len(self.actions)

    def positions(self) -> list[tuple[float, float]]:
        return [s.position for s in self.states]


def render_group(worlds: Sequence[WorldSpec], states: Sequence[AgentState], cam: CameraConfig):
    """Render states that may live in different worlds; output in input order."""
    n = len(states)
    rgb = np.zeros((n, cam.width, 3))
    depth = np.zeros((n, cam.width))
    by_world: dict[int, list[int]] = {}
    for i, w in enumerate(worlds):
        by_world.setdefault(id(w), []).append(i)
    for idx in by_world.values():
        w = worlds[idx[0]]
        xs = np.array([states[i].x for i in idx])
        ys = np.array([states[i].y for i in idx])
        hs = np.array([states[i].heading for i in idx])
        r, d = render_batch(w, xs, ys, hs, cam)
        rgb[idx], depth[idx] = r, d
    return rgb, depth


Policy = Callable[[np.ndarray, list[int]], np.ndarray]


@dataclass
class RolloutRecord:
    """Per-step data gathered during a (possibly teacher-mixed) rollout."""

    rgb: list = field(default_factory=list)
    depth: list = field(default_factory=list)
    executed: list = field(default_factory=list)
    labels: list = field(default_factory=list)


def rollout_batch(nav_params: Mapping, enc_params: Mapping, episodes: Sequence[Episode],
                  worlds: Sequence[WorldSpec], cam: CameraConfig,
                  step_limit: int = DEFAULT_STEP_LIMIT, teacher_prob: float = 0.0,
                  rng: np.random.Generator | None = None, threshold: float = 3.0,
                  record: bool = False, action_override: Callable | None = None):
    """Closed-loop greedy rollouts of a batch of episodes.

    With ``teacher_prob > 0`` each step executes the oracle action with that
    probability (DAgger); with ``record`` the observations, executed actions
    and oracle labels are returned alongside the trajectories.
    ``action_override(i, state)`` replaces the policy entirely (for tests).
    """
    n = len(episodes)
    states = [ep.start for ep in episodes]
    trajs = [Trajectory([ep.start], [], False, ep.episode_id) for ep in episodes]
    records = [RolloutRecord() for _ in episodes] if record else None
    need_oracle = record or teacher_prob > 0
    ctgs = [cost_to_go(worlds[i], episodes[i].goal, threshold) for i in range(n)] if need_oracle else None
    active = np.arange(n)
    use_policy = action_override is None
    with dc.no_grad():
        nav = init_nav_state(nav_params, [ep.instruction for ep in episodes]) if use_policy else None
        for _ in range(step_limit):
            if active.size == 0:
                break
            cur = [states[i] for i in active]
            if use_policy or record:
                rgb, depth = render_group([worlds[i] for i in active], cur, cam)
            if use_policy:
                x_rgb, x_depth = prepare_inputs(rgb, depth, cam.d_max)
                phi, phi_d = encode_pair(enc_params, x_rgb, x_depth)
                nav, logits = nav_step(nav_params, nav, phi, phi_d)
                chosen = np.argmax(logits.data, axis=-1)
            else:
                chosen = np.array([int(action_override(i, states[i])) for i in active])
            if need_oracle:
                labels = np.array([int(ctgs[i].action(states[i])) for i in active])
            if teacher_prob > 0:
                take = rng.random(active.size) < teacher_prob
                chosen = np.where(take, labels, chosen)
            keep = []
            for k, i in enumerate(active):
                a = Action(int(chosen[k]))
                if record:
                    rec = records[i]
                    rec.rgb.append(rgb[k])
                    rec.depth.append(depth[k])
                    rec.executed.append(int(a))
                    rec.labels.append(int(labels[k]))
                trajs[i].actions.append(a)
                if a == Action.STOP:
                    trajs[i].states.append(states[i])
                    trajs[i].stopped = True
                else:
                    states[i] = step(worlds[i], states[i], a)
                    trajs[i].states.append(states[i])
                    keep.append(k)
            if use_policy:
                nav.prev = chosen
                nav = nav.subset(keep)
            active = active[keep]
    return (trajs, records) if record else trajs


def rollout(nav_params: Mapping, enc_params: Mapping, episode: Episode, world: WorldSpec,
            cam: CameraConfig, step_limit: int = DEFAULT_STEP_LIMIT) -> Trajectory:
    return rollout_batch(nav_params, enc_params, [episode], [world], cam, step_limit)[0]


# ---------------------------------------------------------------------------
# DAgger pretraining


@dataclass
class PretrainConfig:
    rounds: int = 4
    epochs: int = 30
    lr: float = 2e-4
    batch_size: int = 16
    clip_norm: float = 5.0
    collect_slack: int = 30


def teacher_probability(kind: str, round_index: int) -> float:
    """0.75^n for seq2seq, 0.75^(n+1) for CMA."""
    return 0.75 ** (round_index + (1 if kind == "cma" else 0))


@dataclass
class Sequence_:
    rgb: np.ndarray
    depth: np.ndarray
    executed: np.ndarray
    labels: np.ndarray
    tokens: list


def sequence_loss(nav_params: Mapping, enc_params: Mapping, batch: Sequence[Sequence_], d_max: float):
    """Mean cross-entropy of oracle labels over all valid steps of a padded batch."""
    bsz = len(batch)
    t_max = max(len(s.labels) for s in batch)
    width = batch[0].rgb.shape[1]
    rgb = np.zeros((bsz, t_max, width, 3))
    depth = np.full((bsz, t_max, width), d_max)
    mask = np.zeros((bsz, t_max))
    onehot = np.zeros((bsz, t_max, N_ACTIONS))
    prev = np.full((bsz, t_max), -1, dtype=np.int64)
    for i, s in enumerate(batch):
        n = len(s.labels)
        rgb[i, :n], depth[i, :n], mask[i, :n] = s.rgb, s.depth, 1.0
        onehot[i, np.arange(n), s.labels] = 1.0
        prev[i, 1:n] = s.executed[:n - 1]
    x_rgb, x_depth = prepare_inputs(rgb.reshape(bsz * t_max, width, 3),
                                    depth.reshape(bsz * t_max, width), d_max)
    phi, phi_d = encode_pair(enc_params, x_rgb, x_depth)
    phi = dc.reshape(phi, (bsz, t_max, phi.shape[-1]))
    phi_d = dc.reshape(phi_d, (bsz, t_max, phi_d.shape[-1]))
    state = init_nav_state(nav_params, [s.tokens for s in batch])
    logps = []
    for t in range(t_max):
        state.prev = prev[:, t]
        m = mask[:, t:t + 1]
        new_state, logits = nav_step(nav_params, state, phi[:, t, :], phi_d[:, t, :])
        hidden = tuple(_masked(hn, ho, m) for hn, ho in zip(new_state.hidden, state.hidden))
        state = NavState(state.kind, state.instr, hidden, state.prev)
        logps.append(dc.log_softmax(logits, axis=-1))
    logp = dc.stack(logps, axis=1)
    weights = onehot * mask[:, :, None]
    return dc.scale(dc.tsum(logp * weights), -1.0 / mask.sum())


def _clip(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm and norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


def pretrain(kind: str, dataset: Dataset, ref_cam: CameraConfig, cfg: PretrainConfig | None = None,
             seed: int = 0, log: Callable[[dict], None] | None = None):
    """DAgger imitation of the oracle, training navigator and reference encoders jointly.

    Returns ``(nav_params, enc_params, log_records)``.
    """
    cfg = cfg or PretrainConfig()
    if len(dataset) == 0:
        raise ValueError("pretraining dataset is empty")
    rng = np.random.default_rng([seed, 17])
    nav = init_navigator(kind, [seed, 1], len(dataset.vocabulary))
    enc = init_encoders([seed, 2], width=ref_cam.width)
    params = nav.merged(enc)
    names = params.names()
    nav_names = [k for k in names if k.startswith("nav.")]
    episodes = dataset.episodes
    worlds = [dataset.world(ep.world_id) for ep in episodes]
    pool: list[Sequence_] = []
    records: list[dict] = []
    per_round = [cfg.epochs // cfg.rounds + (1 if r < cfg.epochs % cfg.rounds else 0)
                 for r in range(cfg.rounds)]
    for rnd in range(cfg.rounds):
        beta = teacher_probability(kind, rnd)
        limit = max(len(ep.reference_actions) for ep in episodes) + cfg.collect_slack
        nav_now = {k: params[k] for k in nav_names}
        enc_now = {k: params[k] for k in names if not k.startswith("nav.")}
        _, recs = rollout_batch(nav_now, enc_now, episodes, worlds, ref_cam, limit,
                                teacher_prob=beta, rng=rng, threshold=dataset.threshold,
                                record=True)
        for ep, r in zip(episodes, recs):
            pool.append(Sequence_(np.array(r.rgb), np.array(r.depth),
                                  np.array(r.executed), np.array(r.labels), ep.instruction))
        for epoch in range(per_round[rnd]):
            t0 = time.perf_counter()
            order = rng.permutation(len(pool))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [pool[i] for i in order[start:start + cfg.batch_size]]
                g = dc.Graph()
                attached = params.attach(g)
                loss = sequence_loss({k: attached[k] for k in nav_names},
                                     {k: v for k, v in attached.items() if not k.startswith("nav.")},
                                     batch, ref_cam.d_max)
                if not np.isfinite(loss.item()):
                    raise NonFiniteError(
                        f"pretrain diverged: round {rnd} epoch {epoch} loss {loss.item()}")
                grads = g.backward(loss, [attached[k] for k in names])
                dc.adam_step(params, _clip([gr.data for gr in grads], cfg.clip_norm), cfg.lr,
                             names=names)
                losses.append(loss.item())
            rec = {"round": rnd, "epoch": epoch, "teacher_prob": beta,
                   "loss": float(np.mean(losses)), "sequences": len(pool),
                   "seconds": round(time.perf_counter() - t0, 3)}
            records.append(rec)
            if log:
                log(rec)
    nav_out = ParamSet((k, params[k]) for k in nav_names)
    enc_out = ParamSet((k, params[k]) for k in names if not k.startswith("nav."))
    return nav_out, enc_out, records
