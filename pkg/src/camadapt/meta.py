"""Meta-training of the perception encoders against a frozen reference encoder.

Two procedures retrain only the RGB (theta) and depth (mu) encoders:

* few-shot MAML over camera-configuration tasks, followed by k-shot gradient
  descent at a new camera;
* learning-to-learn affine transformation: a plain gradient step on a
  pseudo-seen camera with AT layers active, then a hyper-gradient for the AT
  standard deviations from the pseudo-unseen loss of the updated encoder with
  AT removed.

The generic cores (:func:`meta_gradient`, :func:`at_hypergradient`) take loss
callables so they can be checked on closed-form scalar problems.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Graph, NonFiniteError, ParamSet, Tensor
from .episodes import Dataset, PairedFrame, render_pairs
from .perception import AT_USAGE, encode_pair, feature_loss, init_at, init_encoders, prepare_inputs
from .world import CameraConfig


@dataclass(frozen=True)
class MAMLConfig:
    alpha: float = 2e-4
    beta: float = 2e-4
    gamma: float = 2e-4
    delta: float = 2e-4
    k: int = 3
    k_query: int = 3
    inner_steps: int = 10
    batch_tasks: int = 4
    second_order: bool = True
    iterations: int = 200
    init: str = "random"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"MAMLConfig.{name} must be non-negative")
        if self.k < 1 or self.inner_steps < 0 or self.batch_tasks < 1:
            raise ValueError("MAMLConfig: need k >= 1, inner_steps >= 0, batch_tasks >= 1")
        if self.init not in ("random", "reference"):
            raise ValueError(f"MAMLConfig.init must be 'random' or 'reference', got {self.init!r}")


@dataclass(frozen=True)
class ATTrainConfig:
    eta: float = 2e-4
    zeta: float = 2e-4
    k: int = 3
    iterations: int = 200
    init: str = "random"
    at_init: float = -2.0
    hyper_optimizer: str = "adam"

    def __post_init__(self):
        if self.eta <= 0 or self.zeta <= 0:
            raise ValueError("ATTrainConfig: rates must be positive")
        if self.init not in ("random", "reference"):
            raise ValueError(f"ATTrainConfig.init must be 'random' or 'reference', got {self.init!r}")
        if self.hyper_optimizer not in ("adam", "sgd"):
            raise ValueError("ATTrainConfig.hyper_optimizer must be 'adam' or 'sgd'")


# ---------------------------------------------------------------------------
# tasks


@dataclass
class FrameBatch:
    """Prepared reference and target observations of a set of paired frames."""

    ref_rgb: np.ndarray
    ref_depth: np.ndarray
    tgt_rgb: np.ndarray
    tgt_depth: np.ndarray
    _targets: tuple | None = field(default=None, repr=False)

    @classmethod
    def from_pairs(cls, pairs: Sequence[PairedFrame], ref_cam: CameraConfig, tgt_cam: CameraConfig):
        rr, rd = prepare_inputs(np.stack([p.reference.rgb for p in pairs]),
                                np.stack([p.reference.depth for p in pairs]), ref_cam.d_max)
        tr, td = prepare_inputs(np.stack([p.target.rgb for p in pairs]),
                                np.stack([p.target.depth for p in pairs]), tgt_cam.d_max)
        return cls(rr, rd, tr, td)

    def __len__(self):
        return self.ref_rgb.shape[0]

    def targets(self, ref_enc: Mapping) -> tuple[np.ndarray, np.ndarray]:
        """Frozen reference features of the reference observations."""
        if self._targets is None:
            with dc.no_grad():
                phi, phi_d = encode_pair(ref_enc, self.ref_rgb, self.ref_depth)
            self._targets = (phi.data, phi_d.data)
        return self._targets


@dataclass
class MetaTask:
    cam: CameraConfig
    world_id: int
    episode_id: int
    support: list[PairedFrame]
    query: list[PairedFrame]
    support_batch: FrameBatch
    query_batch: FrameBatch | None


@dataclass
class TaskDistribution:
    cams: list[CameraConfig]
    dataset: Dataset
    ref_cam: CameraConfig

    def __post_init__(self):
        if not self.cams:
            raise ValueError("task distribution needs at least one camera config")
        if len(set(self.cams)) != len(self.cams):
            raise ValueError("task distribution camera configs must be distinct")


def sample_task(dist: TaskDistribution, rng: np.random.Generator, k: int = 3, k_query: int = 3,
                cam: CameraConfig | None = None) -> MetaTask:
    """Uniform (config, episode) draw; support and query states are disjoint."""
    if len(dist.dataset) == 0:
        raise ValueError("task distribution dataset is empty")
    if cam is None:
        cam = dist.cams[int(rng.integers(len(dist.cams)))]
    ep = dist.dataset.episodes[int(rng.integers(len(dist.dataset)))]
    world = dist.dataset.world(ep.world_id)
    states = ep.states(world)
    if k + k_query > len(states):
        raise ValueError(f"episode {ep.episode_id} has {len(states)} states; "
                         f"need {k + k_query} disjoint support/query states")
    idx = rng.choice(len(states), size=k + k_query, replace=False)
    chosen = [states[i] for i in idx]
    pairs = render_pairs(world, chosen, dist.ref_cam, cam)
    support, query = pairs[:k], pairs[k:]
    return MetaTask(cam, ep.world_id, ep.episode_id, support, query,
                    FrameBatch.from_pairs(support, dist.ref_cam, cam),
                    FrameBatch.from_pairs(query, dist.ref_cam, cam) if query else None)


def encoder_losses(params: Mapping, batch: FrameBatch, ref_enc: Mapping, at=None):
    """(L_r, L_d): summed L1 distances between trainee and frozen reference features."""
    phi_ref, phi_d_ref = batch.targets(ref_enc)
    phi, phi_d = encode_pair(params, batch.tgt_rgb, batch.tgt_depth, at)
    return feature_loss(phi_ref, phi), feature_loss(phi_d_ref, phi_d)


def _rates(names, rgb_rate: float, depth_rate: float) -> dict[str, float]:
    out = {}
    for n in names:
        if n.startswith("rgb.") or n.startswith("at.rgb."):
            out[n] = rgb_rate
        elif n.startswith("depth.") or n.startswith("at.depth."):
            out[n] = depth_rate
        else:
            raise KeyError(f"parameter {n!r} is not an encoder parameter")
    return out


def _norm(arrays) -> float:
    return math.sqrt(sum(float(np.sum(np.square(a))) for a in arrays))


# ---------------------------------------------------------------------------
# MAML


def adapt_differentiable(graph: Graph, params: dict[str, Tensor], loss_fn: Callable,
                         rates: Mapping[str, float], steps: int, create_graph: bool):
    """``steps`` gradient-descent steps on ``loss_fn``, recorded on ``graph``.

    With ``create_graph`` the result depends differentiably on ``params``
    through the gradients; otherwise the gradients enter as constants.
    Returns the adapted parameters and the list of losses seen before each step.
    """
    names = list(params)
    p = dict(params)
    losses = []
    for _ in range(steps):
        loss = loss_fn(p)
        if not np.isfinite(loss.item()):
            raise NonFiniteError(f"inner loss is non-finite ({loss.item()})")
        losses.append(loss.item())
        grads = graph.backward(loss, [p[n] for n in names], create_graph=create_graph)
        for lr in sorted(set(rates[n] for n in names)):
            group = [n for n in names if rates[n] == lr]
            p.update(dc.sgd_step_diff({n: p[n] for n in group},
                                      [grads[names.index(n)] for n in group], lr))
    return p, losses


def meta_gradient(params: ParamSet | Mapping[str, np.ndarray], tasks: Sequence,
                  support_loss: Callable, query_loss: Callable, rates: Mapping[str, float],
                  steps: int, second_order: bool = True):
    """Gradient of the summed post-adaptation query losses w.r.t. the initial parameters.

    ``support_loss(task, p)`` and ``query_loss(task, p)`` return scalar tensors.
    Returns ``(grads, info)`` with grads keyed by parameter name.
    """
    if not tasks:
        raise ValueError("meta_gradient: empty task batch")
    graph = Graph()
    leaves = {n: graph.leaf(np.asarray(v), n) for n, v in params.items()}
    total = None
    support_before, support_after, query_losses = [], [], []
    for task in tasks:
        adapted, losses = adapt_differentiable(
            graph, leaves, lambda p, t=task: support_loss(t, p), rates, steps, second_order)
        q = query_loss(task, adapted)
        if losses:
            support_before.append(losses[0])
            with dc.no_grad():
                support_after.append(support_loss(task, adapted).item())
        query_losses.append(q.item())
        total = q if total is None else total + q
    if not np.isfinite(total.item()):
        raise NonFiniteError(f"meta-loss is non-finite ({total.item()})")
    names = list(leaves)
    grads = graph.backward(total, [leaves[n] for n in names])
    info = {
        "meta_loss": total.item(),
        "query_losses": query_losses,
        "support_before": support_before,
        "support_after": support_after,
        "nodes": len(graph),
    }
    return {n: g.data for n, g in zip(names, grads)}, info


def maml_inner_adapt(params: Mapping[str, Tensor], task: MetaTask, cfg: MAMLConfig,
                     ref_enc: Mapping, graph: Graph | None = None):
    """Adapted (theta', mu') after ``cfg.inner_steps`` steps on the support frames."""
    if len(task.support) == 0:
        raise ValueError("maml_inner_adapt: empty support set")
    if graph is None:
        graph = next((t.graph for t in params.values() if getattr(t, "graph", None)), None) or Graph()
        params = {n: (t if isinstance(t, Tensor) and t.graph is graph else graph.leaf(np.asarray(
            t.data if isinstance(t, Tensor) else t), n)) for n, t in params.items()}
    rates = _rates(params, cfg.alpha, cfg.beta)
    loss_fn = lambda p: _sum(encoder_losses(p, task.support_batch, ref_enc))
    adapted, _ = adapt_differentiable(graph, dict(params), loss_fn, rates, cfg.inner_steps,
                                      cfg.second_order)
    return adapted


def _sum(pair):
    return pair[0] + pair[1]


def maml_outer_step(meta: ParamSet, tasks: Sequence[MetaTask], cfg: MAMLConfig, ref_enc: Mapping) -> dict:
    """One Adam update (rates gamma, delta) of the meta-parameters from a task batch."""
    rates = _rates(meta.names(), cfg.alpha, cfg.beta)
    t0 = time.perf_counter()
    split = {}

    def query_loss(task, p):
        lr, ld = encoder_losses(p, task.query_batch, ref_enc)
        split.setdefault("r", []).append(lr.item())
        split.setdefault("d", []).append(ld.item())
        return lr + ld

    grads, info = meta_gradient(
        meta, tasks, lambda t, p: _sum(encoder_losses(p, t.support_batch, ref_enc)),
        query_loss, rates, cfg.inner_steps, cfg.second_order)
    names = meta.names()
    ok = dc.adam_step(meta, grads, _rates(names, cfg.gamma, cfg.delta), names=names)
    info.update({
        "L_r": float(np.sum(split["r"])),
        "L_d": float(np.sum(split["d"])),
        "grad_norm_rgb": _norm(g for n, g in grads.items() if n.startswith("rgb.")),
        "grad_norm_depth": _norm(g for n, g in grads.items() if n.startswith("depth.")),
        "step_applied": ok,
        "seconds": round(time.perf_counter() - t0, 4),
    })
    return info


def initial_encoders(init: str, ref_enc: ParamSet, seed, width: int) -> ParamSet:
    if init == "reference":
        return ParamSet((k, v) for k, v in ref_enc.items())
    return init_encoders([seed, 101], width=width, dim=ref_enc["rgb.fc.w"].shape[1])


def maml_train(ref_enc: ParamSet, dist: TaskDistribution, cfg: MAMLConfig, seed: int,
               log: Callable[[dict], None] | None = None) -> ParamSet:
    meta = initial_encoders(cfg.init, ref_enc, seed, dist.ref_cam.width)
    rng = np.random.default_rng([seed, 202])
    for it in range(cfg.iterations):
        tasks = [sample_task(dist, rng, cfg.k, cfg.k_query) for _ in range(cfg.batch_tasks)]
        info = maml_outer_step(meta, tasks, cfg, ref_enc)
        if log:
            log({"iteration": it, "L_r": info["L_r"], "L_d": info["L_d"],
                 "grad_norm_rgb": info["grad_norm_rgb"], "grad_norm_depth": info["grad_norm_depth"],
                 "seconds": info["seconds"]})
    return meta


def adapt_at_test(params: ParamSet, batch: FrameBatch, cfg: MAMLConfig, ref_enc: Mapping,
                  steps: int | None = None) -> ParamSet:
    """Plain k-shot gradient descent (rates alpha, beta) at the target camera."""
    steps = cfg.inner_steps if steps is None else steps
    out = ParamSet((k, v) for k, v in params.items())
    names = out.names()
    rates = _rates(names, cfg.alpha, cfg.beta)
    for _ in range(steps):
        g = Graph()
        leaves = out.attach(g)
        loss = _sum(encoder_losses(leaves, batch, ref_enc))
        if not np.isfinite(loss.item()):
            raise NonFiniteError("adaptation loss diverged")
        grads = g.backward(loss, [leaves[n] for n in names])
        for n, gr in zip(names, grads):
            out[n] = out[n] - rates[n] * gr.data
    return out


def mean_feature_loss(params: Mapping, batch: FrameBatch, ref_enc: Mapping) -> float:
    with dc.no_grad():
        lr, ld = encoder_losses(params, batch, ref_enc)
    return (lr.item() + ld.item()) / len(batch)


# ---------------------------------------------------------------------------
# learning-to-learn affine transformation


def at_hypergradient(params: Mapping[str, np.ndarray], hyper: Mapping[str, np.ndarray],
                     seen_loss: Callable, unseen_loss: Callable, rates: Mapping[str, float]):
    """One plain step on ``seen_loss(p, h)``, then d unseen_loss(p') / d h through that step.

    Returns ``(updated params, hyper-gradients, info)``; parameters and
    hyper-gradients are numpy arrays keyed by name.  ``unseen_loss`` receives
    only the updated parameters.
    """
    graph = Graph()
    p = {n: graph.leaf(np.asarray(v), n) for n, v in params.items()}
    h = {n: graph.leaf(np.asarray(v), n) for n, v in hyper.items()}
    l_seen = seen_loss(p, h)
    if not np.isfinite(l_seen.item()):
        raise NonFiniteError(f"pseudo-seen loss is non-finite ({l_seen.item()})")
    names = list(p)
    grads = graph.backward(l_seen, [p[n] for n in names], create_graph=True)
    updated = dict(p)
    for lr in sorted(set(rates[n] for n in names)):
        group = [n for n in names if rates[n] == lr]
        updated.update(dc.sgd_step_diff({n: p[n] for n in group},
                                        [grads[names.index(n)] for n in group], lr))
    before = AT_USAGE.calls
    l_unseen = unseen_loss(updated)
    if not np.isfinite(l_unseen.item()):
        raise NonFiniteError(f"pseudo-unseen loss is non-finite ({l_unseen.item()})")
    unseen_used_at = AT_USAGE.calls != before
    hnames = list(h)
    hgrads = graph.backward(l_unseen, [h[n] for n in hnames])
    info = {"L_ps": l_seen.item(), "L_pu": l_unseen.item(), "unseen_used_at": unseen_used_at,
            "grad_norm_params": _norm(g.data for g in grads)}
    return ({n: updated[n].data for n in names}, {n: g.data for n, g in zip(hnames, hgrads)}, info)


def at_train_iteration(enc: ParamSet, at: ParamSet, dist: TaskDistribution, cfg: ATTrainConfig,
                       ref_enc: Mapping, rng: np.random.Generator) -> dict:
    """Alternating pseudo-seen / pseudo-unseen update; modifies ``enc`` and ``at`` in place."""
    if len(dist.cams) < 2:
        raise ValueError("AT training needs at least two seen camera configs")
    t0 = time.perf_counter()
    i, j = rng.choice(len(dist.cams), size=2, replace=False)
    ps = sample_task(dist, rng, cfg.k, 0, cam=dist.cams[int(i)])
    pu = sample_task(dist, rng, cfg.k, 0, cam=dist.cams[int(j)])
    at_rng = np.random.default_rng(rng.integers(2**63))
    split = {}

    def seen_loss(p, h):
        lr, ld = encoder_losses(p, ps.support_batch, ref_enc, at=(h, at_rng))
        split["ps"] = (lr.item(), ld.item())
        return lr + ld

    def unseen_loss(p):
        lr, ld = encoder_losses(p, pu.support_batch, ref_enc)
        split["pu"] = (lr.item(), ld.item())
        return lr + ld

    new_params, hgrads, info = at_hypergradient(
        dict(enc.items()), dict(at.items()), seen_loss, unseen_loss,
        _rates(enc.names(), cfg.eta, cfg.zeta))
    if info["unseen_used_at"]:
        raise AssertionError("AT layers were evaluated on the pseudo-unseen branch")
    for n, v in new_params.items():
        enc[n] = v
    hrates = _rates(at.names(), cfg.eta, cfg.zeta)
    if cfg.hyper_optimizer == "adam":
        dc.adam_step(at, hgrads, hrates, names=at.names())
    else:
        for n, g in hgrads.items():
            at[n] = at[n] - hrates[n] * g
    info.update({
        "pseudo_seen": dist.cams[int(i)].to_dict(),
        "pseudo_unseen": dist.cams[int(j)].to_dict(),
        "L_r_ps": split["ps"][0], "L_d_ps": split["ps"][1],
        "L_r_pu": split["pu"][0], "L_d_pu": split["pu"][1],
        "grad_norm_at": _norm(hgrads.values()),
        "seconds": round(time.perf_counter() - t0, 4),
    })
    return info


def at_train(ref_enc: ParamSet, dist: TaskDistribution, cfg: ATTrainConfig, seed: int,
             log: Callable[[dict], None] | None = None) -> tuple[ParamSet, ParamSet]:
    enc = initial_encoders(cfg.init, ref_enc, seed, dist.ref_cam.width)
    at = init_at(cfg.at_init)
    rng = np.random.default_rng([seed, 303])
    for it in range(cfg.iterations):
        info = at_train_iteration(enc, at, dist, cfg, ref_enc, rng)
        if log:
            log({"iteration": it, **{k: info[k] for k in (
                "L_r_ps", "L_d_ps", "L_r_pu", "L_d_pu", "grad_norm_params", "grad_norm_at", "seconds")}})
    return enc, at
