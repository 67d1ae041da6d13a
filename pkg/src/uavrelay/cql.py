"""Offline Conservative Q-Learning over the discrete 27-action grid.

The conservative penalty is the discrete logsumexp form: it pushes down
Q-values of actions the dataset never took in a state, which counters the
value overestimation that plain offline Q-learning suffers under
distributional shift. An optional softmax actor maximizes expected Q with
an entropy bonus; with the actor disabled the policy is Q-greedy.

Training reads only the transition file; there is no environment access
anywhere in this module.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import TransitionArrays, load_arrays
from .errors import ConfigError, DimensionError, DomainError
from .learnkit import (
    KIND_POLICY,
    AdamState,
    Mlp,
    adam_step,
    backward,
    forward,
    init_mlp,
    load_weights,
    save_weights,
)

N_ACTIONS = 27


@dataclass(frozen=True)
class CqlConfig:
    batch_size: int = 128
    gamma: float = 0.99
    train_steps: int = 100_000  # desk default; the reference setting is 1e6
    q_lr: float = 3e-5
    actor_lr: float = 5e-5
    alpha: float = 0.5
    tau: float = 0.005
    use_actor: bool = True
    entropy_weight: float = 0.01
    hidden: tuple[int, ...] = (256, 256)
    log_every: int = 1000
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError("gamma must be in (0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ConfigError("tau must be in (0, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.q_lr <= 0 or self.actor_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1 or self.train_steps < 0:
            raise ConfigError("batch_size >= 1 and train_steps >= 0 required")


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


@dataclass
class PolicyBundle:
    """Everything needed to act: Q-net, its target, optional actor, provenance."""

    q_net: Mlp
    target_q: Mlp
    actor: Mlp | None
    input_dim: int
    codec_id: str  # "raw" or the codec description used to encode states
    config: CqlConfig


def td_target(batch: Batch, target_q: Mlp, gamma: float) -> np.ndarray:
    """y = r + gamma * (1 - done) * max_a' targetQ(s', a'), no gradient path."""
    q_next, _ = forward(target_q, batch.next_states, need_cache=False)
    not_done = 1.0 - batch.dones.astype(np.float32)
    return batch.rewards + gamma * not_done * q_next.max(axis=1)


def _logsumexp_rows(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row logsumexp with max-shift; also returns the softmax for gradients."""
    m = q.max(axis=1, keepdims=True)
    e = np.exp(q - m)
    s = e.sum(axis=1, keepdims=True)
    return (m + np.log(s))[:, 0], e / s


def cql_loss(q_net: Mlp, batch: Batch, y: np.ndarray, alpha: float):
    """(total, bellman_mse, conservative_term) on the batch."""
    (total, bellman, conservative), _ = cql_loss_and_grads(q_net, batch, y, alpha, need_grads=False)
    return total, bellman, conservative


def cql_loss_and_grads(q_net: Mlp, batch: Batch, y: np.ndarray, alpha: float, need_grads: bool = True):
    """Loss triple plus gradients; also returns the Q table for reuse.

    total = mean_i (Q(s_i,a_i) - y_i)^2
            + alpha * mean_i [logsumexp_a Q(s_i,a) - Q(s_i,a_i)]
    """
    q, cache = forward(q_net, batch.states, need_cache=need_grads)
    b = len(batch.states)
    rows = np.arange(b)
    q_data = q[rows, batch.actions]
    diff = q_data.astype(np.float64) - y.astype(np.float64)
    bellman = float(np.mean(diff * diff))
    lse, softmax = _logsumexp_rows(q)
    conservative = float(np.mean(lse.astype(np.float64) - q_data.astype(np.float64)))
    total = bellman + alpha * conservative
    if not need_grads:
        return (total, bellman, conservative), None, q

    dq = (alpha / b) * softmax.astype(np.float32)
    # rows are unique, so plain fancy indexing accumulates correctly
    dq[rows, batch.actions] += (2.0 / b) * diff.astype(np.float32) - np.float32(alpha / b)
    grads, _ = backward(q_net, cache, dq, need_input_grad=False)
    return (total, bellman, conservative), grads, q


def actor_loss(actor: Mlp, q_net: Mlp, batch: Batch, entropy_weight: float) -> float:
    """-E_pi[Q] - entropy_weight * H(pi), Q treated as a constant."""
    q, _ = forward(q_net, batch.states, need_cache=False)
    loss, _ = _actor_loss_given_q(actor, batch.states, q, entropy_weight, need_grads=False)
    return loss


def _actor_loss_given_q(actor: Mlp, states: np.ndarray, q: np.ndarray,
                        entropy_weight: float, need_grads: bool = True):
    logits, cache = forward(actor, states, need_cache=need_grads)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    pi = e / e.sum(axis=1, keepdims=True)
    b = len(states)
    expected_q = (pi * q).sum(axis=1)
    log_pi = np.log(np.maximum(pi, 1e-30))
    entropy = -(pi * log_pi).sum(axis=1)
    loss = float(-np.mean(expected_q.astype(np.float64)) - entropy_weight * np.mean(entropy.astype(np.float64)))
    if not need_grads:
        return loss, None
    # d/dlogit_b of -sum_a pi_a q_a = -pi_b (q_b - E_pi[q]);
    # d/dlogit_b of -w H = w pi_b (log pi_b + H)
    dlogits = (-pi * (q - expected_q[:, None]) + entropy_weight * pi * (log_pi + entropy[:, None])) / b
    grads, _ = backward(actor, cache, dlogits.astype(np.float32), need_input_grad=False)
    return loss, grads


def actor_loss_and_grads(actor: Mlp, q_net: Mlp, batch: Batch, entropy_weight: float):
    q, _ = forward(q_net, batch.states, need_cache=False)
    return _actor_loss_given_q(actor, batch.states, q, entropy_weight)


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """theta_target <- tau * theta_online + (1 - tau) * theta_target, in place."""
    tp = target.parameters()
    op = online.parameters()
    for t, o in zip(tp, op):
        if t.shape != o.shape:
            raise DimensionError(f"target shape {t.shape} != online shape {o.shape}")
        t *= 1.0 - tau
        t += tau * o


def init_bundle(input_dim: int, cfg: CqlConfig, codec_id: str = "raw") -> PolicyBundle:
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2)
    q = init_mlp((input_dim, *cfg.hidden, N_ACTIONS), int(seeds[0]))
    target = q.copy()
    actor = init_mlp((input_dim, *cfg.hidden, N_ACTIONS), int(seeds[1])) if cfg.use_actor else None
    return PolicyBundle(q_net=q, target_q=target, actor=actor,
                        input_dim=input_dim, codec_id=codec_id, config=cfg)


def train(
    data: TransitionArrays | str,
    cfg: CqlConfig,
    codec_id: str = "raw",
    log_path=None,
) -> PolicyBundle:
    """Offline CQL training from a transition file or preloaded arrays.

    Per step: seeded uniform minibatch, TD target from the target net,
    Adam on the CQL loss, optional actor step (reusing the pre-update Q
    table as the constant critic), then a soft target update. Logs
    (step, bellman_mse, conservative, mean data-Q) every ``log_every``
    steps. Bit-reproducible per seed on a fixed platform.
    """
    cfg.validate()
    arrays = load_arrays(data) if isinstance(data, (str, bytes)) or hasattr(data, "__fspath__") else data
    n = len(arrays)
    if n == 0:
        raise DomainError("training dataset is empty")
    if np.any(arrays.actions < 0) or np.any(arrays.actions >= N_ACTIONS):
        raise DomainError("dataset contains actions outside 0..26")

    bundle = init_bundle(arrays.state_dim, cfg, codec_id)
    q_params = bundle.q_net.parameters()
    q_adam = AdamState(q_params, lr=cfg.q_lr)
    if cfg.use_actor:
        actor_params = bundle.actor.parameters()
        actor_adam = AdamState(actor_params, lr=cfg.actor_lr)
    sample_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([cfg.seed, 777]))
    )

    f = log = None
    if log_path is not None:
        f = open(log_path, "w", newline="")
        log = csv.writer(f)
        log.writerow(["step", "bellman_mse", "conservative", "mean_q"])
    try:
        for step in range(1, cfg.train_steps + 1):
            idx = sample_rng.integers(0, n, size=cfg.batch_size)
            batch = Batch(
                states=arrays.states[idx],
                actions=arrays.actions[idx],
                rewards=arrays.rewards[idx],
                next_states=arrays.next_states[idx],
                dones=arrays.dones[idx],
            )
            y = td_target(batch, bundle.target_q, cfg.gamma)
            (total, bellman, conservative), grads, q_table = cql_loss_and_grads(
                bundle.q_net, batch, y, cfg.alpha
            )
            adam_step(q_adam, q_params, grads)
            if cfg.use_actor:
                _, a_grads = _actor_loss_given_q(
                    bundle.actor, batch.states, q_table, cfg.entropy_weight
                )
                adam_step(actor_adam, actor_params, a_grads)
            soft_update(bundle.target_q, bundle.q_net, cfg.tau)
            if log is not None and step % cfg.log_every == 0:
                mean_q = float(np.mean(q_table[np.arange(len(batch.states)), batch.actions]))
                log.writerow([step, f"{bellman:.8g}", f"{conservative:.8g}", f"{mean_q:.8g}"])
    finally:
        if f is not None:
            f.close()
    return bundle


def act(bundle: PolicyBundle, x: np.ndarray) -> int:
    """Greedy action: actor logits argmax when present, else Q argmax. Ties -> lowest index."""
    x = np.asarray(x)
    if x.shape[-1] != bundle.input_dim:
        raise DimensionError(f"input dim {x.shape[-1]} != policy input dim {bundle.input_dim}")
    net = bundle.actor if bundle.actor is not None else bundle.q_net
    scores, _ = forward(net, x, need_cache=False)
    return int(np.argmax(scores))


def save_policy(path, bundle: PolicyBundle) -> None:
    nets = {"q": bundle.q_net, "target_q": bundle.target_q}
    if bundle.actor is not None:
        nets["actor"] = bundle.actor
    cfg_dict = asdict(bundle.config)
    cfg_dict["hidden"] = list(bundle.config.hidden)
    save_weights(
        path, nets, kind=KIND_POLICY,
        meta={"codec": bundle.codec_id, "d": bundle.input_dim, "config": cfg_dict},
    )


def load_policy(path) -> PolicyBundle:
    kind, meta, nets = load_weights(path)
    if kind != KIND_POLICY:
        raise DomainError(f"{path}: not a policy file (kind tag {kind})")
    cfg_dict = dict(meta["config"])
    cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    cfg = CqlConfig(**cfg_dict)
    return PolicyBundle(
        q_net=nets["q"],
        target_q=nets["target_q"],
        actor=nets.get("actor"),
        input_dim=int(meta["d"]),
        codec_id=meta["codec"],
        config=cfg,
    )
