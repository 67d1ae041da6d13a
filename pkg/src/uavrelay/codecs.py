"""Observation compressors: PCA, autoencoder, variational autoencoder.

All three map flat observations of dimension d_o to latents of dimension
d_z. Encoding is deterministic for every codec; the VAE samples only
inside its training loss (z = mu + sigma * eps), never at encode time,
so the latent MDP handed to the policy trainer is well defined.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import HEADER_SIZE, DatasetWriter, read_header, record_dtype
from .errors import ConfigError, DimensionError, DomainError
from .learnkit import (
    KIND_AE,
    KIND_PCA,
    KIND_VAE,
    AdamState,
    Mlp,
    adam_step,
    backward,
    forward,
    init_mlp,
    load_weights,
    relu,
    save_weights,
)

DEFAULT_HIDDEN = (512, 128)


@dataclass(frozen=True)
class ReprTrainConfig:
    lr: float = 1e-3
    batch: int = 256
    epochs: int = 20
    beta_kl: float = 1e-3
    seed: int = 0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN

    def validate(self) -> None:
        if self.lr <= 0 or self.batch < 1 or self.epochs < 0 or self.beta_kl < 0:
            raise ConfigError("invalid representation training config")


class PcaCodec:
    """Linear maximum-variance projection with orthonormal components."""

    kind = "pca"

    def __init__(self, mean: np.ndarray, components: np.ndarray, explained_variance: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float32)
        self.components = np.asarray(components, dtype=np.float32)  # (d_z, d_o)
        self.explained_variance = np.asarray(explained_variance, dtype=np.float32)

    @property
    def d_o(self) -> int:
        return self.components.shape[1]

    @property
    def d_z(self) -> int:
        return self.components.shape[0]

    def encode(self, o: np.ndarray) -> np.ndarray:
        o = np.asarray(o)
        return (o - self.mean) @ self.components.T

    def decode(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean


class AeCodec:
    """Deterministic nonlinear embedding (no variational regularization)."""

    kind = "ae"

    def __init__(self, encoder: Mlp, decoder: Mlp, norm_offset: float = 0.0, norm_scale: float = 1.0):
        if encoder.out_dim != decoder.in_dim:
            raise DimensionError(
                f"encoder output {encoder.out_dim} != decoder input {decoder.in_dim}"
            )
        self.encoder = encoder
        self.decoder = decoder
        # Identity unless observations stop being pre-normalized upstream.
        self.norm_offset = norm_offset
        self.norm_scale = norm_scale

    @property
    def d_o(self) -> int:
        return self.encoder.in_dim

    @property
    def d_z(self) -> int:
        return self.encoder.out_dim

    def encode(self, o: np.ndarray) -> np.ndarray:
        x = (np.asarray(o) - self.norm_offset) / self.norm_scale
        z, _ = forward(self.encoder, x, need_cache=False)
        return z

    def decode(self, z: np.ndarray) -> np.ndarray:
        y, _ = forward(self.decoder, np.asarray(z), need_cache=False)
        return y * self.norm_scale + self.norm_offset


class VaeCodec:
    """Gaussian-latent autoencoder; encode() returns the posterior mean.

    The encoder is a rectified trunk whose output feeds two linear heads
    (mu, log sigma^2); the trunk+mu path is architecturally identical to
    the plain autoencoder's encoder.
    """

    kind = "vae"

    def __init__(self, trunk: Mlp, mu_head: Mlp, logvar_head: Mlp, decoder: Mlp, beta_kl: float):
        if mu_head.out_dim != logvar_head.out_dim or mu_head.out_dim != decoder.in_dim:
            raise DimensionError("latent head dims and decoder input must agree")
        if beta_kl < 0:
            raise ConfigError("beta_kl must be >= 0")
        self.trunk = trunk
        self.mu_head = mu_head
        self.logvar_head = logvar_head
        self.decoder = decoder
        self.beta_kl = beta_kl

    @property
    def d_o(self) -> int:
        return self.trunk.in_dim

    @property
    def d_z(self) -> int:
        return self.mu_head.out_dim

    def parameters(self) -> list[np.ndarray]:
        return (
            self.trunk.parameters()
            + self.mu_head.parameters()
            + self.logvar_head.parameters()
            + self.decoder.parameters()
        )

    def encode(self, o: np.ndarray) -> np.ndarray:
        hidden = relu(forward(self.trunk, np.asarray(o), need_cache=False)[0])
        mu, _ = forward(self.mu_head, hidden, need_cache=False)
        return mu

    def decode(self, z: np.ndarray) -> np.ndarray:
        y, _ = forward(self.decoder, np.asarray(z), need_cache=False)
        return y


Codec = PcaCodec | AeCodec | VaeCodec


def encode(codec: Codec, o: np.ndarray) -> np.ndarray:
    """Deterministic latent for a single observation or a batch."""
    o = np.asarray(o)
    want = codec.d_o
    got = o.shape[-1]
    if got != want:
        raise DimensionError(f"observation dim {got} != codec d_o {want}")
    return codec.encode(o)


# -- PCA fitting -------------------------------------------------------------


def fit_pca(states: np.ndarray, d_z: int) -> PcaCodec:
    """Top-d_z eigenvectors of the sample covariance, sign-normalized.

    Covariance is accumulated in float64 over row chunks so arbitrarily
    large datasets fit in memory.
    """
    states = np.asarray(states)
    n, d = states.shape
    if d_z < 1 or d_z > d:
        raise DomainError(f"d_z must be in 1..{d}, got {d_z}")
    if n < d_z + 1:
        raise DomainError(f"need at least d_z+1={d_z + 1} samples, got {n}")
    mean = states.mean(axis=0, dtype=np.float64)
    cov = np.zeros((d, d), dtype=np.float64)
    for at in range(0, n, 4096):
        chunk = states[at : at + 4096].astype(np.float64) - mean
        cov += chunk.T @ chunk
    cov /= n - 1
    cov = (cov + cov.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:d_z]
    components = eigvecs[:, order].T.copy()
    explained = np.maximum(eigvals[order], 0.0)
    for row in components:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return PcaCodec(mean=mean, components=components, explained_variance=explained)


# -- VAE / AE losses and training ---------------------------------------------


def kl_gauss(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, diag(sigma^2)) || N(0, I)) = 0.5 * sum(mu^2 + sigma^2 - logvar - 1)."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(0.5 * np.sum(mu * mu + np.exp(logvar) - logvar - 1.0))


def _kl_rows(mu: np.ndarray, logvar: np.ndarray) -> np.ndarray:
    m = mu.astype(np.float64)
    lv = logvar.astype(np.float64)
    return 0.5 * np.sum(m * m + np.exp(lv) - lv - 1.0, axis=1)


def _vae_forward(codec: VaeCodec, x: np.ndarray, eps: np.ndarray):
    trunk_y, trunk_cache = forward(codec.trunk, x)
    hidden = relu(trunk_y)
    mu, mu_cache = forward(codec.mu_head, hidden)
    logvar, lv_cache = forward(codec.logvar_head, hidden)
    sigma = np.exp(0.5 * logvar)
    z = mu + sigma * eps
    xhat, dec_cache = forward(codec.decoder, z)
    return trunk_y, trunk_cache, mu, mu_cache, logvar, lv_cache, sigma, z, xhat, dec_cache


def vae_loss(codec: VaeCodec, batch: np.ndarray, eps: np.ndarray):
    """(total, recon_mse, kl) of the reparameterized objective on a batch.

    recon is the batch mean of per-sample squared-error sums; kl the batch
    mean of per-sample KL; total = recon + beta_kl * kl.
    """
    losses, _ = vae_loss_and_grads(codec, batch, eps, need_grads=False)
    return losses


def vae_loss_and_grads(codec: VaeCodec, batch: np.ndarray, eps: np.ndarray, need_grads: bool = True):
    """Loss triple plus flat gradients matching ``codec.parameters()``."""
    x = np.atleast_2d(np.asarray(batch))
    eps = np.atleast_2d(np.asarray(eps))
    if x.shape[1] != codec.d_o:
        raise DimensionError(f"batch dim {x.shape[1]} != codec d_o {codec.d_o}")
    if eps.shape != (x.shape[0], codec.d_z):
        raise DimensionError(f"noise shape {eps.shape} != {(x.shape[0], codec.d_z)}")
    b = x.shape[0]
    (trunk_y, trunk_cache, mu, mu_cache, logvar, lv_cache,
     sigma, z, xhat, dec_cache) = _vae_forward(codec, x, eps)

    resid = xhat - x
    recon = float(np.sum(resid.astype(np.float64) ** 2) / b)
    kl = float(np.mean(_kl_rows(mu, logvar)))
    total = recon + codec.beta_kl * kl
    if not need_grads:
        return (total, recon, kl), None

    dxhat = (2.0 / b) * resid
    dec_grads, dz = backward(codec.decoder, dec_cache, dxhat)
    dmu = dz + codec.beta_kl * mu / b
    dlogvar = dz * (0.5 * sigma * eps) + codec.beta_kl * 0.5 * (np.exp(logvar) - 1.0) / b
    mu_grads, dh_mu = backward(codec.mu_head, mu_cache, dmu)
    lv_grads, dh_lv = backward(codec.logvar_head, lv_cache, dlogvar)
    dtrunk_y = (dh_mu + dh_lv) * (trunk_y > 0)
    trunk_grads, _ = backward(codec.trunk, trunk_cache, dtrunk_y, need_input_grad=False)
    grads = trunk_grads + mu_grads + lv_grads + dec_grads
    return (total, recon, kl), grads


def ae_loss_and_grads(codec: AeCodec, batch: np.ndarray, need_grads: bool = True):
    """Reconstruction MSE (per-sample squared-error sums, batch mean) and grads."""
    x = np.atleast_2d(np.asarray(batch))
    if x.shape[1] != codec.d_o:
        raise DimensionError(f"batch dim {x.shape[1]} != codec d_o {codec.d_o}")
    b = x.shape[0]
    z, enc_cache = forward(codec.encoder, x)
    xhat, dec_cache = forward(codec.decoder, z)
    resid = xhat - x
    recon = float(np.sum(resid.astype(np.float64) ** 2) / b)
    if not need_grads:
        return recon, None
    dxhat = (2.0 / b) * resid
    dec_grads, dz = backward(codec.decoder, dec_cache, dxhat)
    enc_grads, _ = backward(codec.encoder, enc_cache, dz, need_input_grad=False)
    return recon, enc_grads + dec_grads


def _derive_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def _init_vae(d_o: int, d_z: int, cfg: ReprTrainConfig) -> VaeCodec:
    hidden = tuple(cfg.hidden)
    s_trunk, s_mu, s_lv, s_dec = _derive_seeds(cfg.seed, 4)
    trunk = init_mlp((d_o, *hidden), s_trunk)
    mu_head = init_mlp((hidden[-1], d_z), s_mu)
    lv_head = init_mlp((hidden[-1], d_z), s_lv)
    decoder = init_mlp((d_z, *reversed(hidden), d_o), s_dec)
    return VaeCodec(trunk, mu_head, lv_head, decoder, beta_kl=cfg.beta_kl)


def _init_ae(d_o: int, d_z: int, cfg: ReprTrainConfig) -> AeCodec:
    hidden = tuple(cfg.hidden)
    s_enc, s_dec = _derive_seeds(cfg.seed, 2)
    encoder = init_mlp((d_o, *hidden, d_z), s_enc)
    decoder = init_mlp((d_z, *reversed(hidden), d_o), s_dec)
    return AeCodec(encoder, decoder)


def _check_train_inputs(states: np.ndarray, d_z: int, cfg: ReprTrainConfig) -> None:
    cfg.validate()
    if states.ndim != 2 or len(states) == 0:
        raise DomainError("training states must be a non-empty (N, d_o) array")
    if d_z >= states.shape[1]:
        raise ConfigError(f"d_z {d_z} must be below d_o {states.shape[1]}")
    if d_z < 1:
        raise ConfigError("d_z must be >= 1")


def _epoch_log_writer(log_path):
    if log_path is None:
        return None, None
    f = open(log_path, "w", newline="")
    w = csv.writer(f)
    w.writerow(["epoch", "recon", "kl"])
    return f, w


def train_vae(states: np.ndarray, d_z: int, cfg: ReprTrainConfig, log_path=None) -> VaeCodec:
    """Minibatch Adam on the VAE objective; deterministic per cfg.seed."""
    states = np.asarray(states, dtype=np.float32)
    _check_train_inputs(states, d_z, cfg)
    codec = _init_vae(states.shape[1], d_z, cfg)
    params = codec.parameters()
    adam = AdamState(params, lr=cfg.lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 101])))
    eps_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 202])))
    n = len(states)
    f, log = _epoch_log_writer(log_path)
    try:
        for epoch in range(cfg.epochs):
            perm = shuffle_rng.permutation(n)
            recon_sum = kl_sum = 0.0
            for at in range(0, n, cfg.batch):
                idx = perm[at : at + cfg.batch]
                x = states[idx]
                eps = eps_rng.standard_normal((len(idx), d_z)).astype(np.float32)
                (total, recon, kl), grads = vae_loss_and_grads(codec, x, eps)
                adam_step(adam, params, grads)
                recon_sum += recon * len(idx)
                kl_sum += kl * len(idx)
            if log is not None:
                log.writerow([epoch, f"{recon_sum / n:.8g}", f"{kl_sum / n:.8g}"])
    finally:
        if f is not None:
            f.close()
    return codec


def train_ae(states: np.ndarray, d_z: int, cfg: ReprTrainConfig, log_path=None) -> AeCodec:
    """Minibatch Adam on reconstruction MSE only; deterministic per cfg.seed."""
    states = np.asarray(states, dtype=np.float32)
    _check_train_inputs(states, d_z, cfg)
    codec = _init_ae(states.shape[1], d_z, cfg)
    params = codec.encoder.parameters() + codec.decoder.parameters()
    adam = AdamState(params, lr=cfg.lr)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 101])))
    n = len(states)
    f, log = _epoch_log_writer(log_path)
    try:
        for epoch in range(cfg.epochs):
            perm = shuffle_rng.permutation(n)
            recon_sum = 0.0
            for at in range(0, n, cfg.batch):
                idx = perm[at : at + cfg.batch]
                recon, grads = ae_loss_and_grads(codec, states[idx])
                adam_step(adam, params, grads)
                recon_sum += recon * len(idx)
            if log is not None:
                log.writerow([epoch, f"{recon_sum / n:.8g}", "0"])
    finally:
        if f is not None:
            f.close()
    return codec


# -- dataset encoding ----------------------------------------------------------


def encode_dataset(codec: Codec, in_path, out_path) -> dict:
    """Re-emit a dataset with states replaced by latents (actions/rewards/done verbatim)."""
    count, state_dim = read_header(in_path)
    if state_dim != codec.d_o:
        raise DimensionError(f"dataset state_dim {state_dim} != codec d_o {codec.d_o}")
    in_dtype = record_dtype(state_dim)
    out_dtype = record_dtype(codec.d_z)
    with open(in_path, "rb") as f:
        f.seek(HEADER_SIZE)
        with DatasetWriter(out_path, codec.d_z) as writer:
            at = 0
            while at < count:
                n = min(count - at, 4096)
                chunk = np.frombuffer(f.read(n * in_dtype.itemsize), dtype=in_dtype)
                out = np.empty(n, dtype=out_dtype)
                out["state"] = encode(codec, np.ascontiguousarray(chunk["state"])).astype(np.float32)
                out["next_state"] = encode(codec, np.ascontiguousarray(chunk["next_state"])).astype(np.float32)
                out["action"] = chunk["action"]
                out["reward"] = chunk["reward"]
                out["done"] = chunk["done"]
                writer.write_batch(out)
                at += n
    return {"transitions": count, "d_z": codec.d_z}


# -- persistence ----------------------------------------------------------------


def save_codec(path, codec: Codec) -> None:
    if isinstance(codec, PcaCodec):
        save_weights(
            path,
            {"mean": codec.mean, "components": codec.components},
            kind=KIND_PCA,
            meta={
                "d_o": codec.d_o,
                "d_z": codec.d_z,
                "explained_variance": [float(v) for v in codec.explained_variance],
            },
        )
    elif isinstance(codec, AeCodec):
        save_weights(
            path,
            {"encoder": codec.encoder, "decoder": codec.decoder},
            kind=KIND_AE,
            meta={
                "d_o": codec.d_o,
                "d_z": codec.d_z,
                "norm_offset": codec.norm_offset,
                "norm_scale": codec.norm_scale,
            },
        )
    elif isinstance(codec, VaeCodec):
        save_weights(
            path,
            {
                "trunk": codec.trunk,
                "mu_head": codec.mu_head,
                "logvar_head": codec.logvar_head,
                "decoder": codec.decoder,
            },
            kind=KIND_VAE,
            meta={"d_o": codec.d_o, "d_z": codec.d_z, "beta_kl": codec.beta_kl},
        )
    else:
        raise ConfigError(f"unknown codec type {type(codec)!r}")


def load_codec(path) -> Codec:
    kind, meta, nets = load_weights(path)
    if kind == KIND_PCA:
        return PcaCodec(
            mean=nets["mean"],
            components=nets["components"],
            explained_variance=np.asarray(meta.get("explained_variance", []), dtype=np.float32),
        )
    if kind == KIND_AE:
        return AeCodec(
            nets["encoder"], nets["decoder"],
            norm_offset=meta.get("norm_offset", 0.0),
            norm_scale=meta.get("norm_scale", 1.0),
        )
    if kind == KIND_VAE:
        return VaeCodec(
            nets["trunk"], nets["mu_head"], nets["logvar_head"], nets["decoder"],
            beta_kl=meta["beta_kl"],
        )
    raise DomainError(f"{path}: not a codec file (kind tag {kind})")
