"""Small variational autoencoder over trajectory sets.

Maps N-dimensional trajectories to a 2D latent space and back. Encoder and
decoder are tanh MLPs trained with Adam on the usual two-term objective:
a fixed-scale Gaussian reconstruction negative log-likelihood plus the
closed-form KL between the encoder Gaussian and a standard normal. All
math is explicit numpy so gradients can be checked against finite
differences and training is bit-reproducible from a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError, ShapeError, TrainingDivergedError
from .nn import Adam, uniform_fanin_init
from .trajectory import Trajectory, TrajectorySet

LATENT_DIM = 2


@dataclass(frozen=True)
class LatentPoint:
    z1: float
    z2: float

    def __post_init__(self):
        if not (math.isfinite(self.z1) and math.isfinite(self.z2)):
            raise InvalidSpecError(f"latent coordinates must be finite, got ({self.z1}, {self.z2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.z1, self.z2])


@dataclass(frozen=True)
class TvaeConfig:
    input_dim: int
    hidden_sizes: tuple[int, ...] = (64, 64)
    decoder_sigma: float = 0.3
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int | None = None  # None: full batch up to 512 rows, else 128
    seed: int = 0
    latent_dim: int = LATENT_DIM

    def __post_init__(self):
        if self.latent_dim != LATENT_DIM:
            raise InvalidSpecError("latent_dim is fixed at 2")
        if self.input_dim < 1:
            raise InvalidSpecError(f"input_dim must be positive, got {self.input_dim}")
        if self.decoder_sigma <= 0:
            raise InvalidSpecError(f"decoder_sigma must be positive, got {self.decoder_sigma}")
        if any(h < 1 for h in self.hidden_sizes):
            raise InvalidSpecError(f"hidden sizes must be positive, got {self.hidden_sizes}")


@dataclass
class TvaeModel:
    """MLP encoder/decoder parameter bundle; immutable once trained."""

    config: TvaeConfig
    params: dict[str, np.ndarray]


@dataclass
class TrainReport:
    total: list[float] = field(default_factory=list)
    recon: list[float] = field(default_factory=list)
    kl: list[float] = field(default_factory=list)


def _layer_sizes(config: TvaeConfig) -> tuple[list[int], list[int]]:
    enc = [config.input_dim, *config.hidden_sizes, 2 * config.latent_dim]
    dec = [config.latent_dim, *reversed(config.hidden_sizes), config.input_dim]
    return enc, dec


def init_model(config: TvaeConfig, seed: int) -> TvaeModel:
    """Fresh model with fan-in-scaled uniform weights and zero biases.

    Layers are drawn in a fixed order (encoder first), so the result is a
    pure function of (config, seed).
    """
    rng = np.random.default_rng(seed)
    enc_sizes, dec_sizes = _layer_sizes(config)
    params: dict[str, np.ndarray] = {}
    for prefix, sizes in (("enc", enc_sizes), ("dec", dec_sizes)):
        for i in range(len(sizes) - 1):
            params[f"{prefix}_W{i}"] = uniform_fanin_init(rng, sizes[i], sizes[i + 1])
            params[f"{prefix}_b{i}"] = np.zeros(sizes[i + 1])
    return TvaeModel(config=config, params=params)


def _mlp_forward(params, prefix: str, x: np.ndarray, n_layers: int):
    """Tanh MLP with a linear final layer. Returns (hidden activations, output)."""
    hidden = []
    h = x
    for i in range(n_layers - 1):
        h = np.tanh(h @ params[f"{prefix}_W{i}"] + params[f"{prefix}_b{i}"])
        hidden.append(h)
    out = h @ params[f"{prefix}_W{n_layers - 1}"] + params[f"{prefix}_b{n_layers - 1}"]
    return hidden, out


def _mlp_backward(params, prefix: str, x, hidden, d_out, n_layers: int, grads):
    """Accumulate layer gradients into `grads`; returns gradient w.r.t. x."""
    delta = d_out
    for i in range(n_layers - 1, -1, -1):
        inp = x if i == 0 else hidden[i - 1]
        grads[f"{prefix}_W{i}"] = inp.T @ delta
        grads[f"{prefix}_b{i}"] = delta.sum(axis=0)
        delta = delta @ params[f"{prefix}_W{i}"].T
        if i > 0:
            delta = delta * (1.0 - hidden[i - 1] ** 2)
    return delta


def _encode_batch(model: TvaeModel, x: np.ndarray):
    n_layers = len(model.config.hidden_sizes) + 1
    hidden, out = _mlp_forward(model.params, "enc", x, n_layers)
    k = model.config.latent_dim
    return hidden, out[:, :k], out[:, k:]


def _decode_batch(model: TvaeModel, z: np.ndarray):
    n_layers = len(model.config.hidden_sizes) + 1
    return _mlp_forward(model.params, "dec", z, n_layers)


def loss_parts(model: TvaeModel, batch: np.ndarray, eps: np.ndarray):
    """(total, recon, kl) for a fixed reparameterization draw `eps`.

    recon is the Gaussian NLL of the batch under the decoder mean with
    fixed scale decoder_sigma, including its additive constant, averaged
    over the batch. kl uses expm1 so the analytic non-negativity survives
    floating point.
    """
    sigma2 = model.config.decoder_sigma ** 2
    d = model.config.input_dim
    _, mu, logvar = _encode_batch(model, batch)
    z = mu + np.exp(0.5 * logvar) * eps
    _, xhat = _decode_batch(model, z)
    sq = np.sum((batch - xhat) ** 2, axis=1)
    recon = float(np.mean(sq / (2.0 * sigma2)) + 0.5 * d * math.log(2.0 * math.pi * sigma2))
    kl_terms = 0.5 * (mu ** 2 + (np.expm1(logvar) - logvar))
    kl = float(np.mean(np.sum(kl_terms, axis=1)))
    return recon + kl, recon, kl


def loss_and_grads(model: TvaeModel, batch: np.ndarray, eps: np.ndarray):
    """Loss parts plus analytic parameter gradients for the same draw."""
    cfg = model.config
    params = model.params
    sigma2 = cfg.decoder_sigma ** 2
    b, d = batch.shape
    n_layers = len(cfg.hidden_sizes) + 1

    enc_hidden, enc_out = _mlp_forward(params, "enc", batch, n_layers)
    k = cfg.latent_dim
    mu, logvar = enc_out[:, :k], enc_out[:, k:]
    std = np.exp(0.5 * logvar)
    z = mu + std * eps
    dec_hidden, xhat = _mlp_forward(params, "dec", z, n_layers)

    sq = np.sum((batch - xhat) ** 2, axis=1)
    recon = float(np.mean(sq / (2.0 * sigma2)) + 0.5 * d * math.log(2.0 * math.pi * sigma2))
    kl_terms = 0.5 * (mu ** 2 + (np.expm1(logvar) - logvar))
    kl = float(np.mean(np.sum(kl_terms, axis=1)))

    grads: dict[str, np.ndarray] = {}
    d_xhat = (xhat - batch) / (sigma2 * b)
    d_z = _mlp_backward(params, "dec", z, dec_hidden, d_xhat, n_layers, grads)
    d_mu = d_z + mu / b
    d_logvar = d_z * 0.5 * std * eps + 0.5 * (np.exp(logvar) - 1.0) / b
    d_enc_out = np.concatenate([d_mu, d_logvar], axis=1)
    _mlp_backward(params, "enc", batch, enc_hidden, d_enc_out, n_layers, grads)
    return recon + kl, recon, kl, grads


def elbo_loss(model: TvaeModel, batch: np.ndarray, rng: np.random.Generator):
    """(total, recon, kl) with a single reparameterization sample per row."""
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[1] != model.config.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns, model expects {model.config.input_dim}"
        )
    eps = rng.standard_normal((batch.shape[0], model.config.latent_dim))
    return loss_parts(model, batch, eps)


def _batch_plan(n: int, batch_size: int | None) -> int:
    if batch_size is not None:
        return max(1, min(batch_size, n))
    return n if n <= 512 else 128


def train(model: TvaeModel, tset: TrajectorySet, config: TvaeConfig) -> tuple[TvaeModel, TrainReport]:
    """Adam-train a copy of `model` for config.epochs passes over the set.

    Raises TrainingDivergedError (with the epoch index) on a non-finite
    loss. Reproducible: the training stream is seeded from config.seed.
    """
    x = tset.as_matrix()
    if x.shape[1] != config.input_dim:
        raise ShapeError(f"set has n_epochs={x.shape[1]}, config expects {config.input_dim}")
    trained = TvaeModel(config=config, params={k: v.copy() for k, v in model.params.items()})
    report = TrainReport()
    if config.epochs == 0:
        return trained, report

    rng = np.random.default_rng(config.seed)
    opt = Adam(trained.params, lr=config.learning_rate)
    n = x.shape[0]
    bs = _batch_plan(n, config.batch_size)
    for epoch in range(config.epochs):
        order = np.arange(n) if bs >= n else rng.permutation(n)
        tot_sum = rec_sum = kl_sum = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            batch = x[idx]
            eps = rng.standard_normal((batch.shape[0], config.latent_dim))
            total, recon, kl, grads = loss_and_grads(trained, batch, eps)
            if not math.isfinite(total):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            opt.step(grads)
            w = batch.shape[0]
            tot_sum += total * w
            rec_sum += recon * w
            kl_sum += kl * w
        report.total.append(tot_sum / n)
        report.recon.append(rec_sum / n)
        report.kl.append(kl_sum / n)
        assert report.kl[-1] >= 0.0
    return trained, report


def encode(model: TvaeModel, t: Trajectory) -> tuple[LatentPoint, np.ndarray]:
    """Posterior mean and per-dimension variance for one trajectory (no sampling)."""
    if t.n_epochs != model.config.input_dim:
        raise ShapeError(f"trajectory length {t.n_epochs} != input_dim {model.config.input_dim}")
    _, mu, logvar = _encode_batch(model, t.values[None, :])
    return LatentPoint(float(mu[0, 0]), float(mu[0, 1])), np.exp(logvar[0])


def encode_means(model: TvaeModel, tset: TrajectorySet) -> np.ndarray:
    """(n, 2) posterior means for every trajectory in the set."""
    _, mu, _ = _encode_batch(model, tset.as_matrix())
    return mu


def decode(model: TvaeModel, z: LatentPoint) -> Trajectory:
    """Decoder mean at `z` as a trajectory (pure function of (model, z))."""
    _, xhat = _decode_batch(model, z.as_array()[None, :])
    return Trajectory(xhat[0])


def decode_grid(model: TvaeModel, zs: np.ndarray) -> np.ndarray:
    """Decoder means for an (n, 2) array of latent points, as an (n, input_dim) matrix."""
    _, xhat = _decode_batch(model, np.asarray(zs, dtype=np.float64))
    return xhat


# ---------------------------------------------------------------------------
# Checkpoints: JSON with the config and full-precision parameter arrays;
# loading restores bit-equivalent encode/decode behavior.


def save_checkpoint(model: TvaeModel, path) -> None:
    doc = {
        "config": {
            "input_dim": model.config.input_dim,
            "hidden_sizes": list(model.config.hidden_sizes),
            "decoder_sigma": model.config.decoder_sigma,
            "learning_rate": model.config.learning_rate,
            "epochs": model.config.epochs,
            "batch_size": model.config.batch_size,
            "seed": model.config.seed,
            "latent_dim": model.config.latent_dim,
        },
        "params": {k: v.tolist() for k, v in model.params.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> TvaeModel:
    with open(path) as fh:
        doc = json.load(fh)
    c = doc["config"]
    config = TvaeConfig(
        input_dim=int(c["input_dim"]),
        hidden_sizes=tuple(int(h) for h in c["hidden_sizes"]),
        decoder_sigma=float(c["decoder_sigma"]),
        learning_rate=float(c["learning_rate"]),
        epochs=int(c["epochs"]),
        batch_size=None if c.get("batch_size") is None else int(c["batch_size"]),
        seed=int(c["seed"]),
    )
    params = {k: np.array(v, dtype=np.float64) for k, v in doc["params"].items()}
    return TvaeModel(config=config, params=params)

