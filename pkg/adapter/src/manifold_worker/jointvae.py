"""Small joint VAE: a continuous latent plus a categorical class latent.

Per training cycle i the continuous KL term is scaled by the supplied
schedule value beta_c[i] while the categorical KL (against a uniform
prior) is scaled by the constant beta_d. After training, one image grid
per class is produced by traversing the continuous latent with the class
one-hot pinned.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import WorkerConfig

GUMBEL_TAU = 0.67


class JointVae(nn.Module):
    def __init__(self, image_size: int, n_classes: int, continuous_dim: int, hidden: int):
        super().__init__()
        d = image_size * image_size
        self.image_size = image_size
        self.n_classes = n_classes
        self.continuous_dim = continuous_dim
        self.encoder = nn.Sequential(nn.Linear(d, hidden), nn.ReLU(),
                                     nn.Linear(hidden, hidden), nn.ReLU())
        self.head_mu = nn.Linear(hidden, continuous_dim)
        self.head_logvar = nn.Linear(hidden, continuous_dim)
        self.head_logits = nn.Linear(hidden, n_classes)
        self.decoder = nn.Sequential(
            nn.Linear(continuous_dim + n_classes, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, d),
        )

    def encode(self, x):
        h = self.encoder(x.flatten(1))
        return self.head_mu(h), self.head_logvar(h), self.head_logits(h)

    def decode(self, z_c, class_probs):
        out = self.decoder(torch.cat([z_c, class_probs], dim=1))
        return out.view(-1, self.image_size, self.image_size)


def _losses(model: JointVae, batch, config: WorkerConfig):
    mu, logvar, logits = model.encode(batch)
    z_c = mu + torch.exp(0.5 * logvar) * torch.randn_like(mu)
    probs = F.gumbel_softmax(logits, tau=GUMBEL_TAU, hard=False)
    raw = model.decode(z_c, probs)

    if config.decoder == "bernoulli":
        recon = F.binary_cross_entropy_with_logits(
            raw.flatten(1), batch.flatten(1), reduction="none").sum(1).mean()
    else:
        mean = torch.sigmoid(raw)
        recon = ((batch - mean) ** 2).flatten(1).sum(1).mean() \
            / (2.0 * config.decoder_sigma ** 2)

    kl_c = 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar).sum(1).mean()
    q = F.softmax(logits, dim=1)
    log_q = F.log_softmax(logits, dim=1)
    kl_d = (q * (log_q + np.log(model.n_classes))).sum(1).mean()
    return recon, kl_c, kl_d


def train_joint_vae(beta_schedule: np.ndarray, config: WorkerConfig,
                    images: np.ndarray) -> JointVae:
    """Train for len(beta_schedule) cycles; deterministic given config.seed."""
    torch.manual_seed(config.seed)
    torch.set_num_threads(1)
    model = JointVae(config.image_size, config.n_classes,
                     config.continuous_dim, config.hidden)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    data = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    n = data.shape[0]
    generator = torch.Generator().manual_seed(config.seed)
    for cycle, beta_c in enumerate(beta_schedule):
        order = torch.randperm(n, generator=generator)
        for start in range(0, n, config.batch_size):
            batch = data[order[start:start + config.batch_size]]
            recon, kl_c, kl_d = _losses(model, batch, config)
            loss = recon + float(beta_c) * kl_c + config.beta_d * kl_d
            if not torch.isfinite(loss):
                raise RuntimeError(f"training diverged at cycle {cycle}")
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


@torch.no_grad()
def manifold_grids(model: JointVae, config: WorkerConfig) -> list[dict]:
    """Per-class latent traversal decoded to images, wire-format entries.

    The continuous latent is swept over a grid_rows x grid_cols lattice in
    [-traversal_range, traversal_range]^2 with the class one-hot pinned;
    pixels are sigmoid outputs in [0, 1].
    """
    model.eval()
    r, c = config.grid_rows, config.grid_cols
    z1 = np.linspace(-config.traversal_range, config.traversal_range, r)
    z2 = np.linspace(-config.traversal_range, config.traversal_range, c)
    g1, g2 = np.meshgrid(z1, z2, indexing="ij")
    z_np = np.zeros((r * c, config.continuous_dim), dtype=np.float32)
    z_np[:, 0] = g1.ravel()
    z_np[:, 1] = g2.ravel()
    z = torch.from_numpy(z_np)
    entries = []
    for class_id in range(config.n_classes):
        onehot = torch.zeros((r * c, config.n_classes))
        onehot[:, class_id] = 1.0
        images = torch.sigmoid(model.decode(z, onehot)).numpy().astype(np.float64)
        entries.append({
            "class_id": class_id, "rows": r, "cols": c,
            "h": config.image_size, "w": config.image_size,
            "pixels": [float(v) for v in images.ravel()],
        })
    return entries
