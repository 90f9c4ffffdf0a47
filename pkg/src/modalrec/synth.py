"""Synthetic multi-task suites for desk-scale transfer experiments.

Each task draws item latent factors from cluster centers that interpolate
between one shared draw and a task-specific draw, controlled by
shared_structure in [0, 1]:

    center_k(c)  = s * shared_center(c) + (1 - s) * task_center_k(c)

The same interpolation is applied to the modality mixing matrices, the
price affine map and the cluster transition matrix, so at s = 1 every task
generates from an identical distribution (probe accuracy approaches chance)
and at s = 0 tasks are fully separated.

Modalities are complementary, not redundant: the latent space is split in
half, text mixes only the first half and image only the second, and the
four clusters are laid out on a 2x2 grid whose row is visible only in the
text half and whose column only in the image half. Prices are an affine map
of the first latent coordinate. Dropping any modality therefore loses real
cluster information instead of freeing the model from a duplicate input.

User sequences are first-order Markov walks over clusters with a mild
popularity skew inside each cluster, which gives a self-attention model a
learnable next-item signal. The last generated task is marked role=target,
the others auxiliary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import write_embedding_file
from .errors import ConfigError

N_CLUSTERS = 4
JITTER_SCALE = 0.5
CENTER_SCALE = 3.0


@dataclass
class SynthConfig:
    n_tasks: int = 4
    n_items_per_task: int = 200
    n_users_per_task: int = 200
    latent_dim: int = 8
    shared_structure: float = 0.8
    seq_len_range: tuple[int, int] = (6, 24)
    d_text: int = 16
    d_image: int = 16
    noise_scale: float = 0.1
    seed: int = 0

    def validate(self):
        for name in ("n_tasks", "n_items_per_task", "n_users_per_task",
                     "latent_dim", "d_text", "d_image"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.latent_dim < 2:
            raise ConfigError("latent_dim must be >= 2 (split across modalities)")
        if not 0.0 <= self.shared_structure <= 1.0:
            raise ConfigError("shared_structure must be in [0, 1]")
        lo, hi = self.seq_len_range
        if lo < 3 or hi < lo:
            raise ConfigError("seq_len_range must satisfy 3 <= min <= max")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")


def _transition_matrix(rng) -> np.ndarray:
    """Row-stochastic matrix with one dominant next-cluster per cluster."""
    mat = np.full((N_CLUSTERS, N_CLUSTERS), 0.3 / (N_CLUSTERS - 1))
    favored = rng.permutation(N_CLUSTERS)
    for c in range(N_CLUSTERS):
        mat[c, favored[c]] = 0.7
    return mat


def generate_synthetic_suite(cfg: SynthConfig, out_dir) -> list[Path]:
    """Write cfg.n_tasks task directories under out_dir; returns their paths."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    s = cfg.shared_structure
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    half = cfg.latent_dim // 2  # text sees [0, half), image sees [half, L)
    rest = cfg.latent_dim - half

    def center_bank(r):
        # 2 text-half patterns (cluster row) and 2 image-half patterns (column)
        return (r.normal(0.0, CENTER_SCALE, (2, half)),
                r.normal(0.0, CENTER_SCALE, (2, rest)))

    def grid_centers(text_bank, image_bank):
        centers = np.zeros((N_CLUSTERS, cfg.latent_dim))
        for c in range(N_CLUSTERS):
            centers[c, :half] = text_bank[c // 2]
            centers[c, half:] = image_bank[c % 2]
        return centers

    shared_centers = grid_centers(*center_bank(rng))
    shared_mix_t = rng.normal(0.0, 1.0 / np.sqrt(half), (half, cfg.d_text))
    shared_mix_m = rng.normal(0.0, 1.0 / np.sqrt(rest), (rest, cfg.d_image))
    shared_trans = _transition_matrix(rng)
    shared_offset, shared_scale = 50.0, 1.5
    # well-separated per-task price params so s=0 tasks differ decisively
    task_offsets = rng.permutation(np.linspace(10.0, 90.0, cfg.n_tasks))
    task_scales = rng.permutation(np.linspace(0.8, 2.2, cfg.n_tasks))

    paths = []
    for k in range(cfg.n_tasks):
        task_centers = grid_centers(*center_bank(rng))
        task_mix_t = rng.normal(0.0, 1.0 / np.sqrt(half), (half, cfg.d_text))
        task_mix_m = rng.normal(0.0, 1.0 / np.sqrt(rest), (rest, cfg.d_image))
        task_trans = _transition_matrix(rng)

        centers = s * shared_centers + (1 - s) * task_centers
        mix_t = s * shared_mix_t + (1 - s) * task_mix_t
        mix_m = s * shared_mix_m + (1 - s) * task_mix_m
        trans = s * shared_trans + (1 - s) * task_trans
        offset = s * shared_offset + (1 - s) * task_offsets[k]
        scale = s * shared_scale + (1 - s) * task_scales[k]

        n = cfg.n_items_per_task
        clusters = np.arange(n) % N_CLUSTERS
        latents = centers[clusters] + rng.normal(0.0, JITTER_SCALE, (n, cfg.latent_dim))
        text = latents[:, :half] @ mix_t + cfg.noise_scale * rng.standard_normal((n, cfg.d_text))
        image = latents[:, half:] @ mix_m + cfg.noise_scale * rng.standard_normal((n, cfg.d_image))
        prices = np.maximum(
            0.0, offset + scale * latents[:, 0] + cfg.noise_scale * rng.standard_normal(n)
        )

        item_ids = k * 1_000_000 + np.arange(n)
        by_cluster = [item_ids[clusters == c] for c in range(N_CLUSTERS)]
        # popularity skew inside a cluster: probability ~ 1/(1 + rank)
        pop = [1.0 / (1.0 + np.arange(len(ids))) for ids in by_cluster]
        pop = [w / w.sum() for w in pop]

        lo, hi = cfg.seq_len_range
        lines = []
        for u in range(cfg.n_users_per_task):
            length = int(rng.integers(lo, hi + 1))
            c = int(rng.integers(N_CLUSTERS))
            user = f"u{u:05d}"
            for t in range(length):
                item = int(rng.choice(by_cluster[c], p=pop[c]))
                lines.append(f"{user}\t{item}\t{t}")
                c = int(rng.choice(N_CLUSTERS, p=trans[c]))

        task_dir = out_dir / f"task{k:02d}"
        task_dir.mkdir(exist_ok=True)
        with open(task_dir / "items.tsv", "w") as f:
            f.write("item_id\tprice\n")
            for i, item in enumerate(item_ids):
                f.write(f"{int(item)}\t{float(prices[i])!r}\n")
        with open(task_dir / "interactions.tsv", "w") as f:
            f.write("user_id\titem_id\ttimestamp\n")
            f.write("\n".join(lines) + "\n")
        write_embedding_file(
            task_dir / "text.emb", cfg.d_text,
            {int(i): text[row].astype(np.float32) for row, i in enumerate(item_ids)},
        )
        write_embedding_file(
            task_dir / "image.emb", cfg.d_image,
            {int(i): image[row].astype(np.float32) for row, i in enumerate(item_ids)},
        )
        role = "target" if k == cfg.n_tasks - 1 else "auxiliary"
        meta = {"task_id": f"task{k:02d}", "role": role}
        (task_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        paths.append(task_dir)
    return paths
