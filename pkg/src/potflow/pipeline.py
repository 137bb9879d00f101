"""Image embedding pipeline: IDX ingestion, PCA, PGM export.

The translation experiment runs in PCA space: images are embedded into a
k-dimensional Euclidean space where squared distance quantifies visual
similarity, the flow is trained on embeddings, and outputs are
reconstructed back to images for export.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    """Malformed IDX container."""


@dataclass
class ImageSet:
    images: np.ndarray  # (N, rows, cols) float64 in [0, 1]
    labels: np.ndarray  # (N,) uint8

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise IdxError(f"{self.images.shape[0]} images but "
                           f"{self.labels.shape[0]} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise IdxError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def pixel_dim(self) -> int:
        return int(self.images.shape[1] * self.images.shape[2])

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)


def _read_exact(f, count: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxError(f"truncated file: expected {count} bytes for {what}, "
                       f"got {len(data)}")
    return data


def load_idx(images_path, labels_path) -> ImageSet:
    """Parse the big-endian IDX pair; pixels are scaled by 1/255."""
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "image magic"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxError(f"bad image magic 0x{magic:08x}, "
                           f"expected 0x{IDX_IMAGES_MAGIC:08x}")
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12,
                                                              "image dimensions"))
        raw = _read_exact(f, count * rows * cols, f"{count} images")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "label magic"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxError(f"bad label magic 0x{magic:08x}, "
                           f"expected 0x{IDX_LABELS_MAGIC:08x}")
        (lcount,) = struct.unpack(">I", _read_exact(f, 4, "label count"))
        labels = np.frombuffer(_read_exact(f, lcount, f"{lcount} labels"),
                               dtype=np.uint8)
    if count != lcount:
        raise IdxError(f"count mismatch: {count} images vs {lcount} labels")
    return ImageSet(images.astype(np.float64) / 255.0, labels.copy())


def write_idx(images: np.ndarray, labels: np.ndarray, images_path,
              labels_path) -> None:
    """Inverse of :func:`load_idx` (fixtures and synthetic datasets)."""
    images = np.asarray(images)
    n, rows, cols = images.shape
    q = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(q.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


# -- PCA -------------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray         # (D,)
    components: np.ndarray   # (k, D), row-orthonormal, descending eigenvalue
    eigenvalues: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def fit_pca(data, k: int) -> PcaModel:
    """Top-k eigenvectors of the sample covariance.

    ``data`` is an ImageSet or an (N, D) array.  Components carry a
    deterministic sign: the entry of largest magnitude is positive.
    """
    X = data.flat() if isinstance(data, ImageSet) else np.atleast_2d(data)
    n, D = X.shape
    if k > min(n, D):
        raise ValueError(f"k={k} exceeds min(samples, dim) = {min(n, D)}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / n
    w, V = np.linalg.eigh(cov)           # ascending
    order = np.argsort(w, kind="stable")[::-1][:k]
    comps = V[:, order].T.copy()
    eigs = np.clip(w[order], 0.0, None)
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=comps, eigenvalues=eigs)


def embed(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """(…, D) pixels -> (…, k) codes."""
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, model.dim) if x.ndim > 1 else x.reshape(1, -1)
    codes = (flat - model.mean) @ model.components.T
    return codes if x.ndim > 1 else codes[0]


def reconstruct(model: PcaModel, code: np.ndarray) -> np.ndarray:
    """(…, k) codes -> (…, D) pixels, unclipped (clip only at export)."""
    code = np.asarray(code, dtype=np.float64)
    flat = code.reshape(-1, model.k) if code.ndim > 1 else code.reshape(1, -1)
    out = flat @ model.components + model.mean
    return out if code.ndim > 1 else out[0]


def save_pca(model: PcaModel, path) -> None:
    nn._write_container(path, "pca-model",
                        {"k": model.k, "dim": model.dim},
                        {"mean": model.mean,
                         "components": model.components.reshape(-1),
                         "eigenvalues": model.eigenvalues})


def load_pca(path) -> PcaModel:
    _, header, arrays = nn._read_container(path, expect_kind="pca-model")
    k, dim = int(header["k"]), int(header["dim"])
    return PcaModel(mean=arrays["mean"],
                    components=arrays["components"].reshape(k, dim),
                    eigenvalues=arrays["eigenvalues"])


# -- PGM export --------------------------------------------------------------------


def export_pgm(image: np.ndarray, path) -> None:
    """Binary PGM (P5), maxval 255; out-of-range pixels clip."""
    img = np.asarray(image, dtype=np.float64)
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(q.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    w, h, maxval = (int(v) for v in fields)
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1
    pixels = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError("truncated PGM payload")
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def export_pgm_grid(images: list[np.ndarray], path, cols: int | None = None,
                    pad: int = 2) -> None:
    """Tile images (all same shape) into one PGM, row-major."""
    n = len(images)
    cols = cols or n
    rows = (n + cols - 1) // cols
    h, w = images[0].shape
    canvas = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        canvas[r * (h + pad):r * (h + pad) + h,
               c * (w + pad):c * (w + pad) + w] = img
    export_pgm(canvas, path)


# -- digit translation experiment ----------------------------------------------------


def split_clusters(data: ImageSet) -> tuple[ImageSet, ImageSet]:
    """Digits 0-4 as the source cluster, 5-9 as the target cluster."""
    low = data.labels <= 4
    return (ImageSet(data.images[low], data.labels[low]),
            ImageSet(data.images[~low], data.labels[~low]))


def translate_digits(images_path, labels_path, out_dir, k: int = 100,
                     steps: int = 10000, seed: int = 0,
                     pca_model_path=None, n_flow_steps: int = 10,
                     hidden_layers: int = 3, hidden_width: int = 128,
                     batch_size: int = 256, lr: float = 1e-4,
                     lambda_hj: float = 1.0, n_show: int = 16,
                     overrides: dict | None = None) -> dict:
    """Train an image-to-image transport map in PCA space and export
    side-by-side reconstructions.

    Returns a summary dict including the sliced Wasserstein distance
    between mapped source embeddings and target embeddings at
    initialization and after training.
    """
    import json
    from pathlib import Path

    from . import problems
    from .trainer import (RunConfig, build_generator, evaluate_generator,
                          generator_map, train)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_idx(images_path, labels_path)
    if len(data) < 10:
        raise IdxError("dataset too small to split into clusters")
    if pca_model_path is not None:
        model = load_pca(pca_model_path)
    else:
        model = fit_pca(data, k)   # pooled over both clusters
        save_pca(model, out / "pca_model.bin")
    mu_set, nu_set = split_clusters(data)
    codes_mu = embed(model, mu_set.flat())
    codes_nu = embed(model, nu_set.flat())

    def make_sampler(codes):
        def sample(n, rng):
            return codes[rng.integers(0, codes.shape[0], size=n)]
        return sample

    prob = problems.ProblemSpec(
        name="digit-embedding", dim=model.k,
        sample_mu=make_sampler(codes_mu), sample_nu=make_sampler(codes_nu))

    cfg_dict = dict(
        problem="digit-embedding", generator="continuous-pfg", loss="wgan-gp",
        lambda_hj=lambda_hj, n_steps=n_flow_steps, total_time=1.0,
        hidden_layers=hidden_layers, hidden_width=hidden_width,
        disc_hidden_layers=hidden_layers, disc_hidden_width=hidden_width,
        batch_size=batch_size, steps=steps, lr=lr, beta1=0.5, beta2=0.9,
        train_set_size=min(40000, max(len(mu_set), len(nu_set))),
        eval_samples=2000, eval_every=0, checkpoint_every=0, seed=seed)
    if overrides:
        cfg_dict.update(overrides)
    cfg = RunConfig.from_dict(cfg_dict)

    init_gen = build_generator(cfg, prob.dim)
    init_report = evaluate_generator(init_gen, prob, cfg.eval_samples,
                                     seed, num_projections=cfg.num_projections)
    report = train(cfg, out / "run", problem=prob)

    # export a sample of source images next to their translations
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.choice(len(mu_set), size=min(n_show, len(mu_set)), replace=False)
    shape = mu_set.images.shape[1:]
    store, _ = nn.load_checkpoint(out / "run" / "checkpoint_final.bin")
    gen = build_generator(cfg, prob.dim)
    gen.store.theta[:] = store.theta
    codes_in = embed(model, mu_set.images[idx].reshape(len(idx), -1))
    codes_out = generator_map(gen)(codes_in)
    recon_in = [np.clip(reconstruct(model, c).reshape(shape), 0, 1)
                for c in codes_in]
    recon_out = [np.clip(reconstruct(model, c).reshape(shape), 0, 1)
                 for c in codes_out]
    export_pgm_grid(recon_in, out / "inputs.pgm", cols=n_show)
    export_pgm_grid(recon_out, out / "outputs.pgm", cols=n_show)
    export_pgm_grid([im for pair in zip(recon_in, recon_out) for im in pair],
                    out / "pairs.pgm", cols=2)

    summary = {
        "k": model.k, "steps": cfg.steps, "seed": seed,
        "counts": {"mu": len(mu_set), "nu": len(nu_set)},
        "sw_initial": init_report.sw_distance,
        "sw_final": report.sw_distance,
        "diverged_at": report.diverged_at,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2,
                                                 sort_keys=True) + "\n")
    return summary
