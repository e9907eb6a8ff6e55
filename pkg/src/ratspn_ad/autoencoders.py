"""Convolutional, beta-variational and vector-quantised autoencoders.

All three variants share a strided 5x5 convolution encoder and a mirrored
transposed-convolution decoder.  Losses are written out explicitly together
with their gradients, so training needs nothing beyond :mod:`tensor_nn`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import tensorio
from .tensor_nn import (
    Adam,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Layer,
    ReLU,
    ResidualBlock,
    ShapeError,
    backward_all,
    forward_all,
)

logger = logging.getLogger(__name__)

VARIANTS = ("CAE", "BVAE", "VQVAE")
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
CHECKPOINT_MAGIC = b"AECK"

TRAIN_DEFAULTS = {
    "CAE": {"epochs": 100, "lr": 1e-5, "batch_size": 64},
    "BVAE": {"epochs": 100, "lr": 1e-5, "batch_size": 64},
    "VQVAE": {"epochs": 20, "lr": 1e-4, "batch_size": 64},
}


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch, self.batch, self.loss = epoch, batch, loss
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


@dataclass
class AEConfig:
    patch_size: int = 64
    channels: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 5
    latent_dim: int = 64
    beta: float = 0.1
    commitment: float = 0.25
    codebook_size: int = 256
    embedding_dim: int = 64
    n_residual: int = 6
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        factor = 2 ** len(self.channels)
        if not self.channels or any(c < 1 for c in self.channels):
            raise ValueError("channels must be a nonempty sequence of positive ints")
        if self.patch_size % factor:
            raise ValueError(f"patch_size {self.patch_size} must be divisible by {factor}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.latent_dim < 1 or self.embedding_dim < 1:
            raise ValueError("latent sizes must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.commitment > 0:
            raise ValueError("commitment weight must be positive")
        if self.codebook_size < 2:
            raise ValueError("codebook needs at least two embeddings")
        if self.n_residual < 0:
            raise ValueError("n_residual must be >= 0")

    @property
    def bottleneck_size(self) -> int:
        return self.patch_size // 2 ** len(self.channels)


@dataclass
class Codebook:
    embeddings: np.ndarray  # (K, B)
    commitment: float = 0.25

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ValueError("codebook embeddings must be a nonempty (K, B) array")
        if not self.commitment > 0:
            raise ValueError("commitment weight must be positive")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


class VaeOutput(NamedTuple):
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    reconstruction: np.ndarray


class LossParts(NamedTuple):
    total: float
    recon: float
    kl: float = 0.0
    codebook: float = 0.0
    commitment: float = 0.0


def as_unit_float(pixels) -> np.ndarray:
    """Integer images are scaled by the maximum of their bit depth."""
    arr = np.asarray(pixels)
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64) / np.iinfo(arr.dtype).max
    return arr.astype(np.float64)


# --- losses -----------------------------------------------------------------


def cae_loss(x, x_hat) -> float:
    """Mean squared reconstruction error over all pixels."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError("cae_loss", x.shape, x_hat.shape)
    return float(np.mean((x - x_hat) ** 2))


def reparameterize(mu, logvar, rng: np.random.Generator) -> np.ndarray:
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError("reparameterize", mu.shape, logvar.shape)
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * np.clip(logvar, LOGVAR_MIN, LOGVAR_MAX)) * eps


def gaussian_kl(mu, logvar) -> np.ndarray:
    """Per-sample KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims."""
    mu, logvar = np.atleast_2d(mu), np.atleast_2d(logvar)
    return 0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar, axis=1)


def vae_loss(x, out: VaeOutput, beta: float = 0.1) -> tuple[float, float, float]:
    """Returns ``(total, recon, kl)`` with ``total = recon + beta * kl``.

    ``recon`` is the pixel MSE and ``kl`` the closed-form divergence to the
    standard normal prior, both averaged over the batch.
    """
    if not np.all(np.isfinite(out.logvar)):
        raise FloatingPointError("non-finite logvar")
    recon = cae_loss(x, out.reconstruction)
    kl = float(np.mean(gaussian_kl(out.mu, out.logvar)))
    return recon + beta * kl, recon, kl


class StraightThrough:
    """Quantised values forward, identity gradient backward."""

    def __init__(self, value: np.ndarray):
        self.value = value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.value.shape:
            raise ShapeError("straight-through backward", self.value.shape, grad.shape)
        return grad.copy()


def _positions(encoder_out: np.ndarray) -> np.ndarray:
    if encoder_out.ndim == 4:
        return encoder_out.transpose(0, 2, 3, 1).reshape(-1, encoder_out.shape[1])
    if encoder_out.ndim == 2:
        return encoder_out
    if encoder_out.ndim == 1:
        return encoder_out[None, :]
    raise ShapeError("vqvae_quantize", ("B", "C", "H", "W"), encoder_out.shape)


def nearest_embedding(vectors: np.ndarray, embeddings: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Index of the closest embedding for each row (lowest index on ties)."""
    out = np.empty(len(vectors), dtype=np.int64)
    for start in range(0, len(vectors), chunk):
        v = vectors[start : start + chunk]
        d = np.sum((v[:, None, :] - embeddings[None, :, :]) ** 2, axis=2)
        out[start : start + chunk] = np.argmin(d, axis=1)
    return out


def vqvae_quantize(encoder_out, codebook: Codebook):
    """Map every spatial position to its nearest codebook vector.

    Returns ``(indices, quantized, straight_through)``; indices have the
    input shape without the channel axis.
    """
    e = np.asarray(encoder_out, dtype=np.float64)
    if codebook.size == 0:
        raise ValueError("empty codebook")
    channel_axis = 1 if e.ndim == 4 else -1
    if e.shape[channel_axis] != codebook.dim:
        raise ShapeError("vqvae_quantize channel dim", (codebook.dim,), (e.shape[channel_axis],))
    flat = _positions(e)
    idx = nearest_embedding(flat, codebook.embeddings)
    q_flat = codebook.embeddings[idx]
    if e.ndim == 4:
        b, c, h, w = e.shape
        indices = idx.reshape(b, h, w)
        quantized = q_flat.reshape(b, h, w, c).transpose(0, 3, 1, 2).copy()
    elif e.ndim == 1:
        indices, quantized = idx[0], q_flat[0].copy()
    else:
        indices, quantized = idx, q_flat
    return indices, quantized, StraightThrough(quantized)


def vqvae_loss(x, x_hat, encoder_out, codebook: Codebook, quantized=None):
    """Returns ``(total, recon, codebook_term, commitment_term)``.

    Both latent terms average the squared distance ``||E(x) - e_k||^2`` over
    spatial positions; the commitment term is scaled by the codebook's
    commitment weight.
    """
    e = np.asarray(encoder_out, dtype=np.float64)
    if quantized is None:
        _, quantized, _ = vqvae_quantize(e, codebook)
    if quantized.shape != e.shape:
        raise ShapeError("vqvae_loss", e.shape, quantized.shape)
    recon = cae_loss(x, x_hat)
    sq = np.sum((_positions(e) - _positions(quantized)) ** 2, axis=1)
    cb = float(np.mean(sq))
    commit = codebook.commitment * cb
    return recon + cb + commit, recon, cb, commit


# --- model ------------------------------------------------------------------


def _conv_stack(cfg: AEConfig, rng) -> list[Layer]:
    layers: list[Layer] = []
    in_ch = 1
    pad = cfg.kernel_size // 2
    for ch in cfg.channels:
        layers += [Conv2d(in_ch, ch, cfg.kernel_size, 2, pad, rng=rng), ReLU()]
        in_ch = ch
    return layers


def _deconv_stack(cfg: AEConfig, rng) -> list[Layer]:
    layers: list[Layer] = []
    pad = cfg.kernel_size // 2
    chans = list(cfg.channels[::-1]) + [1]
    for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
        layers.append(ConvTranspose2d(cin, cout, cfg.kernel_size, 2, pad, 1, rng=rng))
        if i < len(chans) - 2:
            layers.append(ReLU())
    return layers


class AEModel:
    """Encoder/decoder pair for one of ``CAE``, ``BVAE`` or ``VQVAE``."""

    def __init__(self, variant: str, config: AEConfig | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.config = config if config is not None else AEConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        s, top = cfg.bottleneck_size, cfg.channels[-1]
        flat = top * s * s

        self.encoder = _conv_stack(cfg, rng)
        self.mu_head = self.logvar_head = None
        self.codebook = None
        if variant == "CAE":
            self.encoder.append(Dense(flat, cfg.latent_dim, rng=rng))
        elif variant == "BVAE":
            self.mu_head = Dense(flat, cfg.latent_dim, rng=rng)
            self.logvar_head = Dense(flat, cfg.latent_dim, rng=rng)
        else:
            self.encoder += [ResidualBlock(top, rng=rng) for _ in range(cfg.n_residual)]
            self.encoder.append(Conv2d(top, cfg.embedding_dim, 1, 1, 0, rng=rng))
            k = cfg.codebook_size
            self.codebook = Codebook(rng.uniform(-1.0 / k, 1.0 / k, (k, cfg.embedding_dim)), cfg.commitment)
            self._codebook_grad = np.zeros_like(self.codebook.embeddings)

        if variant == "VQVAE":
            self.decoder = [Conv2d(cfg.embedding_dim, top, 1, 1, 0, rng=rng), ReLU()]
        else:
            self.decoder = [Dense(cfg.latent_dim, flat, rng=rng, out_shape=(top, s, s)), ReLU()]
        self.decoder += _deconv_stack(cfg, rng)

    # parameters ---------------------------------------------------------

    @property
    def latent_dim(self) -> int:
        return self.config.embedding_dim if self.variant == "VQVAE" else self.config.latent_dim

    def _named_layers(self):
        for i, layer in enumerate(self.encoder):
            yield f"encoder.{i}", layer
        if self.mu_head is not None:
            yield "mu_head", self.mu_head
            yield "logvar_head", self.logvar_head
        for i, layer in enumerate(self.decoder):
            yield f"decoder.{i}", layer

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._named_layers():
            for k, p in layer.params.items():
                out[f"{prefix}.{k}"] = p
        if self.codebook is not None:
            out["codebook.embeddings"] = self.codebook.embeddings
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._named_layers():
            for k, g in layer.grads.items():
                out[f"{prefix}.{k}"] = g
        if self.codebook is not None:
            out["codebook.embeddings"] = self._codebook_grad
        return out

    def zero_grad(self) -> None:
        for _, layer in self._named_layers():
            layer.zero_grad()
        if self.codebook is not None:
            self._codebook_grad = np.zeros_like(self.codebook.embeddings)

    # forward passes -----------------------------------------------------

    def _prepare(self, x) -> np.ndarray:
        x = as_unit_float(x)
        p = self.config.patch_size
        if x.ndim == 2:
            x = x[None]
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1:] != (1, p, p):
            raise ShapeError("autoencoder input", ("n", 1, p, p), x.shape)
        return x

    def _latent_stats(self, x4):
        """Encoder forward; returns what the decoder and losses need."""
        h = forward_all(self.encoder, x4)
        if self.variant == "BVAE":
            mu = self.mu_head.forward(h)
            raw = self.logvar_head.forward(h)
            return {"mu": mu, "logvar_raw": raw, "logvar": np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)}
        if self.variant == "VQVAE":
            idx, q, st = vqvae_quantize(h, self.codebook)
            return {"e": h, "indices": idx, "q": q, "st": st}
        return {"z": h}

    def decode(self, z) -> np.ndarray:
        return forward_all(self.decoder, z)[:, 0]

    def loss_and_grad(self, x, rng: np.random.Generator | None = None, eps=None) -> LossParts:
        """Forward pass, loss and backward pass for one batch.

        Parameter gradients are accumulated into the layers (call
        :meth:`zero_grad` first).  For the BVAE, ``eps`` fixes the
        reparameterisation noise; otherwise it is drawn from ``rng``.
        """
        x4 = self._prepare(x)
        n = x4.shape[0]
        st = self._latent_stats(x4)
        cfg = self.config
        if self.variant == "CAE":
            x_hat = forward_all(self.decoder, st["z"])
            parts = LossParts(cae_loss(x4, x_hat), cae_loss(x4, x_hat))
            dz = backward_all(self.decoder, 2.0 * (x_hat - x4) / x_hat.size)
            backward_all(self.encoder, dz)
            return parts

        if self.variant == "BVAE":
            mu, lv = st["mu"], st["logvar"]
            if eps is None:
                eps = (rng if rng is not None else np.random.default_rng(0)).standard_normal(mu.shape)
            std = np.exp(0.5 * lv)
            z = mu + std * eps
            x_hat = forward_all(self.decoder, z)
            total, recon, kl = vae_loss(x4, VaeOutput(mu, lv, z, x_hat), cfg.beta)
            dz = backward_all(self.decoder, 2.0 * (x_hat - x4) / x_hat.size)
            dmu = dz + cfg.beta * mu / n
            dlv = dz * eps * 0.5 * std + cfg.beta * 0.5 * (np.exp(lv) - 1.0) / n
            raw = st["logvar_raw"]
            dlv = np.where((raw >= LOGVAR_MIN) & (raw <= LOGVAR_MAX), dlv, 0.0)
            dh = self.mu_head.backward(dmu) + self.logvar_head.backward(dlv)
            backward_all(self.encoder, dh)
            return LossParts(total, recon, kl=kl)

        e, q, idx = st["e"], st["q"], st["indices"]
        x_hat = forward_all(self.decoder, st["st"].value)
        total, recon, cb, commit = vqvae_loss(x4, x_hat, e, self.codebook, quantized=q)
        dq = backward_all(self.decoder, 2.0 * (x_hat - x4) / x_hat.size)
        n_pos = idx.size
        diff = e - q
        de = st["st"].backward(dq) + cfg.commitment * 2.0 * diff / n_pos
        diff_flat = _positions(diff)
        np.add.at(self._codebook_grad, idx.reshape(-1), -2.0 * diff_flat / n_pos)
        backward_all(self.encoder, de)
        return LossParts(total, recon, codebook=cb, commitment=commit)

    def loss(self, x, rng=None, eps=None) -> LossParts:
        """Batch loss without touching gradients."""
        x4 = self._prepare(x)
        st = self._latent_stats(x4)
        if self.variant == "CAE":
            x_hat = forward_all(self.decoder, st["z"])
            v = cae_loss(x4, x_hat)
            return LossParts(v, v)
        if self.variant == "BVAE":
            mu, lv = st["mu"], st["logvar"]
            if eps is None:
                eps = (rng if rng is not None else np.random.default_rng(0)).standard_normal(mu.shape)
            z = mu + np.exp(0.5 * lv) * eps
            x_hat = forward_all(self.decoder, z)
            total, recon, kl = vae_loss(x4, VaeOutput(mu, lv, z, x_hat), self.config.beta)
            return LossParts(total, recon, kl=kl)
        x_hat = forward_all(self.decoder, st["q"])
        total, recon, cb, commit = vqvae_loss(x4, x_hat, st["e"], self.codebook, quantized=st["q"])
        return LossParts(total, recon, codebook=cb, commitment=commit)

    def surrogate_loss(self, x, frozen: dict) -> float:
        """VQVAE loss with every stop-gradient operand held at ``frozen``.

        ``frozen`` holds ``e`` (encoder output), ``q`` (quantised output)
        and ``indices`` from a reference forward pass.  The gradient of this
        function is exactly what :meth:`loss_and_grad` back-propagates, so
        it is the right target for finite-difference checks.
        """
        if self.variant != "VQVAE":
            raise ValueError("surrogate_loss only applies to the VQVAE")
        x4 = self._prepare(x)
        e = forward_all(self.encoder, x4)
        st = e + (frozen["q"] - frozen["e"])
        x_hat = forward_all(self.decoder, st)
        b, c, h, w = e.shape
        selected = self.codebook.embeddings[frozen["indices"].reshape(-1)]
        cb = np.mean(np.sum((_positions(frozen["e"]) - selected) ** 2, axis=1))
        commit = np.mean(np.sum((_positions(e) - _positions(frozen["q"])) ** 2, axis=1))
        return cae_loss(x4, x_hat) + float(cb) + self.config.commitment * float(commit)

    def encode(self, patches, batch_size: int = 256) -> np.ndarray:
        """Deterministic latent features, one row per patch.

        CAE: bottleneck activations.  BVAE: posterior mean.  VQVAE: quantised
        feature map averaged over spatial positions.
        """
        x4 = self._prepare(patches)
        rows = []
        for start in range(0, len(x4), batch_size):
            st = self._latent_stats(x4[start : start + batch_size])
            if self.variant == "CAE":
                rows.append(st["z"])
            elif self.variant == "BVAE":
                rows.append(st["mu"])
            else:
                rows.append(st["q"].mean(axis=(2, 3)))
        return np.concatenate(rows, axis=0) if rows else np.zeros((0, self.latent_dim))

    def reconstruct(self, patches, rng=None) -> np.ndarray:
        x4 = self._prepare(patches)
        st = self._latent_stats(x4)
        if self.variant == "CAE":
            return self.decode(st["z"])
        if self.variant == "VQVAE":
            return self.decode(st["q"])
        rng = rng if rng is not None else np.random.default_rng(0)
        z = mu_plus_noise(st["mu"], st["logvar"], rng)
        return self.decode(z)

    def anomaly_scores(self, patches, rng: np.random.Generator | None = None, batch_size: int = 256) -> np.ndarray:
        """Per-patch standalone anomaly score (higher is more anomalous).

        CAE and VQVAE use the reconstruction MSE; the BVAE uses its full
        loss with a single reparameterised draw from ``rng``.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        x4 = self._prepare(patches)
        out = []
        for start in range(0, len(x4), batch_size):
            xb = x4[start : start + batch_size]
            st = self._latent_stats(xb)
            if self.variant == "CAE":
                x_hat = forward_all(self.decoder, st["z"])
                out.append(np.mean((x_hat - xb) ** 2, axis=(1, 2, 3)))
            elif self.variant == "VQVAE":
                x_hat = forward_all(self.decoder, st["q"])
                out.append(np.mean((x_hat - xb) ** 2, axis=(1, 2, 3)))
            else:
                z = mu_plus_noise(st["mu"], st["logvar"], rng)
                x_hat = forward_all(self.decoder, z)
                recon = np.mean((x_hat - xb) ** 2, axis=(1, 2, 3))
                out.append(recon + self.config.beta * gaussian_kl(st["mu"], st["logvar"]))
        return np.concatenate(out) if out else np.zeros(0)

    # persistence --------------------------------------------------------

    def architecture(self) -> dict:
        header = {"format": "ae-checkpoint", "version": 1, "variant": self.variant}
        for f in fields(AEConfig):
            header[f.name] = getattr(self.config, f.name)
        header["layers"] = ";".join(f"{name}:{layer.kind}" for name, layer in self._named_layers())
        return header

    def save(self, path) -> None:
        tensorio.write_records(path, CHECKPOINT_MAGIC, self.architecture(), self.parameters())

    @classmethod
    def load(cls, path) -> "AEModel":
        header, records = tensorio.read_records(path, CHECKPOINT_MAGIC)
        kwargs = {}
        for f in fields(AEConfig):
            raw = header[f.name]
            if f.name == "channels":
                kwargs[f.name] = tuple(int(v) for v in raw.split(","))
            elif f.type in ("float",):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = int(raw)
        model = cls(header["variant"], AEConfig(**kwargs))
        params = model.parameters()
        if set(params) != set(records):
            raise tensorio.FormatError("checkpoint parameters do not match the architecture")
        for name, p in params.items():
            if p.shape != records[name].shape:
                raise tensorio.FormatError(f"shape mismatch for {name}")
            p[...] = records[name]
        return model


def mu_plus_noise(mu, logvar, rng):
    return mu + np.exp(0.5 * logvar) * rng.standard_normal(mu.shape)


def build_ae(variant: str, config: AEConfig | dict | None = None) -> AEModel:
    if isinstance(config, dict):
        config = AEConfig(**config)
    return AEModel(variant, config)


# --- training ---------------------------------------------------------------


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float


def _patch_array(data) -> np.ndarray:
    return as_unit_float(getattr(data, "patches", data))


def train_ae(
    model: AEModel,
    train,
    val=None,
    epochs: int | None = None,
    lr: float | None = None,
    batch_size: int | None = None,
    seed: int = 0,
) -> tuple[AEModel, list[EpochLoss]]:
    """Minimise the variant's loss with Adam over shuffled mini-batches.

    Missing hyperparameters fall back to the per-variant defaults in
    :data:`TRAIN_DEFAULTS`.  Returns the (in-place) trained model and the
    per-epoch trace of mean training and validation losses.
    """
    defaults = TRAIN_DEFAULTS[model.variant]
    epochs = defaults["epochs"] if epochs is None else epochs
    lr = defaults["lr"] if lr is None else lr
    batch_size = defaults["batch_size"] if batch_size is None else batch_size
    x = _patch_array(train)
    if len(x) == 0:
        raise ValueError("empty training set")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    xv = _patch_array(val) if val is not None else None

    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    params = model.parameters()
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for b, start in enumerate(range(0, len(x), batch_size)):
            xb = x[order[start : start + batch_size]]
            model.zero_grad()
            parts = model.loss_and_grad(xb, rng=rng)
            if not np.isfinite(parts.total):
                raise TrainingDivergedError(epoch + 1, b, parts.total)
            opt.step(params, model.gradients())
            total += parts.total * len(xb)
        val_loss = float("nan")
        if xv is not None and len(xv):
            vrng = np.random.default_rng([seed, epoch])
            val_loss = float(
                sum(model.loss(xv[s : s + 256], rng=vrng).total * len(xv[s : s + 256]) for s in range(0, len(xv), 256))
                / len(xv)
            )
        trace.append(EpochLoss(epoch + 1, total / len(x), val_loss))
        logger.info("epoch %d train %.6g val %.6g", epoch + 1, total / len(x), val_loss)
    return model, trace


def write_trace_csv(path, trace: list[EpochLoss]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for row in trace:
            w.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss)])


def encode(model: AEModel, patches) -> np.ndarray:
    return model.encode(_patch_array(patches))


def ae_anomaly_score(model: AEModel, patch, rng=None) -> float:
    return float(model.anomaly_scores(np.asarray(patch)[None] if np.ndim(patch) == 2 else patch, rng)[0])
