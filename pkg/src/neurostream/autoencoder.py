"""The 3D convolutional autoencoder: model assembly, training, cross-validation, checkpoints."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import CHUNK_SHAPE, CHUNK_SIZE, CODE_SIZE, GRID_COLS, GRID_ROWS, Chunk, LatentCode
from .errors import CorruptCheckpoint, EmptyDataset, ShapeError, TooFewSamples
from .nn import functional as F
from .nn.checkpoint import load_tensors, save_tensors
from .nn.layers import BatchNorm, Conv3d, ConvTranspose3d, Linear, MaxPool3d, MaxUnpool3d, ReLU, Reshape
from .nn.optim import make_optimizer

log = logging.getLogger(__name__)

ARCH = "conv3d-ae/1"
POOL = (2, 2, 2)
# the 9-wide column axis is zero-padded to 10 so 2x2x2 windows tile the volume
POOL_PAD = (0, 0, 1)
PADDED_SPATIAL = (CHUNK_SHAPE[0], GRID_ROWS, GRID_COLS + 1)
POOLED_SPATIAL = tuple(n // k for n, k in zip(PADDED_SPATIAL, POOL))  # (8, 5, 5)


class AutoencoderModel:
    """conv(1->16) BN ReLU conv(16->32) BN ReLU maxpool flatten linear(6400->code).

    The decoder mirrors it: linear(code->6400) reshape maxunpool deconv(32->16) BN ReLU deconv(16->1).
    """

    def __init__(self, code_size: int = CODE_SIZE, channels=(16, 32), kernel: int = 3,
                 seed: int = 0, dtype=np.float32):
        self.code_size = int(code_size)
        self.channels = tuple(int(c) for c in channels)
        self.kernel = int(kernel)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        c1, c2 = self.channels
        pad = self.kernel // 2
        rng = np.random.default_rng(seed)
        flat = c2 * int(np.prod(POOLED_SPATIAL))
        self.flat_size = flat

        self.encoder = {
            "enc_conv1": Conv3d(1, c1, self.kernel, 1, pad, rng=rng, dtype=dtype),
            "enc_bn1": BatchNorm(c1, dtype=dtype),
            "enc_relu1": ReLU(),
            "enc_conv2": Conv3d(c1, c2, self.kernel, 1, pad, rng=rng, dtype=dtype),
            "enc_bn2": BatchNorm(c2, dtype=dtype),
            "enc_relu2": ReLU(),
            "enc_pool": MaxPool3d(POOL, POOL, POOL_PAD),
            "enc_flatten": Reshape((flat,)),
            "enc_fc": Linear(flat, self.code_size, rng=rng, dtype=dtype),
        }
        self.decoder = {
            "dec_fc": Linear(self.code_size, flat, rng=rng, dtype=dtype),
            "dec_reshape": Reshape((c2,) + POOLED_SPATIAL),
            "dec_unpool": MaxUnpool3d(PADDED_SPATIAL, POOL, POOL, crop_end=POOL_PAD),
            "dec_deconv1": ConvTranspose3d(c2, c1, self.kernel, 1, pad, rng=rng, dtype=dtype),
            "dec_bn1": BatchNorm(c1, dtype=dtype),
            "dec_relu1": ReLU(),
            "dec_deconv2": ConvTranspose3d(c1, 1, self.kernel, 1, pad, rng=rng, dtype=dtype, gain=1.0),
        }
        # per-cell input normalisation; identity unless fitted
        self.norm_mean = np.zeros((GRID_ROWS, GRID_COLS), dtype=dtype)
        self.norm_std = np.ones((GRID_ROWS, GRID_COLS), dtype=dtype)
        self.training = False
        self.eval()
        if self.code_size == CODE_SIZE and self.channels == (16, 32):
            assert self.input_size == 1440 == 16 * 10 * 9
            assert self.compression_ratio == 11.25

    # -- structure ---------------------------------------------------------

    @property
    def input_size(self) -> int:
        return CHUNK_SIZE

    @property
    def compression_ratio(self) -> float:
        return self.input_size / self.code_size

    def layers(self):
        yield from self.encoder.items()
        yield from self.decoder.items()

    def parameters(self):
        return [(layer.params, layer.grads) for _, layer in self.layers() if layer.params]

    def num_parameters(self) -> int:
        return sum(p.size for params, _ in self.parameters() for p in params.values())

    def zero_grad(self):
        for _, layer in self.layers():
            layer.zero_grad()

    def train(self, mode: bool = True):
        self.training = mode
        for _, layer in self.layers():
            layer.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def config(self) -> dict:
        return {"arch": ARCH, "code_size": self.code_size, "channels": list(self.channels),
                "kernel": self.kernel, "seed": self.seed}

    # -- forward / backward ------------------------------------------------

    def _prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.shape == CHUNK_SHAPE:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != CHUNK_SHAPE:
            raise ShapeError(f"expected chunks of shape {CHUNK_SHAPE}, got {x.shape}")
        x = (x - self.norm_mean) / self.norm_std
        return np.ascontiguousarray(x[:, None], dtype=self.dtype)

    def _finish(self, y) -> np.ndarray:
        return (y[:, 0] * self.norm_std + self.norm_mean).astype(self.dtype, copy=False)

    def encode_batch(self, x):
        """(N, 16, 10, 9) chunks -> ((N, code) codes, pool indices)."""
        h = self._prepare(x)
        for name, layer in self.encoder.items():
            h = layer(h)
        return h, self.encoder["enc_pool"].indices

    def decode_batch(self, z, indices=None):
        """Codes -> (N, 16, 10, 9) chunks. Without ``indices`` every value unpools to its window origin."""
        z = np.asarray(z, dtype=self.dtype)
        if z.ndim != 2 or z.shape[1] != self.code_size:
            raise ShapeError(f"expected codes of shape (N, {self.code_size}), got {z.shape}")
        if indices is None:
            indices = self.origin_indices(z.shape[0])
        h = z
        for name, layer in self.decoder.items():
            h = layer(h, indices) if name == "dec_unpool" else layer(h)
        return self._finish(h)

    def origin_indices(self, n: int) -> np.ndarray:
        """Pool indices pointing at the first cell of each window (index-free decoding)."""
        d, h, w = PADDED_SPATIAL
        a, b, e = np.meshgrid(*(np.arange(p) * k for p, k in zip(POOLED_SPATIAL, POOL)), indexing="ij")
        idx = (a * h + b) * w + e
        return np.broadcast_to(idx, (n, self.channels[1]) + POOLED_SPATIAL).astype(np.int64)

    def reconstruct(self, x):
        z, idx = self.encode_batch(x)
        return self.decode_batch(z, idx)

    def forward_loss(self, x, reduction="mean"):
        """Forward pass keeping contexts for :meth:`backward`; loss is in normalised units."""
        target = self._prepare(x)
        h = target
        for layer in self.encoder.values():
            h = layer(h)
        idx = self.encoder["enc_pool"].indices
        for name, layer in self.decoder.items():
            h = layer(h, idx) if name == "dec_unpool" else layer(h)
        loss, ctx = F.mse_loss(target, h, reduction)
        return loss, ctx

    def backward(self, loss_ctx):
        g = F.mse_backward(loss_ctx)
        for _, layer in reversed(list(self.decoder.items())):
            g = layer.backward(g)
        for _, layer in reversed(list(self.encoder.items())):
            g = layer.backward(g)
        return g

    # -- chunk-level API ---------------------------------------------------

    def encode(self, chunk: Chunk | np.ndarray, source_seq: int = 0, timestamp: int | None = None) -> LatentCode:
        data = chunk.data if isinstance(chunk, Chunk) else np.asarray(chunk)
        if data.shape != CHUNK_SHAPE:
            raise ShapeError(f"expected a chunk of shape {CHUNK_SHAPE}, got {data.shape}")
        z, _ = self.encode_batch(data[None])
        ts = timestamp if timestamp is not None else getattr(chunk, "start_timestamp", 0)
        return LatentCode(z[0], source_seq, ts)

    def decode(self, code: LatentCode | np.ndarray, indices=None, start_timestamp: int = 0) -> Chunk:
        values = code.values if isinstance(code, LatentCode) else np.asarray(code)
        if indices is not None:
            indices = np.asarray(indices)
            if indices.ndim == 4:
                indices = indices[None]
        return Chunk(self.decode_batch(values.reshape(1, -1), indices)[0], start_timestamp)

    # -- normalisation -----------------------------------------------------

    def fit_normalization(self, chunks: np.ndarray):
        """Per-cell z-scoring from training chunks; empty cells keep mean 0, std 1."""
        x = np.asarray(chunks, dtype=np.float64)
        mean = x.mean(axis=(0, 1))
        std = x.std(axis=(0, 1))
        std[std < 1e-12] = 1.0
        self.norm_mean = mean.astype(self.dtype)
        self.norm_std = std.astype(self.dtype)

    # -- state -------------------------------------------------------------

    def state_tensors(self):
        for lname, layer in self.layers():
            for tname, arr in layer.params.items():
                yield lname, tname, arr
            for tname, arr in layer.buffers.items():
                yield lname, tname, arr
        yield "input_norm", "mean", self.norm_mean
        yield "input_norm", "std", self.norm_std

    def state_dict(self) -> dict:
        return {(l, t): a.copy() for l, t, a in self.state_tensors()}

    def load_state_dict(self, state: dict):
        targets = {(l, t): a for l, t, a in self.state_tensors()}
        missing = sorted(set(targets) - set(state))
        if missing:
            l, t = missing[0]
            raise CorruptCheckpoint(f"checkpoint lacks tensor {l}.{t}")
        for key, dst in targets.items():
            src = np.asarray(state[key])
            if src.shape != dst.shape:
                raise CorruptCheckpoint(
                    f"shape mismatch for tensor {key[0]}.{key[1]}: checkpoint {src.shape}, model {dst.shape}"
                )
            dst[...] = src

    def clone(self) -> "AutoencoderModel":
        return copy.deepcopy(self)


def compression_ratio(model: AutoencoderModel) -> float:
    return model.compression_ratio


def encode(model: AutoencoderModel, chunk: Chunk) -> LatentCode:
    return model.encode(chunk)


def decode(model: AutoencoderModel, code: LatentCode, indices=None) -> Chunk:
    return model.decode(code, indices)


# -- checkpoints ------------------------------------------------------------

def checkpoint_save(model: AutoencoderModel, path):
    save_tensors(path, list(model.state_tensors()), meta=model.config())


def checkpoint_load(path) -> AutoencoderModel:
    meta, tensors = load_tensors(path)
    if meta.get("arch") != ARCH:
        raise CorruptCheckpoint(f"{path}: unknown architecture {meta.get('arch')!r}")
    model = AutoencoderModel(code_size=meta["code_size"], channels=meta["channels"],
                             kernel=meta["kernel"], seed=meta.get("seed", 0))
    model.load_state_dict(tensors)
    return model.eval()


def load_into(model: AutoencoderModel, path) -> AutoencoderModel:
    """Load a checkpoint into an existing architecture, naming any mismatched tensor."""
    _, tensors = load_tensors(path)
    model.load_state_dict(tensors)
    return model


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    optimizer: str = "adam"
    folds: int = 3
    repeats: int = 3
    seed: int = 0
    holdout: float = 0.1
    patience: int = 5
    normalize: bool = False
    reduction: str = "mean"
    code_size: int = CODE_SIZE

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("epochs", "batch_size", "repeats", "patience", "code_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout must be in [0, 1)")
        if self.optimizer not in ("adam", "sgd", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    model: AutoencoderModel
    losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    epochs_run: int = 0
    stopped_early: bool = False


def as_array(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        arr = dataset
    else:
        arr = np.stack([c.data if isinstance(c, Chunk) else np.asarray(c) for c in dataset]) if len(dataset) else np.empty((0,) + CHUNK_SHAPE)
    if arr.ndim != 4 or arr.shape[1:] != CHUNK_SHAPE:
        raise ShapeError(f"dataset must be a sequence of {CHUNK_SHAPE} chunks, got {arr.shape}")
    return arr.astype(np.float32, copy=False)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    # a trailing batch of one cannot be batch-normalised in training mode
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()
    bounds = starts[1:] + [n]
    return [order[s:e] for s, e in zip(starts, bounds)]


def evaluate_mse(model: AutoencoderModel, dataset, batch_size: int = 256) -> float:
    """Per-element mean squared reconstruction error in signal units (eval mode)."""
    x = as_array(dataset)
    if len(x) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    was_training = model.training
    model.eval()
    total = 0.0
    for s in range(0, len(x), batch_size):
        xb = x[s : s + batch_size]
        diff = model.reconstruct(xb).astype(np.float64) - xb
        total += float(np.sum(diff * diff))
    model.train(was_training)
    return total / x.size


def train(model: AutoencoderModel, dataset, config: TrainConfig, *,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    x = as_array(dataset)
    if len(x) == 0:
        raise EmptyDataset("training needs at least one chunk")
    if len(x) < 2:
        raise TooFewSamples("training with batch normalisation needs at least two chunks")
    rng = np.random.default_rng(config.seed)
    n_val = int(len(x) * config.holdout)
    if n_val and len(x) - n_val >= 2:
        perm = rng.permutation(len(x))
        val, x = x[perm[:n_val]], x[perm[n_val:]]
    else:
        val = None
    if config.normalize:
        model.fit_normalization(x)

    opt = make_optimizer(config.optimizer, model.parameters(), config.lr)
    result = TrainResult(model)
    best = (np.inf, None)
    since_best = 0
    for epoch in range(config.epochs):
        model.train()
        batch_losses = []
        for idx in _batches(len(x), config.batch_size, rng):
            model.zero_grad()
            loss, ctx = model.forward_loss(x[idx], config.reduction)
            model.backward(ctx)
            opt.step()
            batch_losses.append(loss / (x[idx].size if config.reduction == "sum" else 1.0))
        epoch_loss = float(np.mean(batch_losses))
        result.losses.append(epoch_loss)
        result.epochs_run = epoch + 1
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        if val is not None:
            v = evaluate_mse(model, val)
            result.val_losses.append(v)
            if v < best[0]:
                best = (v, model.state_dict())
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    result.stopped_early = True
                    break
    if best[1] is not None:
        model.load_state_dict(best[1])
    model.eval()
    return result


# -- cross-validation ---------------------------------------------------------

@dataclass
class FoldResult:
    repeat: int
    fold: int
    mse: float
    n_train: int
    n_test: int
    test_index: np.ndarray = field(repr=False, default=None)


@dataclass
class EvalReport:
    """Per-fold test MSE (per-element mean, signal units squared) with summary statistics."""

    folds: list
    subject: str = "synthetic"

    @property
    def mses(self) -> np.ndarray:
        return np.array([f.mse for f in self.folds])

    @property
    def mean(self) -> float:
        return float(self.mses.mean())

    @property
    def std(self) -> float:
        return float(self.mses.std())

    def to_table(self, sep=",") -> str:
        lines = [sep.join(["subject", "fold", "repeat", "mse"])]
        for f in self.folds:
            lines.append(sep.join([self.subject, str(f.fold), str(f.repeat), f"{f.mse:.9g}"]))
        return "\n".join(lines) + "\n"

    def summary_table(self, sep=",") -> str:
        return (sep.join(["subject", "mse_mean", "mse_std"]) + "\n"
                + sep.join([self.subject, f"{self.mean:.9g}", f"{self.std:.9g}"]) + "\n")


def fold_splits(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Shuffle indices with ``seed`` and cut them into ``folds`` contiguous blocks."""
    if n < folds:
        raise TooFewSamples(f"{n} samples cannot be split into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    return np.array_split(order, folds)


def crossvalidate(dataset, config: TrainConfig, *, subject: str = "synthetic",
                  model_factory: Callable[[int], AutoencoderModel] | None = None) -> EvalReport:
    x = as_array(dataset)
    if len(x) < config.folds:
        raise TooFewSamples(f"{len(x)} samples cannot be split into {config.folds} folds")
    if model_factory is None:
        def model_factory(seed):
            return AutoencoderModel(code_size=config.code_size, seed=seed)
    results = []
    for rep in range(config.repeats):
        splits = fold_splits(len(x), config.folds, config.seed + 1000 * rep)
        for k, test_idx in enumerate(splits):
            train_idx = np.concatenate([s for j, s in enumerate(splits) if j != k])
            run_seed = config.seed + 1000 * rep + k
            model = model_factory(run_seed)
            cfg = TrainConfig(**{**asdict(config), "seed": run_seed})
            train(model, x[train_idx], cfg)
            mse = evaluate_mse(model, x[test_idx])
            log.info("repeat %d fold %d: test mse %.6g", rep, k, mse)
            results.append(FoldResult(rep, k, mse, len(train_idx), len(test_idx), np.sort(test_idx)))
    return EvalReport(results, subject)


def model_selection(dataset, config: TrainConfig, lrs: Sequence[float] = (1e-2, 1e-3, 1e-4),
                    code_sizes: Sequence[int] = (64, 128, 256), folds: int = 5):
    """Grid search scored by k-fold mean test MSE. Returns (best (lr, code_size), rows)."""
    rows = []
    for lr in lrs:
        for cs in code_sizes:
            cfg = TrainConfig(**{**asdict(config), "lr": lr, "code_size": cs, "folds": folds, "repeats": 1})
            report = crossvalidate(dataset, cfg)
            rows.append({"lr": lr, "code_size": cs, "mse_mean": report.mean, "mse_std": report.std})
    best = min(rows, key=lambda r: r["mse_mean"])
    return (best["lr"], best["code_size"]), rows
