"""Model assembly, reversible instance normalization, training and evaluation.

The model normalizes each lookback window (statistics kept for exact
inversion), runs the decomposition-reconstruction tree, fuses components
through the interaction head, and predicts the horizon with an MLP whose
output is denormalized back to the data scale. Training minimizes the mean
absolute error with bias-corrected adaptive moments and early stopping on
validation MSE; the best-validation parameters are restored at the end.

Multivariate data is handled channel-independently: every channel of every
window runs through the same shared parameters, so permuting channels
permutes forecasts identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from dpad import nnkernel as nk
from dpad.drd import DRDTree, build_drd_tree, drd_forward
from dpad.ifm import IFParams, build_if_params, if_forward
from dpad.morph import SEKernel
from dpad.nnkernel import DiffValue, ParameterSet, no_grad

__all__ = ["ModelConfig", "RevinState", "revin_normalize", "revin_denormalize",
           "DPadModel", "l1_loss", "evaluate", "Adam", "train", "TrainHistory",
           "save_checkpoint", "load_checkpoint", "persistence_forecast",
           "CHECKPOINT_VERSION"]

CHECKPOINT_VERSION = 1
_REVIN_EPS = 1e-5


@dataclass
class ModelConfig:
    """All hyperparameters of the model, the optimizer, and the data split."""

    lookback: int = 336          # T
    horizon: int = 96            # H
    components: int = 6          # K per decomposition
    levels: int = 2              # L, tree depth
    se_half_width: int = 1       # C, base kernel length 2C+1
    mask_span: int = 3           # O, guidance-mask kernel time span
    hidden_dim: int = 336        # d, intra-projection hidden width
    embed_dim: int = 336         # d_em, node embedding width
    graph_in_dim: int = 336      # d_in
    graph_mid_dim: int = 336     # d_mid
    fuse_out_dim: int = 336      # d_out
    num_graphs: int = 1          # M
    learning_rate: float = 1e-4
    batch_size: int = 32
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    rt_threshold: float = 0.2
    max_sift: int = 10
    memd_stop_gradient: bool = False
    disable_if_module: bool = False
    revin_affine: bool = True
    grad_clip_norm: float = 0.0  # 0 disables clipping
    adjacency_axis: str = "rows"
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    test_ratio: float = 0.2

    def validate(self) -> "ModelConfig":
        if self.lookback < 2 * self.se_half_width + 1:
            raise ValueError(f"lookback {self.lookback} shorter than kernel window "
                             f"{2 * self.se_half_width + 1}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.components < 2:
            raise ValueError(f"components must be >= 2, got {self.components}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        for name in ("hidden_dim", "embed_dim", "graph_in_dim", "graph_mid_dim",
                     "fuse_out_dim", "num_graphs", "batch_size", "max_epochs",
                     "patience", "max_sift", "mask_span"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mask_span % 2 == 0:
            raise ValueError(f"mask_span must be odd, got {self.mask_span}")
        if not self.disable_if_module and self.num_graphs * self.graph_mid_dim != self.graph_in_dim:
            raise ValueError(f"num_graphs * graph_mid_dim must equal graph_in_dim, got "
                             f"{self.num_graphs} * {self.graph_mid_dim} != {self.graph_in_dim}")
        if self.adjacency_axis not in ("rows", "cols"):
            raise ValueError(f"adjacency_axis must be 'rows' or 'cols', got {self.adjacency_axis!r}")
        ratio_sum = self.train_ratio + self.val_ratio + self.test_ratio
        if abs(ratio_sum - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {ratio_sum}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data).validate()


@dataclass
class RevinState:
    """Per-window statistics needed to invert the normalization."""

    mean: float
    std: float


def revin_normalize(window: np.ndarray) -> tuple[np.ndarray, RevinState]:
    """Normalize one window to zero mean, unit scale; keep stats for inversion."""
    window = np.asarray(window, dtype=np.float64)
    if not np.all(np.isfinite(window)):
        raise ValueError("window contains non-finite values")
    mean = float(window.mean())
    std = float(window.std())
    return (window - mean) / (std + _REVIN_EPS), RevinState(mean=mean, std=std)


def revin_denormalize(values: np.ndarray, state: RevinState) -> np.ndarray:
    """Invert revin_normalize using the stored statistics."""
    return np.asarray(values, dtype=np.float64) * (state.std + _REVIN_EPS) + state.mean


class DPadModel:
    """The assembled forecasting model with its parameter set."""

    def __init__(self, config: ModelConfig, init_rng: np.random.Generator | None = None):
        self.config = config.validate()
        if init_rng is None:
            init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
        ps = ParameterSet()
        kernel = SEKernel.zero(config.se_half_width)
        self.tree: DRDTree = build_drd_tree(
            ps, length=config.lookback, components=config.components, depth=config.levels,
            kernel=kernel, hidden=config.hidden_dim, mask_span=config.mask_span,
            max_sift=config.max_sift, rt_threshold=config.rt_threshold, rng=init_rng,
            stop_gradient=config.memd_stop_gradient)
        self.if_params: IFParams = build_if_params(
            ps, length=config.lookback, embed_dim=config.embed_dim,
            in_dim=config.graph_in_dim, mid_dim=config.graph_mid_dim,
            out_dim=config.fuse_out_dim, num_graphs=config.num_graphs, rng=init_rng,
            disable_graphs=config.disable_if_module, adjacency_axis=config.adjacency_axis)
        d_out, horizon = config.fuse_out_dim, config.horizon
        self.head = [
            (ps.create("head.w1", nk.uniform_init(init_rng, (d_out, d_out), d_out)),
             ps.create("head.b1", nk.uniform_init(init_rng, (d_out,), d_out))),
            (ps.create("head.w2", nk.uniform_init(init_rng, (d_out, horizon), d_out)),
             ps.create("head.b2", nk.uniform_init(init_rng, (horizon,), d_out))),
        ]
        if config.revin_affine:
            self.revin_weight = ps.create("revin.weight", np.asarray(1.0))
            self.revin_bias = ps.create("revin.bias", np.asarray(0.0))
        else:
            self.revin_weight = None
            self.revin_bias = None
        self.params = ps

    def forward_window(self, window: np.ndarray) -> DiffValue:
        """Forecast one univariate window; returns the (H,) graph node."""
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.config.lookback,):
            raise ValueError(f"expected window of shape ({self.config.lookback},), "
                             f"got {window.shape}")
        normalized, state = revin_normalize(window)
        x = nk.constant(normalized)
        if self.revin_weight is not None:
            x = nk.add(nk.mul(x, self.revin_weight), self.revin_bias)
        components = drd_forward(x, self.tree)
        fused = if_forward(components, self.if_params)
        pred = nk.mlp(fused, self.head)
        if self.revin_weight is not None:
            # mirror of the affine map; the small epsilon guards a collapsed weight
            pred = nk.div(nk.sub(pred, self.revin_bias),
                          nk.add_const(self.revin_weight, _REVIN_EPS ** 2))
        pred = nk.scale(pred, state.std + _REVIN_EPS)
        return nk.add_const(pred, state.mean)

    def predict_window(self, window: np.ndarray) -> np.ndarray:
        """Forecast one univariate window without building a gradient graph."""
        with no_grad():
            return self.forward_window(window).data

    def predict(self, window: np.ndarray) -> np.ndarray:
        """Forecast a (T,) or (T, channels) window; channels run independently."""
        window = np.asarray(window, dtype=np.float64)
        if window.ndim == 1:
            return self.predict_window(window)
        return np.column_stack([self.predict_window(window[:, c])
                                for c in range(window.shape[1])])


def l1_loss(pred, truth):
    """Mean absolute error over the horizon.

    With a DiffValue prediction, returns a scalar graph node; with arrays,
    returns a float.
    """
    if isinstance(pred, DiffValue):
        truth = np.asarray(truth, dtype=np.float64)
        if pred.data.shape != truth.shape:
            raise ValueError(f"length mismatch: {pred.data.shape} vs {truth.shape}")
        return nk.mean_all(nk.absolute(nk.sub(pred, nk.constant(truth))))
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(np.abs(truth - pred).mean())


def evaluate(pred_set, truth_set) -> tuple[float, float]:
    """MSE and MAE averaged over aligned forecast/target pairs (and channels)."""
    preds = [np.asarray(p, dtype=np.float64) for p in pred_set]
    truths = [np.asarray(t, dtype=np.float64) for t in truth_set]
    if len(preds) == 0 or len(preds) != len(truths):
        raise ValueError(f"need equal nonempty sets, got {len(preds)} and {len(truths)}")
    mse = 0.0
    mae = 0.0
    for p, t in zip(preds, truths):
        if p.shape != t.shape:
            raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
        err = t - p
        mse += float((err ** 2).mean())
        mae += float(np.abs(err).mean())
    return mse / len(preds), mae / len(preds)


def evaluate_model(model: DPadModel, pairs) -> tuple[float, float]:
    """MSE/MAE of the model on (window, target) univariate pairs."""
    preds = []
    truths = []
    for window, target in pairs:
        preds.append(model.predict_window(window))
        truths.append(target)
    return evaluate(preds, truths)


def persistence_forecast(window: np.ndarray, horizon: int) -> np.ndarray:
    """Last-value baseline: repeat the final observed sample across the horizon."""
    return np.full(horizon, float(np.asarray(window)[-1]))


class Adam:
    """Bias-corrected first/second-moment gradient updates."""

    def __init__(self, params: ParameterSet, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (p.grad * p.grad)
            p.data = p.data - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _clip_global_norm(params: ParameterSet, max_norm: float):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor


@dataclass
class TrainHistory:
    """Per-epoch record plus the early-stopping outcome."""

    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    stopped_early: bool = False


def train(model: DPadModel, train_pairs, val_pairs, *,
          max_epochs: int | None = None, verbose: bool = False) -> TrainHistory:
    """Minibatch training with early stopping on validation MSE.

    `train_pairs` and `val_pairs` are sequences of univariate (window,
    target) arrays. Stops when validation MSE has not improved for
    `config.patience` epochs and restores the best-validation parameters.

    Raises:
        RuntimeError: the training loss became non-finite.
    """
    cfg = model.config
    if len(train_pairs) == 0 or len(val_pairs) == 0:
        raise ValueError("training and validation sets must be nonempty")
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    opt = Adam(model.params, lr=cfg.learning_rate)
    history = TrainHistory()
    best_state = model.params.state()
    bad_epochs = 0

    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            model.params.zero_grads()
            batch_loss = 0.0
            for idx in batch:
                window, target = train_pairs[idx]
                loss = l1_loss(model.forward_window(window), target)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"training diverged: loss is not finite at epoch {epoch}, "
                        f"sample {int(idx)}")
                loss.backward(seed=np.asarray(1.0 / len(batch)))
                batch_loss += value
            if cfg.grad_clip_norm > 0.0:
                _clip_global_norm(model.params, cfg.grad_clip_norm)
            opt.step()
            epoch_loss += batch_loss / len(batch)
            n_batches += 1
        val_mse, val_mae = evaluate_model(model, val_pairs)
        record = {"epoch": epoch, "train_l1": epoch_loss / max(1, n_batches),
                  "val_mse": val_mse, "val_mae": val_mae}
        history.epochs.append(record)
        if verbose:
            print(f"epoch {epoch}: train_l1={record['train_l1']:.6f} "
                  f"val_mse={val_mse:.6f} val_mae={val_mae:.6f}")
        if val_mse < history.best_val_mse:
            history.best_val_mse = val_mse
            history.best_epoch = epoch
            best_state = model.params.state()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                history.stopped_early = True
                break
    model.params.load_state(best_state)
    return history


def save_checkpoint(path, model: DPadModel):
    """Write a self-describing npz with version, config JSON, and parameters."""
    payload = {f"param/{name}": p.data for name, p in model.params.items()}
    payload["version"] = np.asarray(CHECKPOINT_VERSION)
    payload["config_json"] = np.asarray(json.dumps(model.config.to_dict()))
    np.savez(path, **payload)


def load_checkpoint(path) -> DPadModel:
    """Rebuild a model from a checkpoint written by save_checkpoint."""
    with np.load(path, allow_pickle=False) as data:
        if "version" not in data:
            raise ValueError(f"{path}: not a model checkpoint (missing version field)")
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        config = ModelConfig.from_dict(json.loads(str(data["config_json"])))
        state = {key[len("param/"):]: data[key] for key in data.files
                 if key.startswith("param/")}
    model = DPadModel(config)
    model.params.load_state(state)
    return model
