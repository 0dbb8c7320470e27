"""Multi-step forecasters mapping a (B, w, m) window to a (B, s, m) horizon.

All models consume min-max scaled inputs and produce outputs on the same
scale; un-scaling and clipping happen in the training/evaluation code.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .layers import Conv1d, DropoutSpec, Linear, Module, dropout, init_params, make_recurrent
from .tensor import Rng, ShapeError, Tensor

KINDS = ("proposed", "feed_forward", "elman", "gru", "lstm", "fc_cnn", "control", "chain")
PARAMETRIC = ("proposed", "feed_forward", "elman", "gru", "lstm", "fc_cnn")
CHANNEL_CHOICES = (8, 16, 32, 64, 128)


@dataclass
class BlockConfig:
    conv_out_channels: int = 128
    kernel_size: int = 3
    hidden_size: int = 128
    rnn_kind: str = "lstm"
    num_layers: int = 1
    bidirectional: bool = False
    dropout_p: float = 0.1
    # kernel 1 along the variable axis in the first block, so variables never mix
    isolate_variables: bool = False

    def __post_init__(self):
        if self.conv_out_channels < 1 or self.hidden_size < 1:
            raise ValueError("channels and hidden size must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.rnn_kind not in ("lstm", "gru", "elman"):
            raise ValueError(f"unknown recurrent kind {self.rnn_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_mode(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


class Forecaster(Module):
    kind = "base"
    trainable = True

    def __init__(self, w: int, s: int, m: int):
        if min(w, s, m) < 1:
            raise ValueError("w, s, m must be positive")
        self._w, self._s, self._m = w, s, m

    @property
    def w(self) -> int:
        return self._w

    @property
    def s(self) -> int:
        return self._s

    @property
    def m(self) -> int:
        return self._m

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 3 or x.shape[1:] != (self._w, self._m):
            raise ShapeError(f"{self.kind}: expected input (B, {self._w}, {self._m}), got {x.shape}")

    def forward(self, x: Tensor, mode: str = "eval", rng: Rng | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, mode="eval", rng=None):
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x)
        return self.forward(x, mode, rng)


class ForecastNet(Forecaster):
    """Two conv/recurrent/decoder blocks plus a linear input-to-output shortcut.

    Block alpha treats the w time steps as convolution channels over the m
    variables and decodes each variable position back to w values. The result
    (B, m, w) feeds block omega, which treats the m variables as channels over
    the w decoded steps and decodes its final hidden state to s * m values.
    """

    kind = "proposed"

    def __init__(self, w: int, s: int, m: int, cfg: BlockConfig | None = None):
        super().__init__(w, s, m)
        cfg = cfg or BlockConfig()
        self._cfg = cfg
        O, H, k = cfg.conv_out_channels, cfg.hidden_size, cfg.kernel_size
        rnn_args = (cfg.num_layers, cfg.bidirectional)
        self.alpha_conv = Conv1d(w, O, 1 if cfg.isolate_variables else k)
        self.alpha_rnn = make_recurrent(cfg.rnn_kind, O, H, *rnn_args)
        self.alpha_dec = Linear(self.alpha_rnn.output_size, w)
        self.omega_conv = Conv1d(m, O, k)
        self.omega_rnn = make_recurrent(cfg.rnn_kind, O, H, *rnn_args)
        self.omega_dec = Linear(self.omega_rnn.output_size, s * m)
        self.ar = Linear(w * m, s * m)

    @property
    def config(self) -> BlockConfig:
        return self._cfg

    def block_alpha(self, x: Tensor, train: bool, rng: Rng | None) -> Tensor:
        h = T.permute(self.alpha_conv(x), (0, 2, 1))  # (B, m, O)
        h = self.alpha_rnn(h, return_sequence=True)  # (B, m, H)
        h = T.relu(self.alpha_dec(h))  # (B, m, w)
        return dropout(h, DropoutSpec(self._cfg.dropout_p, "train" if train else "eval"), rng)

    def block_omega(self, xa: Tensor) -> Tensor:
        B = xa.shape[0]
        h = T.permute(self.omega_conv(xa), (0, 2, 1))  # (B, w, O)
        h = self.omega_rnn(h)  # (B, H)
        return T.reshape(self.omega_dec(h), (B, self._s, self._m))

    def shortcut(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        return T.reshape(self.ar(T.reshape(x, (B, self._w * self._m))), (B, self._s, self._m))

    def forward(self, x, mode="eval", rng=None):
        train = _check_mode(mode)
        return T.add(self.shortcut(x), self.block_omega(self.block_alpha(x, train, rng)))


class FeedForward(Forecaster):
    kind = "feed_forward"

    def __init__(self, w, s, m, hidden: int = 128, dropout_p: float = 0.1):
        super().__init__(w, s, m)
        self._p = dropout_p
        self.fc1 = Linear(w * m, hidden)
        self.fc2 = Linear(hidden, s * m)

    def forward(self, x, mode="eval", rng=None):
        train = _check_mode(mode)
        B = x.shape[0]
        h = T.relu(self.fc1(T.reshape(x, (B, self._w * self._m))))
        h = dropout(h, DropoutSpec(self._p, "train" if train else "eval"), rng)
        return T.reshape(self.fc2(h), (B, self._s, self._m))


class RecurrentBaseline(Forecaster):
    """Recurrent encoder over the window, final hidden state decoded linearly."""

    def __init__(self, w, s, m, rnn_kind: str = "lstm", hidden: int = 128, num_layers: int = 1, bidirectional: bool = False):
        super().__init__(w, s, m)
        self.kind = rnn_kind
        self.rnn = make_recurrent(rnn_kind, m, hidden, num_layers, bidirectional)
        self.head = Linear(self.rnn.output_size, s * m)

    def forward(self, x, mode="eval", rng=None):
        _check_mode(mode)
        return T.reshape(self.head(self.rnn(x)), (x.shape[0], self._s, self._m))


class FCCNN(Forecaster):
    """One same-length convolution (window steps as channels) and a linear head."""

    kind = "fc_cnn"

    def __init__(self, w, s, m, channels: int = 128, kernel_size: int = 3):
        super().__init__(w, s, m)
        self.conv = Conv1d(w, channels, kernel_size)
        self.head = Linear(channels * m, s * m)

    def forward(self, x, mode="eval", rng=None):
        _check_mode(mode)
        B = x.shape[0]
        h = self.conv(x)
        return T.reshape(self.head(T.reshape(h, (B, -1))), (B, self._s, self._m))


class ControlModel(Forecaster):
    """Predicts the per-variable window mean at every horizon step."""

    kind = "control"
    trainable = False

    def forward(self, x, mode="eval", rng=None):
        _check_mode(mode)
        return Tensor(forward_control(x.data, self._s))


def forward_control(x: np.ndarray, s: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ShapeError(f"control model expects (B, w>=1, m), got {x.shape}")
    mean = x.mean(axis=1, keepdims=True)
    return np.repeat(mean, s, axis=1)


# ---------------------------------------------------------------------------
# regression chain


class ChainFitError(ArithmeticError):
    pass


class ChainModel(Forecaster):
    """Per variable, one ridge-damped linear regressor per horizon step.

    The regressor for step t sees the w window values of its variable plus the
    t - 1 earlier steps of the chain and an intercept. Fitting feeds the true
    earlier targets into later links; prediction feeds the chain's own outputs.
    """

    kind = "chain"
    trainable = False

    def __init__(self, w, s, m, ridge: float = 1e-8):
        super().__init__(w, s, m)
        self._ridge = ridge
        self._coef: list[list[np.ndarray]] | None = None

    @property
    def coefficients(self):
        return self._coef

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "ChainModel":
        X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
        if X.shape[1:] != (self._w, self._m) or Y.shape[1:] != (self._s, self._m) or len(X) != len(Y):
            raise ShapeError(f"chain_fit: bad shapes {X.shape} / {Y.shape}")
        N = len(X)
        coef = []
        for v in range(self._m):
            links = []
            for t in range(self._s):
                A = np.concatenate([X[:, :, v], Y[:, :t, v], np.ones((N, 1))], axis=1)
                links.append(_ridge_solve(A, Y[:, t, v], self._ridge, f"variable {v}, step {t}"))
            coef.append(links)
        self._coef = coef
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self._coef is None:
            raise RuntimeError("chain model used before fit")
        X = np.asarray(X, dtype=np.float64)
        N = len(X)
        out = np.empty((N, self._s, self._m))
        for v in range(self._m):
            for t in range(self._s):
                A = np.concatenate([X[:, :, v], out[:, :t, v], np.ones((N, 1))], axis=1)
                out[:, t, v] = A @ self._coef[v][t]
        return out

    def forward(self, x, mode="eval", rng=None):
        _check_mode(mode)
        return Tensor(self.predict(x.data))

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(f"coef.{v}.{t}", c) for v, links in enumerate(self._coef) for t, c in enumerate(links)]

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self._coef = [[np.asarray(arrays[f"coef.{v}.{t}"]) for t in range(self._s)] for v in range(self._m)]


def _ridge_solve(A: np.ndarray, y: np.ndarray, ridge: float, where: str) -> np.ndarray:
    # min |Ax - y|^2 + ridge |x|^2 as an augmented least-squares problem, so the
    # conditioning is that of A itself rather than of A^T A
    n = A.shape[1]
    aug = np.vstack([A, math.sqrt(ridge) * np.eye(n)])
    rhs = np.concatenate([y, np.zeros(n)])
    with np.errstate(all="ignore"):
        sv = np.linalg.svd(aug, compute_uv=False) if np.all(np.isfinite(aug)) else np.array([np.inf, 0.0])
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(np.float64).eps:
        raise ChainFitError(f"chain_fit ({where}): least-squares system singular after damping, condition number {cond:.3e}")
    return np.linalg.lstsq(aug, rhs, rcond=None)[0]


def chain_fit(windows: np.ndarray, targets: np.ndarray, s: int, ridge: float = 1e-8) -> ChainModel:
    windows = np.asarray(windows)
    return ChainModel(windows.shape[1], s, windows.shape[2], ridge).fit(windows, targets)


def chain_predict(model: ChainModel, window: np.ndarray) -> np.ndarray:
    """Forecast for one (w, m) window or a (B, w, m) batch."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 2:
        return model.predict(window[None])[0]
    return model.predict(window)


# ---------------------------------------------------------------------------


def build_model(kind: str, w: int, s: int, m: int, cfg: BlockConfig | None = None, rng: Rng | None = None) -> Forecaster:
    """Construct and (for parametric kinds) initialize a forecaster."""
    cfg = cfg or BlockConfig()
    if kind == "proposed":
        model = ForecastNet(w, s, m, cfg)
    elif kind == "feed_forward":
        model = FeedForward(w, s, m, cfg.hidden_size, cfg.dropout_p)
    elif kind in ("elman", "gru", "lstm"):
        model = RecurrentBaseline(w, s, m, kind, cfg.hidden_size, cfg.num_layers, cfg.bidirectional)
    elif kind == "fc_cnn":
        model = FCCNN(w, s, m, cfg.conv_out_channels, cfg.kernel_size)
    elif kind == "control":
        model = ControlModel(w, s, m)
    elif kind == "chain":
        model = ChainModel(w, s, m)
    else:
        raise ValueError(f"unknown model kind {kind!r}; choose from {', '.join(KINDS)}")
    if kind in PARAMETRIC:
        init_params(model, rng if rng is not None else Rng(0))
    return model
