"""Layers and autoencoders in Euclidean, Lorentz and Poincare geometry.

The detector network has two encoding layers, a one-layer structural head
whose output feeds the edge decoder, and a two-layer attribute decoder. Each
layer is a geometry-specific linear map followed by batch centralization.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F
from torch import nn

from .manifold import Euclidean, Lorentz, ManifoldError, PoincareBall, _norm, get_manifold

__all__ = [
    "ModelConfig",
    "ForwardTrace",
    "EuclideanLinear",
    "LorentzLinear",
    "PoincareLinear",
    "Centralize",
    "HypLayer",
    "GADNet",
    "ReconAE",
    "normalized_adjacency",
    "message_passing_premix",
    "lemma1_oracle",
    "save_checkpoint",
    "load_checkpoint",
    "build_model",
]

_DTYPE = torch.float64


@dataclass
class ModelConfig:
    geometry: str = "poincare"
    feature_dim: int = 0
    hidden: int = 32
    message_passing: bool = False
    dropout: float = 0.1
    alpha: float = 0.0
    fermi_r: float = 0.0
    fermi_t: float = 1.0

    def __post_init__(self):
        get_manifold(self.geometry)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class ForwardTrace:
    """Outputs of one forward pass.

    ``x0`` is the input mapped onto the manifold, ``z`` the encoder output,
    ``H`` the structural embeddings and ``Xhat`` the attribute reconstruction.
    """

    x0: torch.Tensor
    z: torch.Tensor
    H: torch.Tensor
    Xhat: torch.Tensor
    layers: dict = field(default_factory=dict)


def _to_tensor(X):
    # graph features are read-only arrays; copy those rather than alias them
    if isinstance(X, np.ndarray) and not X.flags.writeable:
        X = X.copy()
    return torch.as_tensor(X, dtype=_DTYPE)


def _uniform_(t: torch.Tensor, fan_in: int):
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        t.uniform_(-bound, bound)
    return t


class EuclideanLinear(nn.Module):
    """``ReLU(W x + b)``."""

    def __init__(self, in_dim, out_dim, activation=True):
        super().__init__()
        self.weight = nn.Parameter(_uniform_(torch.empty(out_dim, in_dim, dtype=_DTYPE), in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=_DTYPE))
        self.activation = activation

    def forward(self, x):
        y = x @ self.weight.T + self.bias
        return F.relu(y) if self.activation else y


class LorentzLinear(nn.Module):
    """Fully hyperbolic linear map between hyperboloids.

    ``h = lam * sigmoid(v.x + b') * (W x + b) / |W x + b|`` gives the spatial
    part of the output and the time coordinate is ``sqrt(|h|^2 + 1)``. The
    range scale ``lam = exp(log_scale)`` stays positive.
    """

    def __init__(self, in_dim, out_dim):
        super().__init__()
        amb = in_dim + 1
        self.weight = nn.Parameter(_uniform_(torch.empty(out_dim, amb, dtype=_DTYPE), amb))
        self.v = nn.Parameter(_uniform_(torch.empty(amb, dtype=_DTYPE), amb))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=_DTYPE))
        self.bias_time = nn.Parameter(torch.zeros((), dtype=_DTYPE))
        self.log_scale = nn.Parameter(torch.zeros((), dtype=_DTYPE))

    @property
    def scale(self):
        return torch.exp(self.log_scale)

    def forward(self, x):
        wx = x @ self.weight.T + self.bias
        gate = torch.sigmoid(x @ self.v + self.bias_time).unsqueeze(-1)
        h = self.scale * gate * wx / _norm(wx)
        time = torch.sqrt((h * h).sum(-1, keepdim=True) + 1.0)
        return torch.cat([time, h], dim=-1)


class PoincareLinear(nn.Module):
    """Mobius matrix-vector product, Euclidean bias moved by parallel transport,
    then ReLU in the tangent space at the origin."""

    def __init__(self, in_dim, out_dim, ball=None):
        super().__init__()
        self.ball = ball or PoincareBall()
        self.weight = nn.Parameter(_uniform_(torch.empty(out_dim, in_dim, dtype=_DTYPE), in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim, dtype=_DTYPE))

    def forward(self, x):
        ball = self.ball
        y = ball.proj(ball.mobius_matvec(self.weight, x))
        b = self.bias.expand_as(y)
        z = ball.proj(ball.expmap(y, ball.transp0(y, b)))
        return ball.proj(ball.expmap0(F.relu(ball.logmap0(z))))


class Centralize(nn.Module):
    """Remove the batch mean in the geometry of ``manifold``."""

    def __init__(self, manifold):
        super().__init__()
        self.manifold = manifold

    def forward(self, x):
        if x.shape[-2] == 0:
            raise ValueError("cannot centralize an empty batch")
        m = self.manifold
        if isinstance(m, Euclidean):
            return x - x.mean(-2, keepdim=True)
        if isinstance(m, PoincareBall):
            t = m.logmap0(x)
            return m.expmap0(t - t.mean(-2, keepdim=True))
        mu = m.centroid(x)
        o = m.origin(x.shape[-1] - 1).to(x)
        t = m.transp(mu, o, m.logmap(mu, x))
        return m.expmap0_spatial(t[..., 1:])


def centralize(geometry, batch):
    """Functional form of :class:`Centralize`."""
    return Centralize(get_manifold(geometry))(batch)


def to_tangent0(manifold, x):
    """Coordinates of ``log_o(x)`` (spatial part only for Lorentz)."""
    if isinstance(manifold, Lorentz):
        return manifold.logmap0_spatial(x)
    return manifold.logmap0(x)


def from_tangent0(manifold, t):
    if isinstance(manifold, Lorentz):
        return manifold.expmap0_spatial(t)
    return manifold.expmap0(t)


def normalized_adjacency(adjacency) -> torch.Tensor:
    """``D^-1/2 (A + I) D^-1/2`` as a sparse torch tensor."""
    A = sp.csr_matrix(adjacency, dtype=np.float64)
    A = A + sp.identity(A.shape[0], dtype=np.float64, format="csr")
    d = np.asarray(A.sum(1)).ravel()
    dinv = sp.diags(1.0 / np.sqrt(d))
    M = (dinv @ A @ dinv).tocoo()
    idx = torch.as_tensor(np.vstack([M.row, M.col]), dtype=torch.long)
    return torch.sparse_coo_tensor(idx, torch.as_tensor(M.data, dtype=_DTYPE), M.shape,
                                   check_invariants=False).coalesce()


def message_passing_premix(manifold, adj_norm, x):
    """Aggregate neighbour representations in the tangent space at the origin."""
    manifold = get_manifold(manifold)
    if adj_norm is None:
        return x
    if not torch.is_tensor(adj_norm):
        adj_norm = normalized_adjacency(adj_norm)
    t = to_tangent0(manifold, x)
    return from_tangent0(manifold, torch.sparse.mm(adj_norm, t))


class HypLayer(nn.Module):
    """[message passing] -> linear -> centralization -> [dropout in T_o]."""

    def __init__(self, manifold, in_dim, out_dim, message_passing=False, dropout=0.0, activation=True):
        super().__init__()
        self.manifold = manifold
        if isinstance(manifold, Lorentz):
            self.linear = LorentzLinear(in_dim, out_dim)
        elif isinstance(manifold, PoincareBall):
            self.linear = PoincareLinear(in_dim, out_dim, manifold)
        else:
            self.linear = EuclideanLinear(in_dim, out_dim, activation=activation)
        self.centralize = Centralize(manifold)
        self.message_passing = message_passing
        self.dropout = dropout

    def forward(self, x, adj_norm=None):
        if self.message_passing:
            x = message_passing_premix(self.manifold, adj_norm, x)
        x = self.centralize(self.linear(x))
        if self.dropout and self.training:
            if isinstance(self.manifold, Euclidean):
                x = F.dropout(x, self.dropout, True)
            else:
                t = to_tangent0(self.manifold, x)
                x = from_tangent0(self.manifold, F.dropout(t, self.dropout, True))
        return x


class GADNet(nn.Module):
    """Two encoder layers, a structural head and a two-layer attribute decoder.

    Message passing, when enabled, only precedes the encoder layers.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.manifold = get_manifold(config.geometry)
        m, n, h = self.manifold, config.feature_dim, config.hidden
        mp, p = config.message_passing, config.dropout
        self.encoder = nn.ModuleList([HypLayer(m, n, h, mp, p), HypLayer(m, h, h, mp, p)])
        self.struct_head = HypLayer(m, h, h)
        self.decoder = nn.ModuleList([HypLayer(m, h, h, dropout=p), HypLayer(m, h, n)])
        self.debug = bool(os.environ.get("HYPGAD_DEBUG"))

    def embed_input(self, X):
        X = _to_tensor(X)
        m = self.manifold
        if isinstance(m, Lorentz):
            return m.expmap0_spatial(X)
        if isinstance(m, PoincareBall):
            return m.expmap0(X)
        return X

    def _check(self, name, x):
        if not torch.isfinite(x).all():
            raise FloatingPointError(f"non-finite activation after layer {name!r}")
        if self.debug:
            try:
                self.manifold.check_point(x.detach())
            except ManifoldError as exc:
                raise ManifoldError(f"layer {name!r}: {exc}") from None

    def forward(self, X, adj_norm=None, decode=True, x0=None) -> ForwardTrace:
        """Run the network on a node batch.

        ``decode=False`` skips the attribute decoder (``Xhat`` is then
        ``None``); ``x0`` may pass a cached input embedding.
        """
        if x0 is None:
            x0 = self.embed_input(X)
        x = x0
        layers = {}
        for i, layer in enumerate(self.encoder):
            x = layer(x, adj_norm)
            self._check(f"encoder.{i}", x)
            layers[f"encoder.{i}"] = x
        z = x
        H = self.struct_head(z)
        self._check("struct_head", H)
        if not decode:
            return ForwardTrace(x0=x0, z=z, H=H, Xhat=None, layers=layers)
        x = z
        for i, layer in enumerate(self.decoder):
            x = layer(x)
            self._check(f"decoder.{i}", x)
            layers[f"decoder.{i}"] = x
        return ForwardTrace(x0=x0, z=z, H=H, Xhat=x, layers=layers)

    def weight_parameters(self):
        return [p for name, p in self.named_parameters() if name.endswith("weight")]

    def other_parameters(self):
        return [p for name, p in self.named_parameters() if not name.endswith("weight")]


class ReconAE(nn.Module):
    """Plain Euclidean attribute autoencoder (MLPAE, or GCNAE with message passing).

    Two ReLU encoding layers, one ReLU decoding layer and a linear output
    layer. With ``message_passing`` every layer first averages its input over
    the normalized neighbourhood.
    """

    def __init__(self, in_dim, hidden=32, message_passing=False, dropout=0.0):
        super().__init__()
        dims = [in_dim, hidden, hidden, hidden, in_dim]
        self.layers = nn.ModuleList(
            EuclideanLinear(a, b, activation=i < 3) for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
        )
        self.message_passing = message_passing
        self.dropout = dropout
        self.config = {"in_dim": in_dim, "hidden": hidden, "message_passing": message_passing, "dropout": dropout}

    def forward(self, X, adj_norm=None):
        x = _to_tensor(X)
        for i, layer in enumerate(self.layers):
            if self.message_passing and adj_norm is not None:
                x = torch.sparse.mm(adj_norm, x)
            x = layer(x)
            if self.dropout and self.training and i < len(self.layers) - 1:
                x = F.dropout(x, self.dropout, True)
        return x


def lemma1_oracle(n_normal: int, n_nodes: int):
    """Optimal reconstruction errors of the idealized rank-one linear MLPAE and
    the fully oversmoothed GCNAE on two orthogonal unit feature vectors.

    Returns ``(mlpae_normal, mlpae_outlier, gcnae_normal, gcnae_outlier)``.
    """
    if not n_nodes / 2 < n_normal <= n_nodes:
        raise ValueError("need n_nodes / 2 < n_normal <= n_nodes")
    frac = n_normal / n_nodes
    return 0.0, 1.0, math.sqrt(2) * (1 - frac), math.sqrt(2) * frac


_MAGIC = "hypgad-checkpoint-v1"


def save_checkpoint(model: nn.Module, path, config=None):
    """Write a JSON header line followed by little-endian float64 parameters.

    The header lists parameter names and shapes in ``state_dict`` order; the
    binary payload concatenates the flattened tensors in the same order.
    """
    state = model.state_dict()
    if config is None:
        config = getattr(model, "config", {})
        config = asdict(config) if is_dataclass(config) else dict(config)
    header = {
        "format": _MAGIC,
        "model": type(model).__name__,
        "config": config,
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    flat = np.concatenate([v.detach().cpu().numpy().astype("<f8").ravel() for v in state.values()]) \
        if state else np.empty(0, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(header, {name: tensor})``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if header.get("format") != _MAGIC:
        raise ValueError(f"{path}: not a hypgad checkpoint")
    state, off = {}, 0
    for p in header["params"]:
        size = int(np.prod(p["shape"])) if p["shape"] else 1
        state[p["name"]] = torch.tensor(payload[off:off + size].reshape(p["shape"]), dtype=_DTYPE)
        off += size
    if off != payload.size:
        raise ValueError(f"{path}: payload size mismatch")
    return header, state


def build_model(header, state) -> nn.Module:
    if header["model"] == "GADNet":
        model = GADNet(ModelConfig(**header["config"]))
    elif header["model"] == "ReconAE":
        model = ReconAE(**header["config"])
    else:
        raise ValueError(f"unknown model type {header['model']!r}")
    model.load_state_dict(state)
    return model
