"""Losses, anomaly scores, optimizer, training loop and gradient verification."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F

from .graph import Graph
from .manifold import Euclidean, Lorentz, PoincareBall, get_manifold
from .network import GADNet, ReconAE, normalized_adjacency

logger = logging.getLogger(__name__)

__all__ = [
    "LossConfig",
    "GradReport",
    "TrainResult",
    "NonFiniteLossError",
    "fermi_dirac_prob",
    "fermi_dirac_logprob",
    "structural_loss",
    "contextual_loss",
    "anomaly_score",
    "RiemannianAdam",
    "train",
    "train_reconstruction",
    "score_nodes",
    "reconstruction_scores",
    "grad_check",
    "write_loss_curve",
]

_DTYPE = torch.float64
FD_EXP_CAP = 700.0


class NonFiniteLossError(FloatingPointError):
    """Raised when training produces a non-finite loss or gradient.

    ``state`` holds the parameters from the last finite step.
    """

    def __init__(self, message, state=None, epoch=None):
        super().__init__(message)
        self.state = state
        self.epoch = epoch


@dataclass
class LossConfig:
    """Loss and optimization settings.

    Parameters
    ----------
    alpha : float
        Weight of the contextual term; ``1 - alpha`` weights the structural term.
    fermi_r, fermi_t : float
        Fermi-Dirac radius and temperature.
    weight_decay : float
        Decoupled decay applied to weight matrices only.
    lr : float
        Learning rate (``0`` leaves parameters untouched).
    epochs : int
    batch_size : int or None
        Full batch when ``None``; otherwise a fresh random node partition per epoch.
    """

    alpha: float = 0.0
    fermi_r: float = 0.0
    fermi_t: float = 1.0
    weight_decay: float = 1e-3
    lr: float = 5e-3
    epochs: int = 300
    batch_size: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.fermi_t <= 0:
            raise ValueError("fermi_t must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def fermi_dirac_logprob(sqdist, r=0.0, t=1.0):
    """Log edge and non-edge probabilities from squared distances.

    The exponent ``(d^2 - r) / t`` is evaluated with ``d^2`` capped at
    ``700 t`` and both logs come from the stable softplus.
    """
    if t <= 0:
        raise ValueError("temperature t must be positive")
    sqdist = torch.as_tensor(sqdist, dtype=_DTYPE)
    u = (torch.clamp(sqdist, max=FD_EXP_CAP * t) - r) / t
    return -F.softplus(u), -F.softplus(-u)


def fermi_dirac_prob(d, r=0.0, t=1.0):
    """Edge and non-edge probabilities for geodesic distance ``d``.

    Returns
    -------
    p_edge, p_nonedge : ndarray
        ``1 / (1 + exp((d^2 - r) / t))`` and its complement.
    """
    d = torch.as_tensor(np.asarray(d, dtype=np.float64))
    lpe, lpn = fermi_dirac_logprob(d * d, r, t)
    return torch.exp(lpe).numpy(), torch.exp(lpn).numpy()


def connected_pairs(adjacency, n):
    """Row/column indices of ``A + I`` as long tensors."""
    if torch.is_tensor(adjacency):
        adj = adjacency.to_dense() if adjacency.is_sparse else adjacency
        idx = torch.nonzero(adj.to(torch.bool) | torch.eye(n, dtype=torch.bool), as_tuple=True)
        return idx[0], idx[1]
    A = (sp.csr_matrix(adjacency) != 0).astype(np.int8) + sp.identity(n, dtype=np.int8, format="csr")
    coo = A.tocoo()
    return torch.from_numpy(coo.row.astype(np.int64)), torch.from_numpy(coo.col.astype(np.int64))


class _BalancedFermiDirac(torch.autograd.Function):
    """Per-node balanced Fermi-Dirac loss from a squared-distance matrix.

    Forward and backward each touch the dense matrix a handful of times;
    connected pairs are handled through their sparse indices.
    """

    @staticmethod
    def forward(ctx, D2, rows, cols, n_conn, n_disc, r, t):
        n = D2.shape[0]
        cap = FD_EXP_CAP * t
        u = (torch.clamp(D2, max=cap) - r) / t
        sp_neg = F.softplus(-u)
        u_c = u[rows, cols]
        conn = torch.zeros(n, dtype=D2.dtype).index_add_(0, rows, F.softplus(u_c))
        disc = sp_neg.sum(1) - torch.zeros(n, dtype=D2.dtype).index_add_(0, rows, sp_neg[rows, cols])
        has_disc = n_disc > 0
        term_d = torch.where(has_disc, disc / n_disc.clamp_min(1.0), torch.zeros_like(disc))
        ctx.save_for_backward(u, D2, rows, cols, n_conn, n_disc)
        ctx.r, ctx.t = r, t
        return conn / n_conn + term_d

    @staticmethod
    def backward(ctx, grad):
        u, D2, rows, cols, n_conn, n_disc = ctx.saved_tensors
        t = ctx.t
        w_d = torch.where(n_disc > 0, grad / (n_disc.clamp_min(1.0) * t), torch.zeros_like(grad))
        G = torch.sigmoid(-u).mul_(-w_d[:, None])
        G[rows, cols] = torch.sigmoid(u[rows, cols]) * (grad / (n_conn * t))[rows]
        G.masked_fill_(D2 > FD_EXP_CAP * t, 0.0)
        return G, None, None, None, None, None, None


def structural_loss(H, manifold, adjacency, r=0.0, t=1.0):
    """Balanced Fermi-Dirac loss per node.

    Each node averages ``-log p_edge`` over its neighbours (itself included)
    and ``-log p_nonedge`` over the remaining nodes of the batch, and adds the
    two means. An empty class contributes 0.

    Parameters
    ----------
    H : Tensor of shape (n, d)
        Structural embeddings on ``manifold``.
    adjacency : sparse matrix, bool Tensor or ``(rows, cols)`` pair
        Batch adjacency without self-loops, or precomputed indices of ``A + I``.
    """
    if t <= 0:
        raise ValueError("temperature t must be positive")
    manifold = get_manifold(manifold)
    n = H.shape[0]
    rows, cols = adjacency if isinstance(adjacency, tuple) else connected_pairs(adjacency, n)
    n_conn = torch.bincount(rows, minlength=n).to(_DTYPE)
    n_disc = n - n_conn
    return _BalancedFermiDirac.apply(manifold.pairwise_sqdist(H), rows, cols, n_conn, n_disc, float(r), float(t))


def contextual_loss(X0, Xhat, manifold):
    """Per-node distance between inputs and reconstructions."""
    manifold = get_manifold(manifold)
    if isinstance(manifold, Euclidean):
        return torch.linalg.vector_norm(X0 - Xhat, dim=-1)
    return manifold.dist(X0, Xhat)


def anomaly_score(trace, adjacency, manifold, alpha=0.0, r=0.0, t=1.0):
    """``alpha * l_c + (1 - alpha) * l_s`` per node; also returns both terms."""
    ls = structural_loss(trace.H, manifold, adjacency, r, t)
    lc = contextual_loss(trace.x0, trace.Xhat, manifold)
    return alpha * lc + (1.0 - alpha) * ls, lc, ls


def _egrad2rgrad(manifold, p, g):
    if isinstance(manifold, PoincareBall):
        return g / manifold.lambda_x(p) ** 2
    if isinstance(manifold, Lorentz):
        g = g.clone()
        g[..., 0] = -g[..., 0]
        return g + manifold.inner(p, g, keepdim=True) * p
    return g


class RiemannianAdam(torch.optim.Optimizer):
    """Adam on products of Euclidean and hyperbolic parameters.

    Plain tensors follow the usual Adam update, so on a model whose
    parameters are all Euclidean-valued this optimizer is exactly Adam.
    A parameter carrying a ``manifold`` attribute instead receives the
    Riemannian gradient, moves along the exponential map and has its first
    moment transported to the new point (Lorentz only; on the ball the
    conformal coordinates are kept). ``weight_decay`` is decoupled.
    """

    def __init__(self, params, lr=5e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            lr, (b1, b2), eps, wd = group["lr"], group["betas"], group["eps"], group["weight_decay"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                k = state["step"]
                m, v = state["exp_avg"], state["exp_avg_sq"]
                manifold = getattr(p, "manifold", None)
                grad = p.grad if manifold is None else _egrad2rgrad(manifold, p, p.grad)
                m.mul_(b1).add_(grad, alpha=1 - b1)
                if manifold is None:
                    if wd:
                        p.mul_(1 - lr * wd)
                    v.mul_(b2).addcmul_(grad, grad, value=1 - b2)
                    denom = (v / (1 - b2 ** k)).sqrt_().add_(eps)
                    p.addcdiv_(m, denom, value=-lr / (1 - b1 ** k))
                    continue
                sq = manifold.inner(grad, grad, keepdim=True) if isinstance(manifold, Lorentz) \
                    else (grad * grad).sum(-1, keepdim=True)
                v.mul_(b2).add_(sq.expand_as(v), alpha=1 - b2)
                direction = (m / (1 - b1 ** k)) / ((v / (1 - b2 ** k)).sqrt() + eps)
                new = manifold.expmap(p, -lr * direction)
                new = manifold.proj(new)
                if isinstance(manifold, Lorentz):
                    m.copy_(manifold.transp(p, new, m))
                p.copy_(new)
        return loss


@dataclass
class TrainResult:
    model: torch.nn.Module
    curve: list = field(default_factory=list)

    @property
    def losses(self):
        return [row["loss"] for row in self.curve]


class _GraphTensors:
    """Per-graph tensors reused across epochs."""

    def __init__(self, graph: Graph, message_passing: bool):
        self.graph = graph
        self.X = torch.from_numpy(np.array(graph.features, dtype=np.float64))
        self.mp = message_passing
        self._full = None
        self._x0 = None

    def embedded(self, model, nodes=None):
        """Input embedding on the model's manifold (parameter free, so cached)."""
        if self._x0 is None:
            with torch.no_grad():
                self._x0 = model.embed_input(self.X)
        return self._x0 if nodes is None else self._x0[torch.as_tensor(nodes)]

    def batch(self, nodes=None):
        if nodes is None:
            if self._full is None:
                A = self.graph.adjacency
                self._full = (self.X, connected_pairs(A, A.shape[0]), normalized_adjacency(A) if self.mp else None)
            return self._full
        idx = np.asarray(nodes)
        A = self.graph.adjacency[idx][:, idx]
        return self.X[idx], connected_pairs(A, idx.size), normalized_adjacency(A) if self.mp else None


def _partitions(n, batch_size, generator):
    if batch_size is None or batch_size >= n:
        return [None]
    perm = torch.randperm(n, generator=generator).numpy()
    return [np.sort(perm[i:i + batch_size]) for i in range(0, n, batch_size)]


def _make_optimizer(model, cfg: LossConfig):
    weights = model.weight_parameters() if hasattr(model, "weight_parameters") else \
        [p for n_, p in model.named_parameters() if n_.endswith("weight")]
    ids = {id(p) for p in weights}
    others = [p for p in model.parameters() if id(p) not in ids]
    groups = [{"params": weights, "weight_decay": cfg.weight_decay}, {"params": others, "weight_decay": 0.0}]
    return RiemannianAdam([g for g in groups if g["params"]], lr=cfg.lr)


def _gad_loss(model, tensors, nodes, cfg):
    # With alpha = 0 the decoder gets no gradient, so it is skipped and l_c reported as nan.
    X, A, adj_norm = tensors.batch(nodes)
    decode = cfg.alpha > 0
    trace = model(X, adj_norm, decode=decode, x0=tensors.embedded(model, nodes))
    ls_m = structural_loss(trace.H, model.manifold, A, cfg.fermi_r, cfg.fermi_t).mean()
    if not decode:
        return ls_m, torch.tensor(float("nan"), dtype=_DTYPE), ls_m
    lc_m = contextual_loss(trace.x0, trace.Xhat, model.manifold).mean()
    return cfg.alpha * lc_m + (1 - cfg.alpha) * ls_m, lc_m, ls_m


def _recon_loss(model, tensors, nodes, cfg):
    X, _, adj_norm = tensors.batch(nodes)
    err = ((model(X, adj_norm) - X) ** 2).mean(1)
    m = err.mean()
    return m, m, torch.zeros((), dtype=_DTYPE)


def _fit(model, graph, cfg, seed, loss_fn, mp):
    gen = torch.Generator().manual_seed(int(seed))
    torch.manual_seed(int(seed))
    tensors = _GraphTensors(graph, mp)
    opt = _make_optimizer(model, cfg)
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        tot = np.zeros(3)
        count = 0
        for nodes in _partitions(graph.num_nodes, cfg.batch_size, gen):
            size = graph.num_nodes if nodes is None else len(nodes)
            snapshot = copy.deepcopy(model.state_dict())
            loss, lc, ls = loss_fn(model, tensors, nodes, cfg)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}", snapshot, epoch)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            for name, p in model.named_parameters():
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NonFiniteLossError(f"non-finite gradient in {name!r} at epoch {epoch}", snapshot, epoch)
            opt.step()
            tot += size * np.array([loss.item(), lc.item(), ls.item()])
            count += size
        tot = tot / count
        curve.append({"epoch": epoch, "loss": tot[0], "loss_c": tot[1], "loss_s": tot[2]})
    model.eval()
    return TrainResult(model, curve)


def train(model: GADNet, graph: Graph, cfg: LossConfig | None = None, seed: int = 0) -> TrainResult:
    """Optimize ``model`` on ``graph`` and return it with its loss curve.

    The run is deterministic for a fixed seed: dropout masks and batch
    partitions are drawn from torch generators seeded by ``seed``.
    """
    cfg = cfg or LossConfig()
    return _fit(model, graph, cfg, seed, _gad_loss, model.config.message_passing)


def train_reconstruction(model: ReconAE, graph: Graph, cfg: LossConfig | None = None, seed: int = 0):
    """Train an MLPAE/GCNAE with mean squared attribute reconstruction error."""
    cfg = cfg or LossConfig(weight_decay=0.0)
    return _fit(model, graph, cfg, seed, _recon_loss, model.message_passing)


@torch.no_grad()
def score_nodes(model: GADNet, graph: Graph, cfg: LossConfig | None = None, seed: int = 0):
    """Per-node anomaly scores and the two loss terms, in evaluation mode.

    Returns
    -------
    score, loss_c, loss_s : ndarray of shape (n_nodes,)
    """
    cfg = cfg or LossConfig()
    model.eval()
    tensors = _GraphTensors(graph, model.config.message_passing)
    n = graph.num_nodes
    out = np.zeros((3, n))
    gen = torch.Generator().manual_seed(int(seed))
    for nodes in _partitions(n, cfg.batch_size, gen):
        X, A, adj_norm = tensors.batch(nodes)
        trace = model(X, adj_norm)
        s, lc, ls = anomaly_score(trace, A, model.manifold, cfg.alpha, cfg.fermi_r, cfg.fermi_t)
        idx = slice(None) if nodes is None else nodes
        out[:, idx] = torch.stack([s, lc, ls]).numpy()
    return out[0], out[1], out[2]


@torch.no_grad()
def reconstruction_scores(model: ReconAE, graph: Graph):
    """Per-node mean squared reconstruction error."""
    model.eval()
    X, _, adj_norm = _GraphTensors(graph, model.message_passing).batch()
    return ((model(X, adj_norm) - X) ** 2).mean(1).numpy()


@dataclass
class GradReport:
    """Blockwise comparison of autograd and central finite differences.

    ``errors`` maps each parameter name to
    ``max|analytic - numeric| / max(max|numeric|, 1e-8)``.
    """

    errors: dict
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst(self) -> str:
        return max(self.errors, key=self.errors.get) if self.errors else ""

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return f"GradReport({status}, max_rel_err={self.max_error:.3e} at {self.worst!r})"


def grad_check(model, graph: Graph, cfg: LossConfig | None = None, tol=1e-4, rel_step=1e-5) -> GradReport:
    """Compare autograd gradients of the training loss with central differences.

    The model is put in evaluation mode so that dropout does not perturb the
    loss. The step for scalar ``theta`` is ``rel_step * max(1, |theta|)``.
    """
    cfg = cfg or LossConfig()
    model.eval()
    is_gad = isinstance(model, GADNet)
    tensors = _GraphTensors(graph, model.config.message_passing if is_gad else model.message_passing)
    loss_fn = _gad_loss if is_gad else _recon_loss

    def value():
        return loss_fn(model, tensors, None, cfg)[0]

    model.zero_grad(set_to_none=True)
    loss = value()
    loss.backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
            if not torch.isfinite(analytic).all():
                raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for k in range(flat.numel()):
                theta = flat[k].item()
                h = rel_step * max(1.0, abs(theta))
                flat[k] = theta + h
                up = value().item()
                flat[k] = theta - h
                down = value().item()
                flat[k] = theta
                nflat[k] = (up - down) / (2 * h)
            scale = max(numeric.abs().max().item(), 1e-8)
            errors[name] = (analytic - numeric).abs().max().item() / scale
    model.zero_grad(set_to_none=True)
    return GradReport(errors, tol)


def write_loss_curve(curve, path):
    """Write ``epoch, loss, loss_c, loss_s`` rows as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "loss_c", "loss_s"])
        for row in curve:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in ("loss", "loss_c", "loss_s")])
