"""Geometry kernels for Euclidean space, the Lorentz model and the Poincare ball.

Curvature is fixed to -1 for both hyperbolic models. Every operation acts on
the last axis and broadcasts over the leading ones. Operations are written
with torch so they can be differentiated, but each public method also
accepts numpy arrays and then returns numpy arrays.

Points of the Lorentz model live in ``R^(n+1)`` with the time coordinate
first; points of the ball and of Euclidean space in ``R^n``.
"""

from __future__ import annotations

import functools
import math

import numpy as np
import torch

__all__ = [
    "Euclidean",
    "Lorentz",
    "PoincareBall",
    "ManifoldError",
    "get_manifold",
    "arcosh",
    "EPS_PROJ",
    "MIN_NORM",
]

EPS_PROJ = 1e-5
MIN_NORM = 1e-15
_DTYPE = torch.float64


class ManifoldError(ValueError):
    pass


class _Arcosh(torch.autograd.Function):
    """acosh(max(z, 1)) with a derivative that stays finite at z = 1."""

    @staticmethod
    def forward(ctx, z):
        z = z.clamp_min(1.0)
        ctx.save_for_backward(z)
        return torch.acosh(z)

    @staticmethod
    def backward(ctx, grad):
        (z,) = ctx.saved_tensors
        return grad / torch.sqrt((z * z - 1.0).clamp_min(MIN_NORM))


def arcosh(z):
    return _Arcosh.apply(z)


class _ArcoshSq(torch.autograd.Function):
    """acosh(max(z, 1))**2, whose derivative tends to 2 as z -> 1."""

    @staticmethod
    def forward(ctx, z):
        z = z.clamp_min(1.0)
        a = torch.acosh(z)
        ctx.save_for_backward(z, a)
        return a * a

    @staticmethod
    def backward(ctx, grad):
        z, a = ctx.saved_tensors
        w = z - 1.0
        ratio = torch.where(w < 1e-6, 1.0 - w / 3.0, a / torch.sqrt((z * z - 1.0).clamp_min(MIN_NORM)))
        return grad * 2.0 * ratio


def arcosh_sq(z):
    return _ArcoshSq.apply(z)


def _asinh_of_sqrt(q, scale):
    """``2 asinh(sqrt(q) / scale)`` with an exact zero and zero gradient at ``q <= 0``."""
    pos = q > 0
    r = torch.sqrt(torch.where(pos, q, torch.ones_like(q)))
    return torch.where(pos, 2.0 * torch.asinh(r / scale), torch.zeros_like(q))


def _artanh(x):
    x = x.clamp(-1 + MIN_NORM, 1 - MIN_NORM)
    return torch.atanh(x)


def _norm(x, keepdim=True):
    return torch.sqrt((x * x).sum(-1, keepdim=keepdim).clamp_min(MIN_NORM ** 2))


def _numpy_compat(fn):
    """Let a tensor method accept and return numpy arrays."""

    @functools.wraps(fn)
    def wrapper(self, *args, **kwargs):
        if not any(isinstance(a, np.ndarray) for a in args):
            return fn(self, *args, **kwargs)
        conv = [torch.as_tensor(a, dtype=_DTYPE) if isinstance(a, (np.ndarray, float, int)) else a for a in args]
        out = fn(self, *conv, **kwargs)
        if isinstance(out, tuple):
            return tuple(o.detach().numpy() if torch.is_tensor(o) else o for o in out)
        return out.detach().numpy() if torch.is_tensor(out) else out

    return wrapper


class _Manifold:
    name = "base"
    hyperbolic = False

    def ambient_dim(self, dim: int) -> int:
        return dim

    def origin(self, dim: int, dtype=_DTYPE):
        return torch.zeros(self.ambient_dim(dim), dtype=dtype)

    def is_origin(self, x, atol=1e-12) -> bool:
        x = torch.as_tensor(x, dtype=_DTYPE)
        return bool(torch.allclose(x, self.origin(self.intrinsic_dim(x.shape[-1])).expand_as(x), atol=atol))

    def intrinsic_dim(self, ambient: int) -> int:
        return ambient

    @_numpy_compat
    def pairwise_dist(self, X):
        """Distance matrix between all rows of ``X`` without an explicit loop."""
        D = self._pairwise(X)
        n = D.shape[-1]
        return D * (1.0 - torch.eye(n, dtype=D.dtype))

    @_numpy_compat
    def pairwise_sqdist(self, X):
        """Squared distance matrix with a zero diagonal; smooth at coincident rows.

        Built from the Gram matrix for speed, so off-diagonal entries of
        coincident rows carry rounding error. Use :meth:`pairwise_dist` when
        accuracy matters more than speed.
        """
        D2 = self._pairwise_sq(X)
        D2.diagonal(dim1=-2, dim2=-1).zero_()
        return D2

    def _pairwise_sq(self, X):
        # Gram form: much faster than exact differences, rounding error ~1e-16 |x|^2
        sq = (X * X).sum(-1)
        return (sq[..., :, None] + sq[..., None, :] - 2.0 * X @ X.transpose(-1, -2)).clamp_min(0.0)

    def __repr__(self):
        return f"{type(self).__name__}()"


class Euclidean(_Manifold):
    name = "euclidean"

    @_numpy_compat
    def dist(self, x, y):
        return torch.sqrt(((x - y) ** 2).sum(-1))

    @_numpy_compat
    def expmap(self, x, v):
        return x + v

    @_numpy_compat
    def expmap0(self, v):
        return v

    @_numpy_compat
    def logmap(self, x, y):
        return y - x

    @_numpy_compat
    def logmap0(self, y):
        return y

    @_numpy_compat
    def transp(self, x, y, v):
        return v

    @_numpy_compat
    def proj(self, x):
        return x

    def check_point(self, x, atol=1e-9):
        if not torch.isfinite(torch.as_tensor(x)).all():
            raise ManifoldError("non-finite coordinates")

    def _pairwise(self, X):
        return torch.cdist(X, X, compute_mode="donot_use_mm_for_euclid_dist")

    def _pairwise_sq(self, X):
        # Gram form: much faster than exact differences, rounding error ~1e-16 |x|^2
        sq = (X * X).sum(-1)
        return (sq[..., :, None] + sq[..., None, :] - 2.0 * X @ X.transpose(-1, -2)).clamp_min(0.0)


class Lorentz(_Manifold):
    """Hyperboloid ``<x, x>_L = -1, x_0 > 0`` in Minkowski space."""

    name = "lorentz"
    hyperbolic = True

    def ambient_dim(self, dim):
        return dim + 1

    def intrinsic_dim(self, ambient):
        return ambient - 1

    def origin(self, dim, dtype=_DTYPE):
        o = torch.zeros(dim + 1, dtype=dtype)
        o[0] = 1.0
        return o

    @_numpy_compat
    def inner(self, x, y, keepdim=False):
        prod = x * y
        out = prod[..., 1:].sum(-1) - prod[..., 0]
        return out.unsqueeze(-1) if keepdim else out

    def minkowski_inner(self, x, y):
        return self.inner(x, y)

    def _tnorm(self, v):
        return torch.sqrt(self.inner(v, v, keepdim=True).clamp_min(MIN_NORM ** 2))

    @_numpy_compat
    def dist(self, x, y):
        """``acosh(-<x, y>_L)``, evaluated as ``2 asinh(|x - y|_L / 2)``.

        The two agree on the hyperboloid; the second keeps full precision for
        nearby points and is exactly 0 for ``x = y``.
        """
        diff = x - y
        return _asinh_of_sqrt(self.inner(diff, diff), 2.0)

    @_numpy_compat
    def expmap(self, x, v):
        phi = self._tnorm(v)
        return torch.cosh(phi) * x + torch.sinh(phi) / phi * v

    @_numpy_compat
    def expmap0(self, v):
        """Map ``v`` (``n+1`` entries, time coordinate ignored) from ``T_o``.

        Use :meth:`expmap0_spatial` to pass the ``n`` spatial coordinates only.
        """
        return self.expmap0_spatial(v[..., 1:])

    @_numpy_compat
    def expmap0_spatial(self, u):
        r = _norm(u)
        return torch.cat([torch.cosh(r), torch.sinh(r) / r * u], dim=-1)

    @_numpy_compat
    def logmap(self, x, y):
        # y + <x, y> x == (y - x) - (|y - x|_L^2 / 2) x, and its norm is sinh(d)
        diff = y - x
        q = self.inner(diff, diff, keepdim=True).clamp_min(0.0)
        d = _asinh_of_sqrt(q, 2.0)
        ratio = torch.where(d > 1e-4, d / torch.sinh(d.clamp_min(1e-4)), 1.0 - d * d / 6.0)
        return ratio * (diff - 0.5 * q * x)

    @_numpy_compat
    def logmap0(self, y):
        ys = self.logmap0_spatial(y)
        return torch.cat([torch.zeros_like(ys[..., :1]), ys], dim=-1)

    @_numpy_compat
    def logmap0_spatial(self, y):
        """Spatial coordinates of ``log_o(y)`` (its time coordinate is 0)."""
        ys = y[..., 1:]
        r = _norm(ys)
        return torch.asinh(r) / r * ys

    @_numpy_compat
    def transp(self, x, y, v):
        """Parallel transport of ``v`` from ``T_x`` to ``T_y`` along the geodesic.

        Uses ``v + <y, v>_L / (1 - <x, y>_L) * (x + y)``, which agrees with the
        log-map form ``v - <log_x y, v>_L / d^2 (log_x y + log_y x)`` wherever
        the latter is defined and is smooth at ``x = y``.
        """
        coef = self.inner(y, v, keepdim=True) / (1.0 - self.inner(x, y, keepdim=True))
        return v + coef * (x + y)

    @_numpy_compat
    def transp_logform(self, x, y, v):
        logxy = self.logmap(x, y)
        logyx = self.logmap(y, x)
        d2 = self.dist(x, y).unsqueeze(-1) ** 2
        return v - self.inner(logxy, v, keepdim=True) / d2 * (logxy + logyx)

    @_numpy_compat
    def centroid(self, X):
        """Closed-form centroid ``S / sqrt(|<S, S>_L|)`` with ``S`` the row sum."""
        if X.shape[-2] == 0:
            raise ManifoldError("centroid of an empty batch")
        S = X.sum(-2)
        return S / torch.sqrt(self.inner(S, S, keepdim=True).abs().clamp_min(MIN_NORM ** 2))

    @_numpy_compat
    def proj(self, x):
        """Recompute the time coordinate so that ``x`` lies on the hyperboloid."""
        xs = x[..., 1:]
        return torch.cat([torch.sqrt(1.0 + (xs * xs).sum(-1, keepdim=True)), xs], dim=-1)

    def check_point(self, x, atol=1e-9):
        x = torch.as_tensor(x, dtype=_DTYPE)
        if not torch.isfinite(x).all():
            raise ManifoldError("non-finite coordinates")
        c = self.inner(x, x)
        rel = (c + 1.0).abs() / x[..., 0].clamp_min(1.0) ** 2
        if (rel > atol).any() or (x[..., 0] <= 0).any():
            raise ManifoldError(f"point off the hyperboloid (max |<x,x>+1| = {float((c + 1).abs().max()):.3g})")

    def check_tangent(self, x, v, atol=1e-9):
        err = self.inner(torch.as_tensor(x, dtype=_DTYPE), torch.as_tensor(v, dtype=_DTYPE)).abs()
        if (err > atol).any():
            raise ManifoldError("vector not tangent at base point")

    def _pairwise(self, X):
        q = torch.cdist(X[..., 1:], X[..., 1:], compute_mode="donot_use_mm_for_euclid_dist") ** 2 \
            - torch.cdist(X[..., :1], X[..., :1], compute_mode="donot_use_mm_for_euclid_dist") ** 2
        return _asinh_of_sqrt(q, 2.0)

    def _pairwise_arg(self, X):
        G = X[..., :, 1:] @ X[..., :, 1:].transpose(-1, -2) - X[..., :, :1] @ X[..., :, :1].transpose(-1, -2)
        return -G

    def _pairwise_sq(self, X):
        return arcosh_sq(self._pairwise_arg(X))


class PoincareBall(_Manifold):
    """Open unit ball with conformal factor ``2 / (1 - |x|^2)``."""

    name = "poincare"
    hyperbolic = True

    def __init__(self, eps=EPS_PROJ):
        self.eps = eps

    @_numpy_compat
    def lambda_x(self, x, keepdim=True):
        return 2.0 / (1.0 - (x * x).sum(-1, keepdim=keepdim)).clamp_min(MIN_NORM)

    @_numpy_compat
    def proj(self, x):
        maxnorm = 1.0 - self.eps
        norm = _norm(x)
        return torch.where(norm >= maxnorm, x / norm * maxnorm, x)

    @_numpy_compat
    def mobius_add(self, x, y):
        xy = (x * y).sum(-1, keepdim=True)
        x2 = (x * x).sum(-1, keepdim=True)
        y2 = (y * y).sum(-1, keepdim=True)
        num = (1 + 2 * xy + y2) * x + (1 - x2) * y
        den = 1 + 2 * xy + x2 * y2
        return self.proj(num / den.clamp_min(MIN_NORM))

    @_numpy_compat
    def mobius_matvec(self, M, x):
        """``M (x) x`` for a weight ``M`` of shape (m, n); rows with ``Mx = 0`` map to 0."""
        mx = x @ M.transpose(-1, -2)
        x_norm = _norm(x)
        mx_norm = _norm(mx)
        res = torch.tanh(mx_norm / x_norm * _artanh(x_norm)) * mx / mx_norm
        zero = (mx == 0).all(-1, keepdim=True)
        return self.proj(torch.where(zero, torch.zeros_like(res), res))

    @_numpy_compat
    def dist(self, x, y):
        """``acosh(1 + 2 |x - y|^2 / ((1 - |x|^2)(1 - |y|^2)))`` as ``2 asinh(sqrt(.))``."""
        sq = ((x - y) ** 2).sum(-1)
        den = (1 - (x * x).sum(-1)) * (1 - (y * y).sum(-1))
        return _asinh_of_sqrt(sq / den.clamp_min(MIN_NORM), 1.0)

    @_numpy_compat
    def expmap(self, x, v):
        vn = _norm(v)
        second = torch.tanh(self.lambda_x(x) * vn / 2) * v / vn
        return self.proj(self.mobius_add(x, second))

    @_numpy_compat
    def expmap0(self, v):
        vn = _norm(v)
        return self.proj(torch.tanh(vn) * v / vn)

    @_numpy_compat
    def logmap(self, x, y):
        sub = self.mobius_add(-x, y)
        sn = _norm(sub)
        return 2.0 / self.lambda_x(x) * _artanh(sn) * sub / sn

    @_numpy_compat
    def logmap0(self, y):
        yn = _norm(y)
        return _artanh(yn) * y / yn

    @_numpy_compat
    def transp0(self, y, v):
        """Parallel transport from the origin to ``y``: scale by ``lambda_o / lambda_y``."""
        return v * (1.0 - (y * y).sum(-1, keepdim=True))

    @_numpy_compat
    def transp(self, x, y, v):
        if torch.equal(x, y):
            return v
        if not bool((x == 0).all()):
            raise ManifoldError("Poincare parallel transport is only implemented from the origin")
        return self.transp0(y, v)

    def check_point(self, x, atol=1e-9):
        x = torch.as_tensor(x, dtype=_DTYPE)
        if not torch.isfinite(x).all():
            raise ManifoldError("non-finite coordinates")
        if (x.norm(dim=-1) > 1 - self.eps + atol).any():
            raise ManifoldError("point outside the projected ball")

    def _pairwise_arg(self, X):
        sq = (X * X).sum(-1)
        num = torch.baddbmm(sq[..., :, None] + sq[..., None, :], X, X.transpose(-1, -2), alpha=-2.0) \
            if X.dim() == 3 else torch.addmm(sq[:, None] + sq[None, :], X, X.T, alpha=-2.0)
        a = math.sqrt(2.0) / (1 - sq).clamp_min(MIN_NORM)
        return 1 + num.clamp_min(0.0) * (a[..., :, None] * a[..., None, :])

    def _pairwise(self, X):
        num = torch.cdist(X, X, compute_mode="donot_use_mm_for_euclid_dist") ** 2
        a = 1.0 / (1 - (X * X).sum(-1)).clamp_min(MIN_NORM)
        return _asinh_of_sqrt(num * (a[..., :, None] * a[..., None, :]), 1.0)

    def _pairwise_sq(self, X):
        return arcosh_sq(self._pairwise_arg(X))


_MANIFOLDS = {"euclidean": Euclidean, "lorentz": Lorentz, "poincare": PoincareBall}


def get_manifold(kind) -> _Manifold:
    if isinstance(kind, _Manifold):
        return kind
    try:
        return _MANIFOLDS[str(kind).lower()]()
    except KeyError:
        raise ValueError(f"unknown geometry {kind!r}; expected one of {sorted(_MANIFOLDS)}") from None
