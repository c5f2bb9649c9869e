"""Invertible flow building blocks.

Three layer families, each exposing the map applied during density
evaluation together with its exact log|det| contribution, plus the reverse
map used when sampling:

* elementwise linear (EL): ``v -> v * scale(x) + shift(x)`` with
  ``scale = exp(tanh(net(x))) in [1/e, e]``, so the inverse always exists;
* conditioned attention: ``v -> M(X) v`` where M is one of
    - ``tri``:    strictly lower entries of the score matrix plus a
                  softplus-positive diagonal (log|det| in O(K)),
    - ``reg``:    scores normalized by their spectral norm plus identity
                  (invertible for any score matrix),
    - ``itrans``: rowwise softmax of the scores plus identity (nonnegative
                  interactions only);
* the Shiesh activation (see :mod:`profiti.shiesh`).

The ``tri`` attention is computed in a canonical query order: queries are
sorted with :func:`profiti.data.argsort_queries` before masking, which is
what makes the triangular masking permutation-equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg
from .data import apply_permutation, argsort_queries, invert_permutation
from .errors import ConfigError

ATTENTION_KINDS = ("tri", "reg", "itrans")


# ---------------------------------------------------------------------------
# parameter groups


@dataclass
class AttentionParams:
    wq: ad.Tensor  # (d, d_attn)
    wk: ad.Tensor
    eps: float
    kind: str = "tri"

    def tensors(self):
        return [self.wq, self.wk]


@dataclass
class ELParams:
    """Two one-hidden-layer nets mapping a condition row to a scalar.

    With ``fixed_scale`` the scale is pinned to 1 and only the shift net is
    used (the initial encoding layer of the flow).
    """

    scale_w1: ad.Tensor | None
    scale_b1: ad.Tensor | None
    scale_w2: ad.Tensor | None
    scale_b2: ad.Tensor | None
    shift_w1: ad.Tensor
    shift_b1: ad.Tensor
    shift_w2: ad.Tensor
    shift_b2: ad.Tensor
    fixed_scale: bool = False

    def tensors(self):
        ts = [self.shift_w1, self.shift_b1, self.shift_w2, self.shift_b2]
        if not self.fixed_scale:
            ts += [self.scale_w1, self.scale_b1, self.scale_w2, self.scale_b2]
        return ts


def init_attention_params(dim, attn_dim, eps, kind, rng, prefix):
    if kind not in ATTENTION_KINDS:
        raise ConfigError(f"unknown attention kind {kind!r}; pick from {ATTENTION_KINDS}")
    if eps <= 0:
        raise ConfigError(f"attention eps must be positive, got {eps}")
    std = dim ** -0.75
    return AttentionParams(
        wq=ad.parameter(std * rng.standard_normal((dim, attn_dim)), f"{prefix}.wq"),
        wk=ad.parameter(std * rng.standard_normal((dim, attn_dim)), f"{prefix}.wk"),
        eps=eps,
        kind=kind,
    )


def init_el_params(dim, rng, prefix, fixed_scale=False):
    """Hidden width equals the condition dimension; output layers start at
    zero so the layer begins as the identity."""

    def hidden(name):
        return (
            ad.parameter(rng.standard_normal((dim, dim)) / np.sqrt(dim), f"{prefix}.{name}_w1"),
            ad.parameter(np.zeros(dim), f"{prefix}.{name}_b1"),
            ad.parameter(np.zeros(dim), f"{prefix}.{name}_w2"),
            ad.parameter(np.zeros(()), f"{prefix}.{name}_b2"),
        )

    sw1 = sb1 = sw2 = sb2 = None
    if not fixed_scale:
        sw1, sb1, sw2, sb2 = hidden("scale")
    tw1, tb1, tw2, tb2 = hidden("shift")
    return ELParams(sw1, sb1, sw2, sb2, tw1, tb1, tw2, tb2, fixed_scale=fixed_scale)


# ---------------------------------------------------------------------------
# elementwise linear layer


def _scalar_net(x, w1, b1, w2, b2):
    return ad.matmul(ad.tanh(ad.matmul(x, w1) + b1), w2) + b2


def el_terms(x, params: ELParams):
    """Per-row ``(scale, log_scale, shift)`` tensors for condition rows ``x``.

    ``scale`` is ``exp(tanh(raw))`` so ``log_scale`` is simply ``tanh(raw)``
    and the scale is confined to ``[1/e, e]``.
    """
    shift = _scalar_net(x, params.shift_w1, params.shift_b1,
                        params.shift_w2, params.shift_b2)
    if params.fixed_scale:
        ones = ad.tensor(np.ones(x.data.shape[0]))
        zeros = ad.tensor(np.zeros(x.data.shape[0]))
        return ones, zeros, shift
    raw = _scalar_net(x, params.scale_w1, params.scale_b1,
                      params.scale_w2, params.scale_b2)
    log_scale = ad.tanh(raw)
    return ad.exp(log_scale), log_scale, shift


def el_forward(values, scale, shift):
    """``v * scale + shift``; log|det| is ``sum(log_scale)``."""
    return values * scale + shift


def el_inverse(values, scale, shift):
    return (values - shift) / scale


# ---------------------------------------------------------------------------
# attention matrices


def attention_scores(x, params: AttentionParams):
    """Self-attention score matrix ``(X Wq)(X Wk)^T`` for condition rows."""
    return ad.matmul(ad.matmul(x, params.wq), ad.transpose(ad.matmul(x, params.wk)))


def tri_matrix(scores, eps):
    """Lower-triangular attention: raw scores below the diagonal, softplus
    of the diagonal plus ``eps`` on it.  Returns (M, diag, log|det|); the
    log|det| is the diagonal log-sum, computed in O(K)."""
    diag = ad.softplus(ad.diagonal(scores)) + eps
    m = ad.tril(scores, -1) + ad.diag_embed(diag)
    return m, diag, ad.sum_(ad.log(diag))


def reg_matrix(scores, eps):
    """Spectrally normalized scores plus identity; invertible for any
    scores since the normalized part has norm strictly below 1."""
    k = scores.data.shape[0]
    m = scores / (ad.spectral_norm(scores) + eps) + ad.tensor(np.eye(k))
    logdet = ad.logabsdet(m)
    return m, ad.diagonal(m), logdet


def itrans_matrix(scores):
    """Rowwise softmax plus identity (nonnegative interaction weights)."""
    k = scores.data.shape[0]
    m = ad.softmax(scores, axis=-1) + ad.tensor(np.eye(k))
    logdet = ad.logabsdet(m)
    return m, ad.diagonal(m), logdet


def attention_matrix(x_sorted, params: AttentionParams):
    """Build the invertible matrix for condition rows already in canonical
    order.  Returns (M, diag, log|det|)."""
    scores = attention_scores(x_sorted, params)
    if params.kind == "tri":
        return tri_matrix(scores, params.eps)
    if params.kind == "reg":
        return reg_matrix(scores, params.eps)
    return itrans_matrix(scores)


# ---------------------------------------------------------------------------
# sorted attention as a standalone layer (sorts, applies, unsorts)


def sita_forward(values, x, queries, criterion, params: AttentionParams):
    """Multiply by the conditioned matrix in canonical query order.

    ``values`` and the rows of ``x`` are in query order; the result is
    returned in the same order.  Also returns the log|det| tensor.
    """
    perm = argsort_queries(queries, criterion)
    inv = invert_permutation(perm)
    m, _diag, logdet = attention_matrix(ad.gather_rows(x, perm), params)
    out_sorted = ad.matmul(m, ad.gather_rows(values, perm))
    return ad.gather_rows(out_sorted, inv), logdet


def sita_inverse(values, x, queries, criterion, params: AttentionParams):
    """Solve ``M w = v`` in canonical order (numpy path, used for sampling).

    Returns ``(w, logdet)`` with ``logdet = -log|det M|``; triangular
    systems use forward substitution in O(K^2), dense ones an LU solve.
    """
    perm = argsort_queries(queries, criterion)
    inv = invert_permutation(perm)
    m, _diag, logdet = attention_matrix(ad.gather_rows(x, perm), params)
    v_sorted = apply_permutation(np.asarray(values, dtype=np.float64), perm)
    w_sorted = solve_attention(m.data, v_sorted, params.kind)
    return apply_permutation(w_sorted, inv), -float(logdet.data)


def solve_attention(m, rhs, kind):
    if kind == "tri":
        return linalg.forward_substitution(m, rhs)
    lu, piv, _ = linalg.lu_factor(m)
    return linalg.lu_solve(lu, piv, rhs)
