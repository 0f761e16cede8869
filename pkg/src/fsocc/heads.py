"""One-class classification heads on top of the encoder.

Both heads reduce a support set's features to a center and score a query by
its squared distance to that center: p_target = 1 - tanh(||f(x) - c||^2).
tanh replaces the usual sigmoid because squared distances are non-negative,
which would floor every sigmoid probability at 0.5. The meta_svdd head
weights the support features by the SVDD dual solution (differentiable
through the QP); oc_protonet uses the plain mean. At one shot the two are
identical by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import encode
from .errors import ConfigError, ContractError
from .svdd import DEFAULT_LAMBDA, DEFAULT_TOLERANCE, svdd_alpha

HEADS = ("meta_svdd", "oc_protonet")
PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class EpisodeOutput:
    """Per-episode forward results; loss stays a tensor for backward passes."""

    center: np.ndarray
    probabilities: np.ndarray
    distances_sq: np.ndarray
    loss: object


def _check_head(head):
    if head not in HEADS:
        raise ConfigError(f"head must be one of {HEADS}, got {head!r}")


def compute_center(head, support_features, lam=DEFAULT_LAMBDA, tolerance=DEFAULT_TOLERANCE):
    """Differentiable center of the support features under the given head."""
    _check_head(head)
    z = support_features if isinstance(support_features, Tensor) else Tensor(support_features)
    if z.data.ndim != 2 or z.shape[0] < 1:
        raise ContractError(f"support features must be n x d with n >= 1, got {z.shape}")
    n = z.shape[0]
    if head == "meta_svdd":
        alpha = svdd_alpha(z, lam=lam, tolerance=tolerance)
        weights = ad.reshape(alpha, (1, n))
    else:
        weights = Tensor(np.full((1, n), 1.0 / n))
    return ad.reshape(ad.matmul(weights, z), (z.shape[1],))


def _membership(distances_sq):
    # p = 1 - tanh(d^2); grows toward 1 as the query approaches the center
    return ad.add(ad.scale(ad.tanh(distances_sq), -1.0), 1.0)


def episode_forward(
    head,
    params,
    episode,
    train=False,
    bound=None,
    lam=DEFAULT_LAMBDA,
    tolerance=DEFAULT_TOLERANCE,
):
    """Encode an episode, score its queries and compute the BCE loss.

    Support and queries go through the encoder as one batch, so train-mode
    batch statistics span both. The loss clamps probabilities away from the
    saturated tanh; the reported probabilities stay unclamped.
    """
    _check_head(head)
    n = len(episode.support)
    m = len(episode.queries)
    batch = np.concatenate([episode.support, episode.queries])
    features = encode(params, batch, train=train, bound=bound)
    support_z = ad.slice_rows(features, 0, n)
    query_z = ad.slice_rows(features, n, n + m)

    center = compute_center(head, support_z, lam=lam, tolerance=tolerance)
    d2 = ad.row_sqdist(query_z, center)
    p = _membership(d2)

    y = np.asarray(episode.labels, dtype=np.float64)
    if y.shape != (m,):
        raise ContractError(f"labels shape {y.shape} does not match {m} queries")
    pc = ad.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_query = ad.add(
        ad.mul(Tensor(y), ad.log(pc)),
        ad.mul(Tensor(1.0 - y), ad.log(ad.add(ad.scale(pc, -1.0), 1.0))),
    )
    loss = ad.scale(ad.tensor_mean(per_query), -1.0)
    return EpisodeOutput(
        center=center.data,
        probabilities=p.data,
        distances_sq=d2.data,
        loss=loss,
    )


def score_queries(head, params, support, queries, lam=DEFAULT_LAMBDA, tolerance=DEFAULT_TOLERANCE):
    """Target-membership probability for each query, eval mode, pure."""
    _check_head(head)
    support = np.asarray(support)
    queries = np.asarray(queries)
    if len(support) < 1:
        raise ContractError("support must be non-empty")
    batch = np.concatenate([support, queries])
    features = encode(params, batch, train=False)
    support_z = ad.slice_rows(features, 0, len(support))
    query_z = ad.slice_rows(features, len(support), len(batch))
    center = compute_center(head, support_z, lam=lam, tolerance=tolerance)
    return _membership(ad.row_sqdist(query_z, center)).data


def classify(head, params, support, query, lam=DEFAULT_LAMBDA, tolerance=DEFAULT_TOLERANCE):
    """Score one query against a support set; shot count is unconstrained."""
    query = np.asarray(query)
    scores = score_queries(
        head, params, support, query[None], lam=lam, tolerance=tolerance
    )
    return float(scores[0])
