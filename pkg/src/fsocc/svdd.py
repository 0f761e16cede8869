"""Support Vector Data Description over a small support set.

The minimum enclosing ball of n feature vectors is found through its dual:
a convex quadratic program over the probability simplex,

    maximize  alpha . diag(K) - alpha' K alpha
    s.t.      sum(alpha) = 1,  alpha >= 0,

where K is the (stabilized) Gram matrix of the features. The ball's center
is the alpha-weighted feature average. n stays small (<= 20), so the QP is
solved exactly with a primal active-set method, and gradients with respect
to K come from implicit differentiation of the KKT system restricted to the
active set. An exhaustive minimum-enclosing-ball oracle is included for
verification and never used on the training path.
"""

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, _make
from .errors import ContractError, DifferentiationError, NumericError, SolverError

DEFAULT_LAMBDA = 1e-6
DEFAULT_TOLERANCE = 1e-8
EPS_ACTIVE = 1e-7


@dataclass(frozen=True)
class KernelMatrix:
    """Stabilized Gram matrix K' = Z Z' + lam * I plus the features behind it."""

    entries: np.ndarray
    lam: float
    features: np.ndarray

    @property
    def stabilized(self):
        return self.lam > 0.0


@dataclass(frozen=True)
class DualSolution:
    """One solved SVDD dual: simplex weights and the ball they define."""

    alpha: np.ndarray
    nu: float
    active_set: np.ndarray
    center: np.ndarray
    radius: float
    kkt_residual: float


def build_kernel(features, lam=DEFAULT_LAMBDA):
    """Inner-product kernel of the feature rows with lam added on the diagonal."""
    if isinstance(features, Tensor):
        features = features.data
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ContractError(f"features must be a non-empty n x d matrix, got shape {z.shape}")
    if lam < 0:
        raise ContractError(f"stabilization lambda must be >= 0, got {lam}")
    if not np.all(np.isfinite(z)):
        raise NumericError("features hold non-finite values")
    k = z @ z.T
    k = 0.5 * (k + k.T)  # kill round-off asymmetry
    k[np.diag_indices_from(k)] += lam
    return KernelMatrix(entries=k, lam=float(lam), features=z)


def _simplex_qp(k, tolerance):
    """Exact active-set solve of min a'Ka - diag(K)'a on the simplex.

    Returns (alpha, nu, residual, working-set change count).
    """
    k = 0.5 * (k + k.T)  # the QP sees only the symmetric part
    n = k.shape[0]
    d = np.diag(k).copy()
    alpha = np.full(n, 1.0 / n)
    work = np.ones(n, dtype=bool)
    nu = 0.0
    cap = max(2 ** n, 8)

    for _ in range(cap):
        idx = np.flatnonzero(work)
        m = idx.size
        sys = np.zeros((m + 1, m + 1))
        sys[:m, :m] = 2.0 * k[np.ix_(idx, idx)]
        sys[:m, m] = 1.0
        sys[m, :m] = 1.0
        rhs = np.concatenate([d[idx], [1.0]])
        # np.linalg.solve does not reliably raise on numerically singular
        # systems; a residual check catches the garbage solutions too.
        singular = False
        try:
            sol = np.linalg.solve(sys, rhs)
            singular = not np.all(np.isfinite(sol)) or np.linalg.norm(
                sys @ sol - rhs
            ) > 1e-9 * max(1.0, np.linalg.norm(rhs))
        except np.linalg.LinAlgError:
            singular = True
        if singular:
            sol = np.linalg.lstsq(sys, rhs, rcond=None)[0]
        if singular and np.linalg.norm(sys @ sol - rhs) > 1e-9 * max(
            1.0, np.linalg.norm(rhs)
        ):
            # No consistent stationary point on this working set: for a rank
            # deficient kernel the equality-constrained objective falls
            # without bound along a null ray; walk it to the first blocking
            # coordinate and drop it. When no ray exists the system is merely
            # ill conditioned and the least-squares solution stands in as the
            # stationary estimate below.
            direction = _null_descent(k[np.ix_(idx, idx)], d[idx])
            if direction is not None:
                cur = alpha[idx]
                shrinking = direction < 0
                steps = -cur[shrinking] / direction[shrinking]
                t = steps.min()
                blocked = idx[shrinking][np.argmin(steps)]
                alpha[idx] = np.maximum(cur + t * direction, 0.0)
                alpha[blocked] = 0.0
                work[blocked] = False
                continue
        beta, nu = sol[:m], sol[m]

        if beta.min() >= -1e-12:
            alpha = np.zeros(n)
            alpha[idx] = np.maximum(beta, 0.0)
            mu = 2.0 * (k @ alpha) - d + nu
            outside = np.flatnonzero(~work)
            if outside.size == 0 or mu[outside].min() >= -tolerance:
                residual, _ = _kkt_residual(k, d, alpha, nu)
                if residual > tolerance:
                    raise SolverError(
                        f"SVDD dual stalled at KKT residual {residual:.3e}",
                        alpha=alpha,
                        residual=residual,
                    )
                return alpha, float(nu), residual
            work[outside[np.argmin(mu[outside])]] = True
        else:
            # walk toward beta until the first coordinate hits zero
            cur = alpha[idx]
            delta = beta - cur
            shrinking = delta < 0
            steps = -cur[shrinking] / delta[shrinking]
            t = min(1.0, steps.min())
            moved = cur + t * delta
            blocked = idx[shrinking][np.argmin(steps)]
            alpha[idx] = np.maximum(moved, 0.0)
            alpha[blocked] = 0.0
            work[blocked] = False

    residual, _ = _kkt_residual(k, d, alpha, nu)
    raise SolverError(
        f"SVDD dual did not converge within {cap} working-set changes "
        f"(residual {residual:.3e})",
        alpha=alpha,
        residual=residual,
    )


def _null_descent(kw, dw):
    """Feasible descent ray of the equality-constrained subproblem, if any.

    Returns p with K p = 0, sum(p) = 0 and d . p > 0 (so the objective
    decreases linearly along +p), or None when no such direction exists.
    """
    m = kw.shape[0]
    mat = np.vstack([2.0 * kw, np.ones((1, m))])
    _, singular, vt = np.linalg.svd(mat)
    null = vt[singular <= 1e-10 * max(1.0, singular[0])]
    if null.size == 0:
        return None
    gain = null @ dw
    best = np.argmax(np.abs(gain))
    if abs(gain[best]) <= 1e-12 * max(1.0, np.abs(dw).max()):
        return None
    p = null[best] if gain[best] > 0 else -null[best]
    return p if (p < 0).any() else None


def _kkt_residual(k, d, alpha, nu):
    mu = 2.0 * (k @ alpha) - d + nu
    residual = max(
        abs(alpha.sum() - 1.0),
        max(0.0, -alpha.min()),
        max(0.0, -mu.min()),
        np.abs(alpha * mu).max(),
    )
    return residual, mu


def solve_dual(kernel, tolerance=DEFAULT_TOLERANCE):
    """Solve the SVDD dual exactly and assemble the enclosing ball."""
    if tolerance <= 0:
        raise ContractError(f"tolerance must be positive, got {tolerance}")
    alpha, nu, residual = _simplex_qp(kernel.entries, tolerance)
    active = np.flatnonzero(alpha >= EPS_ACTIVE)
    z = kernel.features
    center = alpha @ z
    radius = float(np.sqrt(((z[active] - center) ** 2).sum(axis=1)).max())
    return DualSolution(
        alpha=alpha,
        nu=nu,
        active_set=active,
        center=center,
        radius=radius,
        kkt_residual=residual,
    )


def solve_svdd(features, lam=DEFAULT_LAMBDA, tolerance=DEFAULT_TOLERANCE):
    """Feature-level entry point: re-centered solve, translation-invariant.

    The dual objective is translation-invariant on the simplex but its raw
    inner products are not; working on mean-subtracted features keeps the
    numerics well conditioned for arbitrarily offset inputs. The returned
    center is expressed in the original coordinates.
    """
    if isinstance(features, Tensor):
        features = features.data
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2:
        raise ContractError(f"features must be an n x d matrix, got shape {z.shape}")
    mean = z.mean(axis=0)
    kernel = build_kernel(z - mean, lam)
    sol = solve_dual(kernel, tolerance)
    return replace(sol, center=sol.center + mean)


def decide(query, solution):
    """Membership test against a solved ball: (inside, distance to center)."""
    q = np.asarray(query.data if isinstance(query, Tensor) else query, dtype=np.float64)
    if q.shape != solution.center.shape:
        raise ContractError(
            f"query shape {q.shape} does not match center shape {solution.center.shape}"
        )
    distance = float(np.linalg.norm(q - solution.center))
    return distance <= solution.radius, distance


def qp_backward(kernel, solution, grad_alpha):
    """Gradient of a scalar loss with respect to the kernel entries.

    Implicit differentiation of the stationarity system restricted to the
    active set A: solve [2K_AA, 1; 1', 0] (w, rho) = (grad_alpha_A, 0), then
    dL/dK_ij = -(w_i a_j + a_i w_j) + [i == j] w_i on A x A, zero elsewhere.
    """
    g = np.asarray(grad_alpha, dtype=np.float64)
    if g.shape != solution.alpha.shape:
        raise ContractError(
            f"grad_alpha shape {g.shape} does not match alpha shape {solution.alpha.shape}"
        )
    if not np.all(np.isfinite(g)):
        raise NumericError("grad_alpha holds non-finite values")
    if solution.kkt_residual > 1e-6:
        raise ContractError(
            f"solution KKT residual {solution.kkt_residual:.3e} too large to differentiate"
        )
    active = solution.active_set
    m = active.size
    entries = 0.5 * (kernel.entries + kernel.entries.T)
    sys = np.zeros((m + 1, m + 1))
    sys[:m, :m] = 2.0 * entries[np.ix_(active, active)]
    sys[:m, m] = 1.0
    sys[m, :m] = 1.0
    rhs = np.concatenate([g[active], [0.0]])
    try:
        adjoint = np.linalg.solve(sys, rhs)
    except np.linalg.LinAlgError:
        raise DifferentiationError(
            "active features are affinely degenerate; retry with a larger lambda"
        ) from None
    if not np.all(np.isfinite(adjoint)) or np.linalg.norm(
        sys @ adjoint - rhs
    ) > 1e-6 * max(1.0, np.linalg.norm(rhs)):
        raise DifferentiationError(
            "ill-conditioned KKT system; retry with a larger lambda"
        )
    w = adjoint[:m]
    a = solution.alpha[active]
    grad_kernel = np.zeros_like(kernel.entries)
    block = -(np.outer(w, a) + np.outer(a, w))
    block[np.diag_indices_from(block)] += w
    grad_kernel[np.ix_(active, active)] = block
    return grad_kernel


def svdd_alpha(features, lam=DEFAULT_LAMBDA, tolerance=DEFAULT_TOLERANCE):
    """Differentiable simplex weights of the SVDD ball over feature rows.

    Forward solves the dual on mean-centered features; backward chains the
    implicit KKT gradient through the Gram matrix and the centering map.
    lam is treated as a constant, not a parameter.
    """
    if not isinstance(features, Tensor):
        features = Tensor(features)
    z = features.data
    if z.ndim != 2:
        raise ContractError(f"features must be an n x d matrix, got shape {z.shape}")
    zc = z - z.mean(axis=0)
    kernel = build_kernel(zc, lam)
    sol = solve_dual(kernel, tolerance)

    def bwd(g):
        gk = qp_backward(kernel, sol, g)
        gz = (gk + gk.T) @ zc
        return (gz - gz.mean(axis=0),)

    return _make("svdd-alpha", sol.alpha, (features,), bwd)


def meb_oracle(points):
    """Exact minimum enclosing ball by exhaustive support-subset enumeration.

    Every subset of size <= d+1 contributes its circumsphere; the smallest
    one containing all points is the optimum. Verification only: O(n^(d+1)).
    """
    if isinstance(points, Tensor):
        points = points.data
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ContractError(f"points must be a non-empty n x d matrix, got shape {pts.shape}")
    n, d = pts.shape
    if n > 10:
        raise ContractError(f"oracle is for test scale only (n <= 10), got n={n}")

    from itertools import combinations

    best = None
    for size in range(1, min(n, d + 1) + 1):
        for subset in combinations(range(n), size):
            ball = _circumsphere(pts[list(subset)])
            if ball is None:
                continue
            center, radius = ball
            if best is not None and radius >= best[1]:
                continue
            if np.all(np.linalg.norm(pts - center, axis=1) <= radius + 1e-9):
                best = (center, radius)
    assert best is not None  # the full-support subset always certifies
    return best


def _circumsphere(subset):
    """Center and radius of the sphere through all subset points, or None."""
    base = subset[0]
    if subset.shape[0] == 1:
        return base.copy(), 0.0
    u = subset[1:] - base
    gram = u @ u.T
    rhs = 0.5 * np.einsum("ij,ij->i", u, u)
    try:
        y = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(y)) or np.linalg.norm(gram @ y - rhs) > 1e-9 * max(
        1.0, np.linalg.norm(rhs)
    ):
        return None
    offset = y @ u
    return base + offset, float(np.linalg.norm(offset))
