"""Shallow baseline: per-episode PCA plus a Gaussian-kernel one-class SVM.

The baseline has no meta-training stage. For every episode it fits PCA on
the raw support examples, fits the OC-SVM dual on the projected support,
and scores queries by the squashed decision value. A fixed grid of
(gamma, nu) combinations is evaluated under the standard protocols and the
best grid point is reported, which deliberately favors the baseline.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError, SolverError
from .metrics import run_accuracy_protocol, run_auc_protocol

GAMMA_GRID = tuple(2.0 ** -e for e in range(10, 0, -1))
NU_GRID = (0.01, 0.1)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # k x D, orthonormal rows
    explained: np.ndarray   # variance fractions of the kept components


@dataclass(frozen=True)
class OcsvmModel:
    alpha: np.ndarray
    rho: float
    gamma: float
    nu: float
    points: np.ndarray
    kkt_residual: float


def pca_fit_transform(examples, variance_keep=0.95):
    """Center, keep the fewest components reaching variance_keep, project.

    The component count is capped at n-1 (centered rank bound).
    """
    x = np.asarray(examples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"PCA needs an n x D matrix with n >= 2, got shape {x.shape}")
    if not 0.0 < variance_keep <= 1.0:
        raise ConfigError(f"variance_keep must be in (0, 1], got {variance_keep}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    power = s * s
    total = power.sum()
    if total <= 0.0:
        raise NumericError("zero total variance: all examples identical")
    fractions = power / total
    k = int(np.searchsorted(np.cumsum(fractions), variance_keep - 1e-12) + 1)
    k = min(k, x.shape[0] - 1, x.shape[1])
    model = PcaModel(mean=mean, components=vt[:k], explained=fractions[:k])
    return model, centered @ vt[:k].T


def pca_transform(model, examples):
    x = np.asarray(examples, dtype=np.float64)
    return (x - model.mean) @ model.components.T


def _gaussian_kernel(a, b, gamma):
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _box_residual(q, alpha, b, status, cap):
    g = q @ alpha
    parts = [
        abs(alpha.sum() - 1.0),
        max(0.0, -alpha.min()),
        max(0.0, (alpha - cap).max()),
    ]
    free = status == 0
    if free.any():
        parts.append(np.abs(g[free] - b).max())
    lower = status == -1
    if lower.any():
        parts.append(max(0.0, (b - g[lower]).max()))
    upper = status == 1
    if upper.any():
        parts.append(max(0.0, (g[upper] - b).max()))
    return max(parts), g


def _solve_box_qp(q, cap, tolerance=1e-10):
    """min 1/2 a'Qa s.t. sum(a)=1, 0 <= a <= cap, by a primal active-set walk.

    Returns (alpha, b, residual). Degenerate working-set systems fall back to
    the minimum-norm least-squares solution, which keeps the walk
    deterministic on rank-deficient kernels (identical points, gamma -> 0).
    """
    n = q.shape[0]
    alpha = np.full(n, 1.0 / n)
    status = np.zeros(n, dtype=int)  # 0 free, -1 at zero, +1 at cap
    if cap == 1.0 / n:
        status[:] = 1
    b = 0.0

    for _ in range(500):
        free = np.flatnonzero(status == 0)
        if free.size == 0:
            residual, g = _box_residual(q, alpha, b, status, cap)
            lower = np.flatnonzero(status == -1)
            upper = np.flatnonzero(status == 1)
            b_hi = g[upper].max() if upper.size else -np.inf
            b_lo = g[lower].min() if lower.size else np.inf
            if b_hi <= b_lo + tolerance:
                b = b_hi if upper.size else b_lo
                residual, _ = _box_residual(q, alpha, b, status, cap)
                return alpha, float(b), residual
            status[upper[np.argmax(g[upper])]] = 0
            continue

        m = free.size
        at_cap = np.flatnonzero(status == 1)
        sys = np.zeros((m + 1, m + 1))
        sys[:m, :m] = q[np.ix_(free, free)]
        sys[:m, m] = -1.0
        sys[m, :m] = 1.0
        rhs = np.empty(m + 1)
        rhs[:m] = -cap * q[np.ix_(free, at_cap)].sum(axis=1) if at_cap.size else 0.0
        rhs[m] = 1.0 - cap * at_cap.size
        try:
            sol = np.linalg.solve(sys, rhs)
            if not np.all(np.isfinite(sol)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(sys, rhs, rcond=None)[0]
        target, b = sol[:m], sol[m]

        cur = alpha[free]
        if target.min() >= -1e-12 and target.max() <= cap + 1e-12:
            alpha = np.where(status == 1, cap, 0.0)
            alpha[free] = np.clip(target, 0.0, cap)
            residual, g = _box_residual(q, alpha, b, status, cap)
            if residual <= max(tolerance, 1e-9):
                return alpha, float(b), residual
            lower = np.flatnonzero(status == -1)
            upper = np.flatnonzero(status == 1)
            viol_val, viol_idx = -np.inf, -1
            if lower.size:
                i = lower[np.argmax(b - g[lower])]
                if b - g[i] > viol_val:
                    viol_val, viol_idx = b - g[i], i
            if upper.size:
                i = upper[np.argmax(g[upper] - b)]
                if g[i] - b > viol_val:
                    viol_val, viol_idx = g[i] - b, i
            if viol_idx < 0 or viol_val <= tolerance:
                return alpha, float(b), residual
            status[viol_idx] = 0
        else:
            delta = target - cur
            t_best, blk, blk_status = 1.0, -1, 0
            for j in range(m):
                if delta[j] < -1e-15:
                    t = cur[j] / -delta[j]
                    side = -1
                elif delta[j] > 1e-15:
                    t = (cap - cur[j]) / delta[j]
                    side = 1
                else:
                    continue
                if t < t_best:
                    t_best, blk, blk_status = t, j, side
            moved = np.clip(cur + t_best * delta, 0.0, cap)
            alpha[free] = moved
            if blk >= 0:
                idx = free[blk]
                alpha[idx] = 0.0 if blk_status == -1 else cap
                status[idx] = blk_status

    residual, _ = _box_residual(q, alpha, b, status, cap)
    raise SolverError(
        f"one-class SVM dual did not converge (residual {residual:.3e})",
        alpha=alpha,
        residual=residual,
    )


def ocsvm_fit(points, gamma, nu):
    """Fit the one-class SVM dual on the given points.

    The offset rho comes from the margin support vectors (free weights), or
    from the maximal decision value among bound vectors when none is free.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ContractError(f"points must be an n x k matrix, got shape {x.shape}")
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if not 0.0 < nu <= 1.0:
        raise ConfigError(f"nu must be in (0, 1], got {nu}")
    n = x.shape[0]
    cap = 1.0 / (nu * n)
    q = _gaussian_kernel(x, x, gamma)
    q = 0.5 * (q + q.T)

    if n == 1:
        alpha = np.array([1.0])
        g = q @ alpha
        return OcsvmModel(alpha, float(g[0]), float(gamma), float(nu), x, 0.0)

    alpha, b, residual = _solve_box_qp(q, cap)
    g = q @ alpha
    margin = 1e-9 * max(1.0, cap)
    free = (alpha > margin) & (alpha < cap - margin)
    if free.any():
        rho = float(g[free].mean())
    else:
        held = alpha > margin
        rho = float(g[held].max())
    return OcsvmModel(alpha, rho, float(gamma), float(nu), x, residual)


def ocsvm_decision(model, queries):
    """Decision values sum_i alpha_i k(x_i, q) - rho; positive means inside."""
    qx = np.asarray(queries, dtype=np.float64)
    k = _gaussian_kernel(qx, model.points, model.gamma)
    return k @ model.alpha - model.rho


def baseline_scorer(gamma, nu, variance_keep=0.95):
    """Scorer closure for the protocols: PCA + OC-SVM fit per episode."""

    def scorer(support, queries):
        s = np.asarray(support, dtype=np.float64).reshape(len(support), -1)
        qx = np.asarray(queries, dtype=np.float64).reshape(len(queries), -1)
        pca, projected = pca_fit_transform(s, variance_keep)
        model = ocsvm_fit(projected, gamma, nu)
        decision = ocsvm_decision(model, pca_transform(pca, qx))
        return 1.0 / (1.0 + np.exp(-decision))

    return scorer


@dataclass(frozen=True)
class BaselineGridReport:
    protocol: str
    entries: tuple  # (gamma, nu, protocol report), grid order
    best: tuple     # the selected (gamma, nu, report)


def baseline_grid_eval(
    test_dataset,
    shot,
    protocol,
    seed=0,
    repetitions=10,
    episodes=10000,
    variance_keep=0.95,
    jobs=1,
):
    """Run the chosen protocol at every grid point; report all plus the best.

    Accuracy picks the highest mean; AUC picks the highest median per-class
    AUC. The same seed drives every grid point, so the comparison is paired.
    """
    if protocol not in ("auc", "accuracy"):
        raise ConfigError(f"protocol must be 'auc' or 'accuracy', got {protocol!r}")
    entries = []
    for gamma in GAMMA_GRID:
        for nu in NU_GRID:
            scorer = baseline_scorer(gamma, nu, variance_keep)
            if protocol == "accuracy":
                report = run_accuracy_protocol(
                    scorer, test_dataset, shot, episodes=episodes, seed=seed, jobs=jobs
                )
            else:
                report = run_auc_protocol(
                    scorer, test_dataset, shot, repetitions=repetitions, seed=seed,
                    jobs=jobs,
                )
            entries.append((gamma, nu, report))

    def key(entry):
        report = entry[2]
        if protocol == "accuracy":
            return report.mean_accuracy
        return report.median.mean_auc

    best = entries[0]
    for entry in entries[1:]:
        if key(entry) > key(best):
            best = entry
    return BaselineGridReport(protocol=protocol, entries=tuple(entries), best=best)


def baseline_report_csv(grid_report):
    """One row per grid point; the selected column marks the best point."""
    lines = []
    if grid_report.protocol == "accuracy":
        lines.append("gamma,nu,mean_accuracy,ci_low,ci_high,episodes,selected")
        for gamma, nu, rep in grid_report.entries:
            selected = int((gamma, nu) == grid_report.best[:2])
            lo = rep.mean_accuracy - rep.ci_half_width
            hi = rep.mean_accuracy + rep.ci_half_width
            lines.append(
                f"{gamma!r},{nu!r},{rep.mean_accuracy!r},{lo!r},{hi!r},"
                f"{rep.episode_count},{selected}"
            )
    else:
        lines.append("gamma,nu,min_auc,median_auc,max_auc,selected")
        for gamma, nu, rep in grid_report.entries:
            selected = int((gamma, nu) == grid_report.best[:2])
            lines.append(
                f"{gamma!r},{nu!r},{rep.minimum.mean_auc!r},"
                f"{rep.median.mean_auc!r},{rep.maximum.mean_auc!r},{selected}"
            )
    return "\n".join(lines) + "\n"
