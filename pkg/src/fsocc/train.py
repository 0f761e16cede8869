"""Meta-training: Adam on the meta-batch loss with validation-based early stopping.

One training step samples a meta-batch of episodes, averages their losses
on a single tape, and applies one bias-corrected Adam update. Every
eval_every steps the model is validated on a fixed set of tasks (same seed
every evaluation, so the comparison across evaluations is paired); the
best snapshot under the selection rule is kept and training halts after
`patience` consecutive non-improving evaluations. A validation pass runs
before the first update so a flat metric halts at exactly
eval_every * patience steps.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoder import bind_params, init_encoder
from .episodes import EpisodeConfig, sample_episode, sample_meta_batch
from .errors import ConfigError, NumericError, SolverError
from .heads import episode_forward

TRAIN_LOG_HEADER = "step,train_loss,val_mean,val_ci_low"


@dataclass
class OptimizerState:
    """Adam accumulators, keyed like the parameter dict."""

    m: dict
    v: dict
    step_count: int = 0
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8


@dataclass
class TrainConfig:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    architecture: str = "mlp"
    hidden_dim: int = 32
    learning_rate: float = 5e-4
    lam: float = 1e-6
    tolerance: float = 1e-8
    eval_every: int = 100
    patience: int = 10
    val_tasks: int = 500
    max_steps: int = 0  # 0 = no cap; early stopping is the only halt rule


@dataclass
class TrainState:
    params: object
    optimizer_state: OptimizerState
    best_params: object
    best_validation: tuple
    evals_since_improvement: int
    history: tuple
    log_rows: tuple
    skip_log: tuple


def init_optimizer(params, learning_rate=5e-4):
    zeros = {name: np.zeros_like(arr) for name, arr in params.weights.items()}
    return OptimizerState(
        m=zeros,
        v={name: np.zeros_like(arr) for name, arr in params.weights.items()},
        learning_rate=float(learning_rate),
    )


def adam_step(state, params, grads):
    """One bias-corrected Adam update; returns (new params, new state).

    A non-finite gradient aborts before anything is touched, so the caller's
    parameters are unchanged on error.
    """
    if set(grads) != set(params):
        raise ConfigError("gradient names do not match parameter names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ConfigError(
                f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")

    t = state.step_count + 1
    lr, b1, b2, eps = state.learning_rate, state.beta1, state.beta2, state.eps_adam
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, OptimizerState(
        m=new_m,
        v=new_v,
        step_count=t,
        learning_rate=lr,
        beta1=b1,
        beta2=b2,
        eps_adam=eps,
    )


def validate(params, head, validation_dataset, config, num_tasks=500, seed=0,
             lam=1e-6, tolerance=1e-8):
    """Mean query accuracy at threshold 0.5 over num_tasks sampled tasks.

    Returns (mean, ci_low, ci_high) with the 95% interval over per-task
    accuracies. Task seeds derive from the given seed, so a repeated call is
    identical.
    """
    accs = np.empty(num_tasks)
    for j in range(num_tasks):
        ep = sample_episode(validation_dataset, config, seed * num_tasks + j)
        out = episode_forward(head, params, ep, train=False, lam=lam, tolerance=tolerance)
        accs[j] = np.mean((out.probabilities >= 0.5) == (ep.labels == 1.0))
    mean = float(accs.mean())
    half = 1.96 * float(accs.std(ddof=1)) / math.sqrt(num_tasks) if num_tasks > 1 else 0.0
    return mean, mean - half, mean + half


def _beats(candidate, best):
    # selection rule: higher CI lower bound wins; at a 5-decimal tie the mean decides
    cand_mean, cand_lo = candidate
    best_mean, best_lo = best
    if cand_lo > best_lo:
        return True
    return round(cand_lo, 5) == round(best_lo, 5) and cand_mean > best_mean


def meta_train(datasets, head, config, seeds, log_path=None):
    """Run the full training loop and return the state with best_params set.

    datasets maps "train" and "validation" to ClassIndexedDatasets sharing
    one class-id space; seeds is an int (expanded to init/episode/validation
    streams) or an explicit (init, episode, validation) triple.
    """
    train_ds, val_ds = datasets["train"], datasets["validation"]
    overlap = set(train_ds.class_ids) & set(val_ds.class_ids)
    if overlap:
        raise ConfigError(f"train and validation splits share classes {sorted(overlap)}")
    if isinstance(seeds, int):
        seeds = (seeds, seeds + 1, seeds + 2)
    init_seed, episode_seed, val_seed = seeds

    params = init_encoder(
        config.architecture, train_ds.example_shape, init_seed, config.hidden_dim
    )
    opt = init_optimizer(params, config.learning_rate)

    def run_validation():
        return validate(
            params,
            head,
            val_ds,
            config.episode,
            num_tasks=config.val_tasks,
            seed=val_seed,
            lam=config.lam,
            tolerance=config.tolerance,
        )

    mean, lo, hi = run_validation()
    best = (mean, lo)
    best_params = params.copy()
    evals_since = 0
    history = [(0, mean, lo)]
    log_rows = [(0, float("nan"), mean, lo)]
    skip_log = []

    window_losses = []
    window_skipped = 0
    window_total = 0
    step = 0
    while config.max_steps <= 0 or step < config.max_steps:
        step += 1
        episodes = sample_meta_batch(train_ds, config.episode, episode_seed + step - 1)
        tape = ad.Tape()
        bound = bind_params(params, tape)
        losses = []
        for ep in episodes:
            try:
                out = episode_forward(
                    head, params, ep, train=True, bound=bound,
                    lam=config.lam, tolerance=config.tolerance,
                )
            except SolverError:
                skip_log.append((step, ep.seed))
                window_skipped += 1
                continue
            losses.append(out.loss)
        window_total += len(episodes)

        if losses:
            total = losses[0]
            for extra in losses[1:]:
                total = ad.add(total, extra)
            batch_loss = ad.scale(total, 1.0 / len(losses))
            grads = ad.backward(batch_loss, tape)
            grad_arrays = {name: grads[t.node_id].data for name, t in bound.items()}
            params.weights, opt = adam_step(opt, params.weights, grad_arrays)
            window_losses.append(batch_loss.item())

        if step % config.eval_every == 0:
            if window_skipped > 0.10 * window_total:
                raise SolverError(
                    f"{window_skipped} of {window_total} episodes skipped in the "
                    f"window ending at step {step}; training aborted"
                )
            window_skipped = 0
            window_total = 0
            train_loss = (
                float(np.mean(window_losses)) if window_losses else float("nan")
            )
            window_losses = []
            mean, lo, hi = run_validation()
            history.append((step, mean, lo))
            log_rows.append((step, train_loss, mean, lo))
            if _beats((mean, lo), best):
                best = (mean, lo)
                best_params = params.copy()
                evals_since = 0
            else:
                evals_since += 1
                if evals_since >= config.patience:
                    break

    state = TrainState(
        params=params,
        optimizer_state=opt,
        best_params=best_params,
        best_validation=best,
        evals_since_improvement=evals_since,
        history=tuple(history),
        log_rows=tuple(log_rows),
        skip_log=tuple(skip_log),
    )
    if log_path is not None:
        write_train_log(log_path, state.log_rows)
    return state


def write_train_log(path, rows):
    lines = [TRAIN_LOG_HEADER]
    for step, train_loss, val_mean, val_ci_low in rows:
        lines.append(f"{step},{train_loss!r},{val_mean!r},{val_ci_low!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
