"""Local-SGD federated training driven by the aggregation protocol.

The training loop is the standard one: each round the server broadcasts w,
every surviving user runs E local SGD steps on its own data and uploads
the accumulated update y_i = w - w_local through the protocol, and the
server applies the dequantized aggregate, which is an unbiased estimate of
sum_i beta_i y_i, as the global step.

Tasks are synthetic ridge regressions built so that every quantity the
convergence analysis needs has a closed form: all users share the
regularized Hessian diag(lam) + mu_reg * I with spectrum exactly [mu, L],
per-user optima are w_base + h * delta_i with weighted-centered delta_i
(so the global optimum does not move with the heterogeneity knob h), and
F*, the per-user minima and the heterogeneity gap Gamma all come from the
quadratic form directly.

The learning rate decays per local step: step j of round t uses
eta = 2 / (mu * (nu + t*E + j)) with nu = max(8L/mu, E), which keeps
eta <= 1/(4L) from the start.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, SparseSecAggError
from .protocol import (
    Cohort,
    ProtocolConfig,
    RoundTrace,
    run_round,
    setup_cohort,
)

# SeedSequence spawn-key domains, so every random stream in a run is
# addressable: (task), (dropouts, t), (batches, t, user).
_DOMAIN_TASK = 0
_DOMAIN_DROPOUT = 1
_DOMAIN_BATCH = 2


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


# ---------------------------------------------------------------------------
# training configuration


@dataclass(frozen=True)
class TrainingConfig:
    """Local-SGD schedule: E local steps per round, `rounds` rounds, and
    the (mu, L) pair that drives the step-size decay."""

    local_steps: int
    rounds: int
    mu: float
    ell: float
    batch_size: int = 8

    def __post_init__(self) -> None:
        if self.local_steps < 1:
            raise ConfigError("local_steps", f"need at least 1, got {self.local_steps}")
        if self.rounds < 0:
            raise ConfigError("rounds", f"round count must be nonnegative, got {self.rounds}")
        if not 0.0 < self.mu <= self.ell:
            raise ConfigError("mu", f"need 0 < mu <= L, got mu={self.mu}, L={self.ell}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"batch size must be positive, got {self.batch_size}")

    @property
    def nu(self) -> float:
        return max(8.0 * self.ell / self.mu, float(self.local_steps))

    def learning_rate(self, global_step: int) -> float:
        return 2.0 / (self.mu * (self.nu + global_step))


# ---------------------------------------------------------------------------
# synthetic tasks


@dataclass
class LocalDataset:
    """One user's ridge regression data; loss is
    ||A w - b||^2 / (2m) + mu_reg/2 ||w||^2."""

    features: np.ndarray
    targets: np.ndarray
    weight: float

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class SyntheticTask:
    users: List[LocalDataset]
    mu: float
    ell: float
    mu_reg: float
    lam_data: np.ndarray
    local_optima: np.ndarray
    w_star: np.ndarray
    f_star: float
    user_f_star: np.ndarray
    gamma_heterogeneity: float

    @property
    def n(self) -> int:
        return len(self.users)

    @property
    def d(self) -> int:
        return self.w_star.shape[0]

    @property
    def betas(self) -> np.ndarray:
        return np.array([u.weight for u in self.users])

    def user_loss(self, i: int, w: np.ndarray) -> float:
        diff = w - self.local_optima[i]
        quad = 0.5 * float(diff @ (self.lam_data * diff))
        return quad + 0.5 * self.mu_reg * float(w @ w)

    def global_loss(self, w: np.ndarray) -> float:
        return float(
            sum(u.weight * self.user_loss(i, w) for i, u in enumerate(self.users))
        )

    def batch_gradient(self, i: int, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        a = self.users[i].features[idx]
        residual = a @ w - self.users[i].targets[idx]
        return a.T @ residual / len(idx) + self.mu_reg * w

    def stochastic_gradient_variance(self, batch_size: int) -> np.ndarray:
        """Per-user sigma_i^2 = E||grad_batch - grad|| ^2 at w*, from the
        exact per-sample gradient covariance divided by the batch size."""
        out = np.empty(self.n)
        for i, u in enumerate(self.users):
            residual = u.features @ self.w_star - u.targets
            mean_vec = u.features.T @ residual / u.size
            second = float(np.einsum("k,kj,kj,k->", residual, u.features, u.features, residual))
            out[i] = (second / u.size - float(mean_vec @ mean_vec)) / batch_size
        return out


def make_synthetic_task(
    n: int,
    d: int,
    mu: float,
    ell: float,
    heterogeneity: float,
    sizes: Optional[Sequence[int]] = None,
    master_seed: int = 0,
    optimum_scale: float = 1.0,
) -> SyntheticTask:
    """Build a ridge task whose optimization constants are exact.

    Each user's feature second moment is the same diagonal lam_data, with
    lam_data + mu_reg spanning [mu, L]; targets are noiseless responses of
    per-user optima w_base + heterogeneity * delta_i.  Centering the
    delta_i under the aggregation weights pins w* regardless of
    heterogeneity, so runs at different h are directly comparable.
    """
    if d < 2:
        raise ConfigError("d", "need dimension at least 2 to span the spectrum")
    if not 0.0 < mu <= ell:
        raise ConfigError("mu", f"need 0 < mu <= L, got mu={mu}, L={ell}")
    rng = _rng(master_seed, _DOMAIN_TASK)
    mu_reg = mu / 2.0
    lam_data = np.linspace(mu - mu_reg, ell - mu_reg, d)
    if sizes is None:
        sizes = [max(2 * d, 32) + 5 * i for i in range(n)]
    if len(sizes) != n or any(m < d for m in sizes):
        raise ConfigError("sizes", f"need {n} sizes, each at least d={d}")
    total = float(sum(sizes))
    betas = np.array([m / total for m in sizes])

    w_base = optimum_scale * rng.standard_normal(d)
    delta = rng.standard_normal((n, d))
    delta -= betas @ delta
    local_optima = w_base + heterogeneity * delta

    users = []
    for i, m in enumerate(sizes):
        q_full, _ = np.linalg.qr(rng.standard_normal((m, d)))
        a = np.sqrt(m) * q_full * np.sqrt(lam_data)
        users.append(
            LocalDataset(features=a, targets=a @ local_optima[i], weight=betas[i])
        )

    hessian = lam_data + mu_reg
    w_star = (betas @ (lam_data * local_optima)) / hessian
    user_w_star = (lam_data * local_optima) / hessian

    def closed_loss(w: np.ndarray, opt: np.ndarray) -> float:
        diff = w - opt
        return 0.5 * float(diff @ (lam_data * diff)) + 0.5 * mu_reg * float(w @ w)

    user_f_star = np.array(
        [closed_loss(user_w_star[i], local_optima[i]) for i in range(n)]
    )
    f_star = float(sum(betas[i] * closed_loss(w_star, local_optima[i]) for i in range(n)))
    # >= 0 by definition; the subtraction can land a hair below zero in
    # floats when the users are homogeneous
    gamma = max(f_star - float(betas @ user_f_star), 0.0)
    return SyntheticTask(
        users=users,
        mu=mu,
        ell=ell,
        mu_reg=mu_reg,
        lam_data=lam_data,
        local_optima=local_optima,
        w_star=w_star,
        f_star=f_star,
        user_f_star=user_f_star,
        gamma_heterogeneity=gamma,
    )


# ---------------------------------------------------------------------------
# local updates and dropouts


def local_sgd(
    task: SyntheticTask,
    i: int,
    w_start: np.ndarray,
    tcfg: TrainingConfig,
    round_index: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """E minibatch steps from w_start; returns the accumulated update
    y_i = w_start - w_final = sum_j eta_j * grad_j."""
    w = w_start.copy()
    m = task.users[i].size
    for j in range(tcfg.local_steps):
        idx = rng.integers(0, m, size=tcfg.batch_size)
        eta = tcfg.learning_rate(round_index * tcfg.local_steps + j)
        w -= eta * task.batch_gradient(i, w, idx)
    return w_start - w


def sample_dropouts(rng: np.random.Generator, n: int, theta: float) -> FrozenSet[int]:
    """Independent Bernoulli(theta) dropouts; dropped users never send."""
    return frozenset(np.flatnonzero(rng.random(n) < theta).tolist())


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainingResult:
    traces: List[RoundTrace]
    w_final: np.ndarray
    w0: np.ndarray
    initial_gap: float
    aborted_total: int

    @property
    def gaps(self) -> np.ndarray:
        return np.array([t.gap_to_optimum for t in self.traces])

    @property
    def losses(self) -> np.ndarray:
        return np.array([t.loss for t in self.traces])


def run_training(
    pcfg: ProtocolConfig,
    tcfg: TrainingConfig,
    task: SyntheticTask,
    master_seed: int,
    w0: Optional[np.ndarray] = None,
    mode: str = "dealer",
    adversaries: FrozenSet[int] = frozenset(),
    cohort: Optional[Cohort] = None,
) -> TrainingResult:
    """Train for tcfg.rounds rounds over the protocol.

    A dropout draw that would leave fewer than floor(N/2)+1 survivors
    aborts before anyone sends and is redrawn; the count of such draws is
    recorded on the round's trace.  Every round's protocol aggregate is
    checked against the plaintext oracle.
    """
    if task.n != pcfg.n:
        raise ConfigError("n", f"task has {task.n} users, protocol expects {pcfg.n}")
    if task.d != pcfg.d:
        raise ConfigError("d", f"task dimension {task.d}, protocol expects {pcfg.d}")
    if not np.allclose(task.betas, pcfg.beta_array, atol=1e-9):
        raise ConfigError(
            "betas", "protocol weights disagree with the task's aggregation weights"
        )
    if cohort is None:
        cohort = setup_cohort(pcfg, master_seed, mode)
    w = np.zeros(task.d) if w0 is None else w0.astype(np.float64).copy()
    w0_copy = w.copy()
    initial_gap = task.global_loss(w) - task.f_star

    traces: List[RoundTrace] = []
    aborted_total = 0
    min_survivors = pcfg.reconstruction_threshold
    for t in range(tcfg.rounds):
        dropout_rng = _rng(master_seed, _DOMAIN_DROPOUT, t)
        aborted_draws = 0
        while True:
            dropouts = sample_dropouts(dropout_rng, pcfg.n, pcfg.theta)
            if pcfg.n - len(dropouts) >= min_survivors:
                break
            aborted_draws += 1
        y = np.zeros((pcfg.n, task.d))
        for i in range(pcfg.n):
            if i in dropouts:
                continue
            y[i] = local_sgd(task, i, w, tcfg, t, _rng(master_seed, _DOMAIN_BATCH, t, i))
        trace = run_round(y, pcfg, cohort, t, dropouts, adversaries)
        if not trace.matches_oracle:
            raise SparseSecAggError(f"round {t}: aggregate does not match the oracle")
        w = w - trace.aggregate
        trace.loss = task.global_loss(w)
        trace.gap_to_optimum = trace.loss - task.f_star
        trace.aborted_draws = aborted_draws
        aborted_total += aborted_draws
        traces.append(trace)
    return TrainingResult(
        traces=traces,
        w_final=w,
        w0=w0_copy,
        initial_gap=initial_gap,
        aborted_total=aborted_total,
    )


def fedavg_reference(
    task: SyntheticTask,
    tcfg: TrainingConfig,
    master_seed: int,
    w0: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Plain FedAvg in floats: exact weighted aggregation, no dropouts, no
    quantization, but the same batch streams as the protocol run, so the
    two trajectories are comparable draw by draw.  Returns (losses, w)."""
    w = np.zeros(task.d) if w0 is None else w0.astype(np.float64).copy()
    losses = np.empty(tcfg.rounds)
    betas = task.betas
    for t in range(tcfg.rounds):
        updates = np.stack(
            [
                local_sgd(task, i, w, tcfg, t, _rng(master_seed, _DOMAIN_BATCH, t, i))
                for i in range(task.n)
            ]
        )
        w = w - betas @ updates
        losses[t] = task.global_loss(w)
    return losses, w


# ---------------------------------------------------------------------------
# trace accounting


@dataclass
class CommunicationStats:
    mean_bytes_sparse: float
    mean_selection_fraction: float
    rounds: int


def measure_communication(traces: Sequence[RoundTrace], d: int) -> CommunicationStats:
    """Average per-user upload cost over the surviving senders of each round."""
    byte_counts: List[int] = []
    fractions: List[float] = []
    for tr in traces:
        byte_counts.extend(tr.bytes_per_user.values())
        fractions.extend(s / d for s in tr.selection_sizes.values())
    return CommunicationStats(
        mean_bytes_sparse=float(np.mean(byte_counts)),
        mean_selection_fraction=float(np.mean(fractions)),
        rounds=len(traces),
    )


TRACE_COLUMNS = (
    "t",
    "loss",
    "gap_to_Fstar",
    "dropouts",
    "mean_bytes_per_user",
    "mean_contributors",
    "min_contributors",
    "aborted",
)


def trace_rows(traces: Sequence[RoundTrace]) -> List[Dict[str, object]]:
    rows = []
    for tr in traces:
        bytes_mean = float(np.mean(list(tr.bytes_per_user.values())))
        rows.append(
            {
                "t": tr.round_index,
                "loss": "" if tr.loss is None else repr(tr.loss),
                "gap_to_Fstar": "" if tr.gap_to_optimum is None else repr(tr.gap_to_optimum),
                "dropouts": len(tr.dropouts),
                "mean_bytes_per_user": repr(bytes_mean),
                "mean_contributors": repr(float(tr.contributors_total.mean())),
                "min_contributors": int(tr.contributors_total.min()),
                "aborted": tr.aborted_draws,
            }
        )
    return rows


def write_trace_csv(path: str, traces: Sequence[RoundTrace]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        writer.writerows(trace_rows(traces))
