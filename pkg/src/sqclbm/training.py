"""Synthetic BGK data, evaluation metrics, the penalty-weight schedule and the training loop."""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._validation import check_tau
from .circuit import PAPER_BLOCK, Architecture, _loss_grad_encoded, collide_sqc
from .lattice import VELOCITIES, bgk_collide, equilibrium
from .losses import combined_loss, mse_loss
from .qstate import embed, encode, physical

log = logging.getLogger(__name__)


@dataclass
class DataGenConfig:
    n_samples: int = 1_000_000
    rho_range: tuple = (0.95, 1.05)
    speed_range: tuple = (0.0, 0.01)
    sigma_neq_range: tuple = (0.0, 5e-4)
    tau: float = 1.0
    test_split: float = 0.001
    seed: int = 0

    def validate(self):
        if int(self.n_samples) < 1:
            raise ValueError(f"n_samples must be at least 1, got {self.n_samples}")
        for name in ("rho_range", "speed_range", "sigma_neq_range"):
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi) or not math.isfinite(hi):
                raise ValueError(f"{name} must satisfy 0 <= low <= high, got ({lo}, {hi})")
        if self.rho_range[0] <= 0:
            raise ValueError("rho_range must be strictly positive")
        check_tau(self.tau)
        if not 0 <= self.test_split < 1:
            raise ValueError(f"test_split must lie in [0, 1), got {self.test_split}")
        return self

    def to_dict(self):
        d = asdict(self)
        for k in ("rho_range", "speed_range", "sigma_neq_range"):
            d[k] = [float(v) for v in d[k]]
        return d

    def digest(self):
        """SHA-256 of the canonical JSON form; stored in dataset headers."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


@dataclass
class Dataset:
    """Pre/post-collision population pairs, shape ``(n, 9)`` each."""

    f_pre: np.ndarray
    f_post: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f_pre = np.asarray(self.f_pre, dtype=np.float64).reshape(-1, 9)
        self.f_post = np.asarray(self.f_post, dtype=np.float64).reshape(-1, 9)
        if self.f_pre.shape != self.f_post.shape:
            raise ValueError(f"pre/post shape mismatch {self.f_pre.shape} vs {self.f_post.shape}")

    def __len__(self):
        return self.f_pre.shape[0]

    def subset(self, idx):
        return Dataset(self.f_pre[idx], self.f_post[idx], dict(self.info))


def _draw(cfg, rng, m):
    rho = rng.uniform(*cfg.rho_range, size=m)
    speed = rng.uniform(*cfg.speed_range, size=m)
    angle = rng.uniform(0.0, 2 * np.pi, size=m)
    sigma = rng.uniform(*cfg.sigma_neq_range, size=m)
    noise = rng.standard_normal((m, 9)) * sigma[:, None]
    u = speed[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return equilibrium(rho, u) + noise


def generate_dataset(cfg):
    """Draw ``(f_pre, bgk_collide(f_pre))`` pairs and split off a test set.

    Samples with any negative pre-collision population are redrawn; the count
    is recorded in ``train.info["n_rejected"]``.
    """
    cfg.validate()
    n = int(cfg.n_samples)
    rng = np.random.default_rng(cfg.seed)
    f_pre = np.empty((n, 9))
    filled = rejected = 0
    while filled < n:
        batch = _draw(cfg, rng, n - filled)
        ok = np.all(batch > 0, axis=1)
        k = int(ok.sum())
        f_pre[filled:filled + k] = batch[ok]
        filled += k
        rejected += batch.shape[0] - k
    f_post = bgk_collide(f_pre, cfg.tau)
    n_test = int(round(n * cfg.test_split))
    info = {"n_rejected": rejected, "config": cfg.to_dict(), "config_digest": cfg.digest().hex()}
    split = n - n_test
    train = Dataset(f_pre[:split], f_post[:split], dict(info))
    test = Dataset(f_pre[split:], f_post[split:], dict(info))
    return train, test


# --- metrics -----------------------------------------------------------------


def predict(dataset, arch, params):
    """Surrogate post-collision populations in slot layout, shape ``(n, 16)``."""
    return collide_sqc(arch, params, embed(dataset.f_pre))


def accuracy(test, arch, params, epsilon=1e-5):
    """Per-population fraction of test predictions within ``epsilon``."""
    pred = physical(predict(test, arch, params))
    return np.mean(np.abs(pred - test.f_post) < epsilon, axis=0)


def relative_momentum_loss(test, arch, params=None, *, pred=None):
    """Mean of ``|p - p_hat| / |p|`` over the test set.

    Momenta use the 9 physical populations; samples with ``|p| < 1e-12`` are
    skipped.  ``pred`` (9 populations per row) overrides the circuit.
    """
    if pred is None:
        pred = physical(predict(test, arch, params))
    p = test.f_post @ VELOCITIES
    p_hat = np.asarray(pred)[..., :9] @ VELOCITIES
    norm = np.linalg.norm(p, axis=1)
    keep = norm >= 1e-12
    if not np.any(keep):
        return 0.0
    return float(np.mean(np.linalg.norm(p - p_hat, axis=1)[keep] / norm[keep]))


RELATIVE_MOMENTUM_LOSS_DEFINITION = "mean over test samples of ||p - p_hat||_2 / ||p||_2, |p| >= 1e-12"


# --- schedule and training loop ---------------------------------------------


@dataclass(frozen=True)
class AlphaSchedule:
    """Penalty weight that steps up geometrically every ``step_every`` iterations.

    The last step (reached at the final multiple of ``step_every`` before the
    end of the run) sits at ``alpha_max``; ``alpha_max == 0`` disables the
    penalty entirely.
    """

    alpha0: float = 1e-4
    step_every: int = 10_000
    alpha_max: float = 0.5

    def value(self, iteration, total_iterations):
        if self.alpha_max <= 0:
            return 0.0
        if self.alpha_max <= self.alpha0:
            return float(self.alpha_max)
        n_steps = max(1, math.ceil(total_iterations / self.step_every) - 1)
        k = min(iteration // self.step_every, n_steps)
        return float(self.alpha0 * (self.alpha_max / self.alpha0) ** (k / n_steps))


@dataclass
class TrainConfig:
    block: str = ",".join(PAPER_BLOCK)
    n_blocks: int = 15
    tail: str = ""
    learning_rate: float = 0.05
    iterations: int = 750_000
    batch_size: int = 5
    alpha0: float = 1e-4
    alpha_step_every: int = 10_000
    alpha_max: float = 0.5
    epsilon_acc: float = 1e-5
    init_low: float = -math.pi
    init_high: float = math.pi
    seed: int = 0
    val_every: int = 1000
    n_val: int = 1000

    @property
    def architecture(self):
        return Architecture(
            Architecture.parse(self.block).layers * int(self.n_blocks) + Architecture.parse(self.tail).layers
        )

    @property
    def alpha_schedule(self):
        return AlphaSchedule(self.alpha0, int(self.alpha_step_every), self.alpha_max)

    def validate(self):
        if self.architecture.n_params == 0:
            raise ValueError("architecture has no layers")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for name in ("iterations", "batch_size", "alpha_step_every", "val_every"):
            if int(getattr(self, name)) < (0 if name == "iterations" else 1):
                raise ValueError(f"{name} out of range: {getattr(self, name)}")
        if self.alpha0 <= 0 or self.alpha_max < 0:
            raise ValueError("alpha0 must be positive and alpha_max non-negative")
        if self.init_low > self.init_high:
            raise ValueError("init_low must not exceed init_high")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class Checkpoint:
    architecture: Architecture
    theta: np.ndarray
    train_config: dict = field(default_factory=dict)
    iteration: int = 0
    seed: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.shape[0] != self.architecture.n_params:
            raise ValueError(
                f"theta has {self.theta.shape[0]} entries but the architecture has "
                f"{self.architecture.n_params} layers"
            )


@dataclass
class TrainReport:
    loss_curve: list  # rows of (iteration, train_loss, val_mse, alpha)
    theta: np.ndarray
    accuracy: np.ndarray = None
    relative_momentum_loss: float = None
    test_mse: float = None
    metadata: dict = field(default_factory=dict)

    @property
    def initial_val_mse(self):
        return self.loss_curve[0][2]

    @property
    def final_val_mse(self):
        return self.loss_curve[-1][2]


class TrainingDivergedError(RuntimeError):
    def __init__(self, iteration, theta, loss):
        self.iteration = iteration
        self.theta = np.array(theta)
        super().__init__(f"non-finite loss/gradient at iteration {iteration} (loss={loss}); theta={self.theta.tolist()}")


def _val_mse(arch, theta, val_pre16, val_post16):
    return mse_loss(collide_sqc(arch, theta, val_pre16), val_post16)


def train(cfg, data, val=None, test=None, resume=None):
    """Plain mini-batch gradient descent on ``mse + alpha * momentum_penalty``.

    ``val`` defaults to the last ``cfg.n_val`` training samples (held out);
    ``test`` (default: ``val``) feeds the final accuracy and momentum metrics.
    ``resume`` continues from a :class:`Checkpoint` for ``cfg.iterations``
    further iterations.
    """
    cfg.validate()
    arch = cfg.architecture
    if val is None:
        n_val = min(int(cfg.n_val), len(data) // 10)
        if n_val < 1:
            raise ValueError("dataset too small to hold out a validation slice")
        val = data.subset(slice(len(data) - n_val, None))
        data = data.subset(slice(0, len(data) - n_val))
    else:
        val = val.subset(slice(0, int(cfg.n_val)))
    test = val if test is None else test
    B = int(cfg.batch_size)
    if len(data) < B:
        raise ValueError(f"dataset of {len(data)} samples is smaller than one batch ({B})")

    start = 0
    if resume is not None:
        if resume.architecture != arch:
            raise ValueError("checkpoint architecture does not match the training config")
        start = int(resume.iteration)
    end = start + int(cfg.iterations)
    rng = np.random.default_rng([int(cfg.seed), start])
    if resume is None:
        theta = rng.uniform(cfg.init_low, cfg.init_high, size=arch.n_params)
    else:
        theta = resume.theta.copy()

    psi0, rho = encode(embed(data.f_pre))
    post16 = embed(data.f_post)
    val_pre16, val_post16 = embed(val.f_pre), embed(val.f_post)
    schedule = cfg.alpha_schedule
    lr = float(cfg.learning_rate)

    curve = []
    order = rng.permutation(len(data))
    pos = 0
    loss = float("nan")
    for it in range(start, end):
        alpha = schedule.value(it, end)
        if (it - start) % cfg.val_every == 0:
            vm = _val_mse(arch, theta, val_pre16, val_post16)
            curve.append((it, loss, vm, alpha))
            log.info("iter %d  batch loss %.3e  val mse %.3e  alpha %.3g", it, loss, vm, alpha)
        if pos + B > len(order):
            order = rng.permutation(len(data))
            pos = 0
        idx = order[pos:pos + B]
        pos += B
        loss, grad = _loss_grad_encoded(arch, theta, psi0[idx], rho[idx], post16[idx], alpha)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(it, theta, loss)
        theta = theta - lr * grad
    curve.append((end, loss, _val_mse(arch, theta, val_pre16, val_post16), schedule.value(end, end)))

    pred = physical(collide_sqc(arch, theta, embed(test.f_pre)))
    report = TrainReport(
        loss_curve=curve,
        theta=theta.copy(),
        accuracy=np.mean(np.abs(pred - test.f_post) < cfg.epsilon_acc, axis=0),
        relative_momentum_loss=relative_momentum_loss(test, None, pred=pred),
        test_mse=_val_mse(arch, theta, embed(test.f_pre), embed(test.f_post)),
        metadata={"relative_momentum_loss": RELATIVE_MOMENTUM_LOSS_DEFINITION, "epsilon_acc": cfg.epsilon_acc},
    )
    ckpt = Checkpoint(arch, theta.copy(), cfg.to_dict(), end, int(cfg.seed))
    return ckpt, report


def batch_loss(arch, params, f_pre16, f_post16, alpha=0.0):
    """Reference (non-differentiated) batch loss ``mse + alpha * penalty``."""
    return combined_loss(collide_sqc(arch, params, f_pre16), f_post16, alpha)
