"""AdamW training loop for the deliberately bare regime.

The recipe is exactly what the config says and nothing more: constant
learning rate from step one, decoupled weight decay, no gradient
rescue of any kind. Divergence is data here, so non-finite losses or
gradients are flagged in the run record and logged, and the run keeps
going; only infrastructure errors abort.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from actlab.config import ExperimentConfig
from actlab.data import BatchPlan, Dataset, batches, eval_batches
from actlab.plainnet import PlainNet, build, count_params
from actlab.probes import layer_stats
from actlab.tensor import Tape, Tensor, softmax_cross_entropy

__all__ = [
    "AdamW",
    "EpochRecord",
    "StepRecord",
    "RunRecord",
    "evaluate",
    "train",
    "multi_seed",
    "aggregate_runs",
    "format_aggregate_row",
]

log = logging.getLogger(__name__)

# fixed sub-stream ids so every consumer of randomness has its own lane
RNG_INIT, RNG_DROPOUT, RNG_PROBE = 0, 1, 2


class AdamW:
    """Adam with decoupled weight decay.

    Moments update from the gradient as usual; the decay step
    ``p -= lr * wd * p`` is applied separately and never flows through
    the moments. Parameters whose ``grad`` is None (never touched by the
    backward pass) are skipped entirely, decay included.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Tensor]],
        lr: float = 1e-3,
        weight_decay: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        decay_activation_params: bool = True,
    ):
        self.named_params = list(named_params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay_activation_params = decay_activation_params
        self.step_count = 0
        self._m = [np.zeros_like(t.data) for _, t in self.named_params]
        self._v = [np.zeros_like(t.data) for _, t in self.named_params]

    def _decays(self, name: str) -> bool:
        if self.weight_decay == 0.0:
            return False
        if not self.decay_activation_params and name.startswith("act"):
            return False
        return True

    def step(self) -> bool:
        """Apply one update. Returns True if any consumed gradient was
        non-finite (the update is applied regardless)."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        saw_nonfinite = False
        for (name, p), m, v in zip(self.named_params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                saw_nonfinite = True
            dt = p.data.dtype.type
            m *= dt(self.beta1)
            m += dt(1.0 - self.beta1) * g
            v *= dt(self.beta2)
            v += dt(1.0 - self.beta2) * (g * g)
            m_hat = m / dt(bc1)
            v_hat = v / dt(bc2)
            p.data -= dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))
            if self._decays(name):
                p.data -= dt(self.lr) * dt(self.weight_decay) * p.data
        return saw_nonfinite


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_loss: float
    test_acc: float


@dataclass
class StepRecord:
    step: int
    loss: float
    grad_norm: float
    nonfinite: bool


@dataclass
class RunRecord:
    seed: int
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    layer_stats_rows: list[dict] = field(default_factory=list)
    param_total: int = 0
    param_activation: int = 0

    @property
    def best_test(self) -> EpochRecord:
        return max(self.epochs, key=lambda e: (e.test_acc, -e.epoch))

    @property
    def best_train(self) -> EpochRecord:
        return max(self.epochs, key=lambda e: (e.train_acc, -e.epoch))

    @property
    def nonfinite_steps(self) -> int:
        return sum(1 for s in self.steps if s.nonfinite)

    def write_metrics_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,split,loss,accuracy\n")
            for e in self.epochs:
                f.write(f"{e.epoch},train,{e.train_loss!r},{e.train_acc!r}\n")
                f.write(f"{e.epoch},test,{e.test_loss!r},{e.test_acc!r}\n")

    def write_steps_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("step,loss,grad_norm,nonfinite_flag\n")
            for s in self.steps:
                f.write(f"{s.step},{s.loss!r},{s.grad_norm!r},{int(s.nonfinite)}\n")

    def write_layerstats_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("epoch,layer,mean,std,dead_frac,grad_norm\n")
            for row in self.layer_stats_rows:
                f.write(
                    f"{row['epoch']},{row['layer']},{row['mean']!r},{row['std']!r},"
                    f"{row['dead_frac']!r},{row['grad_norm']!r}\n"
                )

    def summary_dict(self) -> dict:
        best_te, best_tr = self.best_test, self.best_train
        return {
            "seed": self.seed,
            "param_total": self.param_total,
            "param_activation": self.param_activation,
            "best_test_epoch": best_te.epoch,
            "best_test_acc": best_te.test_acc,
            "best_train_epoch": best_tr.epoch,
            "best_train_acc": best_tr.train_acc,
            "final_train_loss": self.epochs[-1].train_loss,
            "initial_train_loss": self.epochs[0].train_loss,
            "nonfinite_steps": self.nonfinite_steps,
        }


def evaluate(model: PlainNet, ds: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a split, dropout disabled.

    Accuracy counts argmax(logits) == label; numpy's argmax already
    breaks ties toward the lowest class index.
    """
    total_loss = 0.0
    correct = 0
    dtype = model.dtype
    for images, labels in eval_batches(ds, batch_size):
        x = Tensor(images.astype(dtype, copy=False))
        logits = model.forward(x, training=False)
        loss = softmax_cross_entropy(logits, labels)
        total_loss += float(loss.data) * len(labels)
        correct += int((np.argmax(logits.data, axis=1) == labels).sum())
    n = len(ds)
    return total_loss / n, correct / n


def _global_grad_norm(model: PlainNet) -> float:
    total = 0.0
    for p in model.parameters():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def train(config: ExperimentConfig, train_ds: Dataset, test_ds: Dataset, seed: int | None = None) -> RunRecord:
    """One full run for one seed: epoch 0 is the untouched model, then
    ``config.epochs`` passes of AdamW with per-epoch evaluation and
    layer statistics on a fixed probe batch."""
    seed = config.seeds[0] if seed is None else seed
    dtype = np.float32 if config.precision == "float32" else np.float64
    model = build(config.model_config(), np.random.default_rng([seed, RNG_INIT]), dtype=dtype)
    report = count_params(model)
    dropout_rng = np.random.default_rng([seed, RNG_DROPOUT])
    probe_rng = np.random.default_rng([seed, RNG_PROBE])
    probe_n = min(config.probe_batch, len(train_ds))
    probe_idx = probe_rng.choice(len(train_ds), size=probe_n, replace=False)
    probe_images = train_ds.images[probe_idx].astype(dtype, copy=False)
    probe_labels = train_ds.fine_labels[probe_idx]

    opt = AdamW(
        model.named_parameters(),
        lr=config.lr,
        weight_decay=config.weight_decay,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        decay_activation_params=config.decay_activation_params,
    )
    record = RunRecord(
        seed=seed,
        config=config.to_dict(),
        param_total=report.total,
        param_activation=report.activation_params,
    )

    def snapshot(epoch: int):
        tr_loss, tr_acc = evaluate(model, train_ds, batch_size=config.batch_size)
        te_loss, te_acc = evaluate(model, test_ds, batch_size=config.batch_size)
        record.epochs.append(EpochRecord(epoch, tr_loss, tr_acc, te_loss, te_acc))
        for st in layer_stats(model, probe_images, probe_labels):
            record.layer_stats_rows.append(
                {
                    "epoch": epoch,
                    "layer": st.site,
                    "mean": st.mean,
                    "std": st.std,
                    "dead_frac": st.dead_frac,
                    "grad_norm": st.grad_norm,
                }
            )

    snapshot(0)
    step = 0
    warned = False
    for epoch in range(1, config.epochs + 1):
        plan = BatchPlan(seed=seed, batch_size=config.batch_size, epoch=epoch)
        for images, labels in batches(train_ds, plan):
            step += 1
            x = Tensor(images.astype(dtype, copy=False))
            model.zero_grad()
            with Tape() as tape:
                logits = model.forward(x, training=True, rng=dropout_rng)
                loss = softmax_cross_entropy(logits, labels)
                tape.backward(loss)
            grad_norm = _global_grad_norm(model)
            nonfinite_grads = opt.step()
            loss_val = float(loss.data)
            flagged = nonfinite_grads or not np.isfinite(loss_val)
            record.steps.append(StepRecord(step, loss_val, grad_norm, flagged))
            if flagged and not warned:
                log.warning("non-finite loss or gradient at step %d (run continues, divergence is data)", step)
                warned = True
        snapshot(epoch)
    return record


def aggregate_runs(records: list[RunRecord]) -> dict:
    """Mean and sample standard deviation of best-epoch accuracies."""

    def mean_std(values: list[float]) -> tuple[float, float]:
        arr = np.asarray(values, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return float(arr.mean()), std

    train_mean, train_std = mean_std([r.best_train.train_acc for r in records])
    test_mean, test_std = mean_std([r.best_test.test_acc for r in records])
    return {
        "seeds": [r.seed for r in records],
        "best_train_acc_mean": train_mean,
        "best_train_acc_std": train_std,
        "best_test_acc_mean": test_mean,
        "best_test_acc_std": test_std,
        "param_total": records[0].param_total,
        "param_activation": records[0].param_activation,
    }


def multi_seed(
    config: ExperimentConfig, train_ds: Dataset, test_ds: Dataset, seeds: list[int] | None = None
) -> tuple[list[RunRecord], dict]:
    seeds = config.seeds if seeds is None else seeds
    if not seeds:
        raise ValueError("need at least one seed")
    records = [train(config, train_ds, test_ds, seed=s) for s in seeds]
    return records, aggregate_runs(records)


AGGREGATE_HEADER = f"{'activation':<12}{'total params':>14}{'act params':>12}{'best train acc %':>22}{'best test acc %':>22}"


def format_aggregate_row(activation: str, agg: dict) -> str:
    train_col = f"{agg['best_train_acc_mean'] * 100:.2f} ± {agg['best_train_acc_std'] * 100:.2f}"
    test_col = f"{agg['best_test_acc_mean'] * 100:.2f} ± {agg['best_test_acc_std'] * 100:.2f}"
    return f"{activation:<12}{agg['param_total']:>14,}{agg['param_activation']:>12,}{train_col:>22}{test_col:>22}"
