"""Single training runs and paired-seed sweeps over optimizer arms."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..exceptions import DivergenceDetected
from ..matcore import derive_rng
from ..optim import OPTIMIZERS
from .data import make_point_clouds
from .estimator import SO3Regressor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    hc: int = 16
    n_layers: int = 3
    optimizer: str = "muon"
    epochs: int = 100
    warmup_epochs: int = 10
    patience: int = 30
    lr: float | None = None
    aux_lr: float | None = None
    weight_decay: float = 0.0
    seed: int = 0
    n_train: int = 2048
    n_test: int = 512
    n_points: int = 32
    batch_size: int = 64
    ns_precision: str = "bf16"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if min(self.hc, self.n_train, self.n_test, self.batch_size) < 1:
            raise ValueError("hc, n_train, n_test and batch_size must be >= 1")
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")


@dataclass
class TrainResult:
    config: TrainConfig
    history: list
    final_test_mse: float
    stopped_epoch: int
    best_epoch: int
    wall_seconds: float
    diverged: bool = False

    def record(self, include_wall=True):
        """JSON-ready run record. Leave out the wall time for byte-stable output."""
        out = {
            "config": asdict(self.config),
            "history": self.history,
            "final_test_mse": self.final_test_mse,
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "diverged": self.diverged,
        }
        if include_wall:
            out["wall_seconds"] = self.wall_seconds
        return out


def make_data(config):
    """Train and test sets for ``config.seed``; the optimizer plays no part."""
    rng = derive_rng(config.seed, "data")
    x_train, y_train = make_point_clouds(config.n_train, config.n_points, rng)
    x_test, y_test = make_point_clouds(config.n_test, config.n_points, rng)
    return x_train, y_train, x_test, y_test


def build_estimator(config):
    return SO3Regressor(
        hidden_channels=config.hc, n_layers=config.n_layers, optimizer=config.optimizer,
        lr=config.lr, aux_lr=config.aux_lr, epochs=config.epochs,
        warmup_epochs=config.warmup_epochs, patience=config.patience,
        weight_decay=config.weight_decay, batch_size=config.batch_size,
        ns_precision=config.ns_precision, random_state=config.seed,
    )


def train(config):
    """Run one configuration to completion.

    The reported test MSE is the one at the best epoch. With ``epochs=0``
    it is the untrained model's and the history is empty.
    """
    start = time.perf_counter()
    x_train, y_train, x_test, y_test = make_data(config)
    est = build_estimator(config)
    est.fit(x_train, y_train, eval_set=(x_test, y_test))
    return TrainResult(
        config=config,
        history=est.history_,
        final_test_mse=est.best_score_,
        stopped_epoch=est.stopped_epoch_,
        best_epoch=est.best_epoch_,
        wall_seconds=time.perf_counter() - start,
    )


def _train_or_fail(config):
    try:
        return train(config)
    except (DivergenceDetected, FloatingPointError) as exc:
        logger.warning("run %s diverged: %s", config, exc)
        return TrainResult(config, [], math.nan, 0, -1, 0.0, diverged=True)


def sweep_configs(base, hc_list, optimizers, n_seeds):
    """Grid in a fixed order: hc, then seed, then optimizer."""
    return [replace(base, hc=hc, seed=seed, optimizer=opt)
            for hc in hc_list for seed in range(n_seeds) for opt in optimizers]


def run_sweep(base, hc_list=(16,), optimizers=OPTIMIZERS, n_seeds=20, parallel=1):
    """Train every cell of the grid; results come back in grid order.

    Each run derives its own random streams from its seed, so the result
    does not depend on ``parallel`` or on scheduling.
    """
    configs = sweep_configs(base, hc_list, optimizers, n_seeds)
    if parallel <= 1:
        return [_train_or_fail(c) for c in configs]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(_train_or_fail, configs))


@dataclass
class PairedStats:
    n: int
    mean_delta: float
    t_stat: float | None
    sign_fraction: float


def paired_stats(a, b):
    """Paired comparison of ``a - b`` over common seeds.

    ``t = mean(d) / (std(d) / sqrt(n))`` with the sample std; it is
    ``None`` when ``n < 2`` or the differences are all equal.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.size
    if n == 0:
        return PairedStats(0, math.nan, None, math.nan)
    mean = float(d.mean())
    t = None
    if n >= 2:
        sd = float(d.std(ddof=1))
        # differences equal up to rounding carry no spread to test against
        if sd > 1e-12 * abs(mean):
            t = mean / (sd / math.sqrt(n))
    return PairedStats(n, mean, t, float(np.mean(d > 0)))


SWEEP_HEADER = ("hc", "optimizer", "mean_mse", "std_mse", "n", "paired_delta",
                "paired_t", "sign_fraction", "beats_adamw_fraction", "failed_seeds")


def summarize_sweep(results):
    """Table-shaped rows: one per (hc, optimizer), then one paired-delta row per hc.

    For an optimizer row, ``paired_delta`` and ``paired_t`` compare it with
    AdamW (``opt - adamw``). The ``polaradamw-muon`` row holds the paired
    difference ``PolarAdamW - Muon``. A seed that failed in any arm is
    dropped from every comparison at that width.
    """
    rows = []
    for hc in sorted({r.config.hc for r in results}):
        cell = {}
        for r in results:
            if r.config.hc == hc:
                cell.setdefault(r.config.optimizer, {})[r.config.seed] = r
        failed = sorted({s for arm in cell.values() for s, r in arm.items()
                         if r.diverged or not math.isfinite(r.final_test_mse)})
        seeds = sorted(set.intersection(*(set(a) for a in cell.values())) - set(failed))

        def mses(opt):
            return np.array([cell[opt][s].final_test_mse for s in seeds])

        for opt in [o for o in OPTIMIZERS if o in cell]:
            vals = mses(opt)
            row = {"hc": hc, "optimizer": opt,
                   "mean_mse": float(vals.mean()) if seeds else math.nan,
                   "std_mse": float(vals.std(ddof=1)) if len(seeds) > 1 else None,
                   "n": len(seeds), "paired_delta": None, "paired_t": None,
                   "sign_fraction": None, "beats_adamw_fraction": None,
                   "failed_seeds": " ".join(map(str, failed))}
            if opt != "adamw" and "adamw" in cell and seeds:
                base = mses("adamw")
                st = paired_stats(vals, base)
                row.update(paired_delta=st.mean_delta, paired_t=st.t_stat,
                           sign_fraction=st.sign_fraction,
                           beats_adamw_fraction=float(np.mean(vals < base)))
            rows.append(row)
        if "polaradamw" in cell and "muon" in cell and seeds:
            st = paired_stats(mses("polaradamw"), mses("muon"))
            rows.append({"hc": hc, "optimizer": "polaradamw-muon", "mean_mse": None,
                         "std_mse": None, "n": st.n, "paired_delta": st.mean_delta,
                         "paired_t": st.t_stat, "sign_fraction": st.sign_fraction,
                         "beats_adamw_fraction": None,
                         "failed_seeds": " ".join(map(str, failed))})
    return rows
