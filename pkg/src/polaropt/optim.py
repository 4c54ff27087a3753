"""AdamW, Muon and PolarAdamW update rules, the parameter split, and the LR schedule.

The per-parameter step functions are pure in spirit: each takes a state
object, the current weight, the gradient and a learning rate, and returns
the (mutated) state together with the new weight. ``MatrixOptimizer`` wires
them to a dict of named parameters the way the training loop needs.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EpochOutOfRangeError, ShapeMismatchError, ZeroMatrixError
from .polar import NS_FULL, NsConfig, Precision, newton_schulz, shape_scale

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adamw", "muon", "polaradamw")


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros(cls, shape, **hyper):
        return cls(np.zeros(shape), np.zeros(shape), **hyper)


@dataclass
class MuonState:
    momentum: np.ndarray
    mu: float = 0.95
    ns: NsConfig = NS_FULL

    @classmethod
    def zeros(cls, shape, **hyper):
        return cls(np.zeros(shape), **hyper)


@dataclass
class PolarAdamWState:
    adamw: AdamWState
    ns: NsConfig = NS_FULL

    @classmethod
    def zeros(cls, shape, ns=NS_FULL, **hyper):
        return cls(AdamWState.zeros(shape, **hyper), ns)


def _check_shapes(w, g, buf):
    if w.shape != g.shape or w.shape != buf.shape:
        raise ShapeMismatchError(
            f"weight {w.shape}, gradient {g.shape} and state {buf.shape} disagree"
        )


def _adam_moments(state, g):
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return m_hat / (np.sqrt(v_hat) + state.eps)


def adamw_step(state, w, g, eta):
    """One AdamW step with decoupled weight decay and no shape scale."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _check_shapes(w, g, state.m)
    direction = _adam_moments(state, g)
    return state, (1.0 - eta * state.weight_decay) * w - eta * direction


def muon_matrix_step(state, w, g, eta):
    """One Muon step: ``NS(g + mu * m)`` after the momentum update, no decay.

    An all-zero Newton-Schulz input leaves the weight unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _check_shapes(w, g, state.momentum)
    state.momentum = state.mu * state.momentum + g
    try:
        direction = newton_schulz(g + state.mu * state.momentum, state.ns)
    except ZeroMatrixError:
        logger.debug("muon: zero direction, step skipped")
        return state, w.copy()
    return state, w - eta * shape_scale(*w.shape) * direction


def polaradamw_matrix_step(state, w, g, eta):
    """AdamW-preconditioned direction pushed through Newton-Schulz."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    inner = state.adamw
    _check_shapes(w, g, inner.m)
    precond = _adam_moments(inner, g)
    decayed = (1.0 - eta * inner.weight_decay) * w
    try:
        direction = newton_schulz(precond, state.ns)
    except ZeroMatrixError:
        logger.debug("polaradamw: zero direction, only decay applied")
        return state, decayed
    return state, decayed - eta * shape_scale(*w.shape) * direction


# -- schedule -----------------------------------------------------------------


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_epochs: int
    total_epochs: int
    floor_factor: float = 1e-3


def lr_at(schedule, epoch):
    """Linear warmup from ``floor_factor * base_lr`` then cosine decay to zero."""
    if not 0 <= epoch < schedule.total_epochs:
        raise EpochOutOfRangeError(
            f"epoch {epoch} outside [0, {schedule.total_epochs})"
        )
    base = schedule.base_lr
    warm = schedule.warmup_epochs
    if epoch < warm:
        start = schedule.floor_factor * base
        return start + (base - start) * epoch / warm
    span = schedule.total_epochs - warm
    return 0.5 * base * (1.0 + math.cos(math.pi * (epoch - warm) / span))


# -- parameter split ------------------------------------------------------------


@dataclass
class ParamSplit:
    matrix_group: list = field(default_factory=list)
    aux_group: list = field(default_factory=list)


def split_parameters(model):
    """2-D trainable arrays go to the matrix group, everything else to aux.

    Accepts anything exposing a ``params`` mapping (``So3Model``) or the
    mapping itself.
    """
    params = getattr(model, "params", model)
    split = ParamSplit()
    for name, value in params.items():
        (split.matrix_group if np.ndim(value) == 2 else split.aux_group).append(name)
    return split


# -- optimizer over named parameters ----------------------------------------------


class MatrixOptimizer:
    """Apply one of the three arms to a dict of named parameters.

    The matrix group gets the arm's matrix step; the aux group always gets
    AdamW. ``lr`` drives the matrix group and ``aux_lr`` the aux group; for
    the ``adamw`` arm both groups use the AdamW step.

    Parameters
    ----------
    kind : {"adamw", "muon", "polaradamw"}
    split : ParamSplit
    weight_decay : float
        Decoupled decay for AdamW steps (both groups) and the PolarAdamW
        matrix step. The Muon matrix step never decays.
    """

    def __init__(self, kind, split, weight_decay=0.0, betas=(0.9, 0.999),
                 eps=1e-8, mu=0.95, ns=NS_FULL):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}")
        self.kind = kind
        self.split = split
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.mu = mu
        self.ns = ns
        self.state = {}

    def _adam_hyper(self):
        return dict(beta1=self.betas[0], beta2=self.betas[1], eps=self.eps,
                    weight_decay=self.weight_decay)

    def _init_state(self, name, shape, matrix):
        if not matrix or self.kind == "adamw":
            return AdamWState.zeros(shape, **self._adam_hyper())
        if self.kind == "muon":
            return MuonState.zeros(shape, mu=self.mu, ns=self.ns)
        return PolarAdamWState.zeros(shape, ns=self.ns, **self._adam_hyper())

    def step(self, params, grads, lr, aux_lr=None):
        """Update ``params`` in place from ``grads``."""
        aux_lr = lr if aux_lr is None else aux_lr
        matrix = set(self.split.matrix_group)
        for name in (*self.split.matrix_group, *self.split.aux_group):
            is_matrix = name in matrix
            state = self.state.get(name)
            if state is None:
                state = self.state[name] = self._init_state(
                    name, params[name].shape, is_matrix
                )
            g = grads[name]
            if isinstance(state, AdamWState):
                _, params[name] = adamw_step(state, params[name], g,
                                             lr if is_matrix else aux_lr)
            elif isinstance(state, MuonState):
                _, params[name] = muon_matrix_step(state, params[name], g, lr)
            else:
                _, params[name] = polaradamw_matrix_step(state, params[name], g, lr)

    # checkpointing: JSON with exact float reprs round-trips bit-for-bit

    def state_dict(self):
        out = {}
        for name, st in self.state.items():
            if isinstance(st, MuonState):
                out[name] = {"type": "muon", "shape": list(st.momentum.shape),
                             "momentum": st.momentum.ravel().tolist(), "mu": st.mu,
                             "ns": _ns_to_dict(st.ns)}
            else:
                adam = st if isinstance(st, AdamWState) else st.adamw
                rec = {"type": "adamw", "shape": list(adam.m.shape),
                       "m": adam.m.ravel().tolist(), "v": adam.v.ravel().tolist(),
                       "t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2,
                       "eps": adam.eps, "weight_decay": adam.weight_decay}
                if isinstance(st, PolarAdamWState):
                    rec["type"] = "polaradamw"
                    rec["ns"] = _ns_to_dict(st.ns)
                out[name] = rec
        return out

    def load_state_dict(self, data):
        self.state = {}
        for name, rec in data.items():
            shape = tuple(rec["shape"])
            if rec["type"] == "muon":
                self.state[name] = MuonState(
                    np.array(rec["momentum"], dtype=np.float64).reshape(shape),
                    mu=rec["mu"], ns=_ns_from_dict(rec["ns"]))
                continue
            adam = AdamWState(
                np.array(rec["m"], dtype=np.float64).reshape(shape),
                np.array(rec["v"], dtype=np.float64).reshape(shape),
                t=rec["t"], beta1=rec["beta1"], beta2=rec["beta2"],
                eps=rec["eps"], weight_decay=rec["weight_decay"])
            if rec["type"] == "polaradamw":
                self.state[name] = PolarAdamWState(adam, _ns_from_dict(rec["ns"]))
            else:
                self.state[name] = adam

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.state_dict(), fh)

    def load(self, path):
        with open(path) as fh:
            self.load_state_dict(json.load(fh))


def _ns_to_dict(ns):
    return {"a": ns.coeff_a, "b": ns.coeff_b, "c": ns.coeff_c,
            "iterations": ns.iterations, "precision": ns.precision.value}


def _ns_from_dict(d):
    return NsConfig(d["a"], d["b"], d["c"], d["iterations"], Precision(d["precision"]))
