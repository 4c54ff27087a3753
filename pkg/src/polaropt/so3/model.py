"""SO(3)-equivariant point-cloud regressor with hand-written backprop.

Every point carries ``m0`` scalar channels and ``m1`` vector channels. A
layer does, in order:

1. distance-weighted messages: ``s_i += W2 mean_j tanh(W1 [s_j, rbf(d_ij)] + b1) + b2``
2. scalar mixer ``W00`` and vector mixer ``W11`` (acting as ``W11 (x) I_3``)
3. Clebsch-Gordan merge: pairwise dot products ``v_a . v_b`` (``a <= b``)
   concatenated to the scalars and mixed by ``cg_proj``, then ``tanh``
4. norm gate on vectors: ``v_c <- v_c * sigmoid(gamma_c * |v_c|)``
5. residual add when the channel counts match

The readout mean-pools scalar channels over points and applies an affine
map. Only distances, dot products and norms feed the scalars, and vectors
are only ever scaled by invariants or mixed across channels, so the output
is exactly rotation invariant.

Vector features are stored as ``(batch, points, channels, 3)`` arrays with
one row vector per channel; rotating the input cloud ``X -> X R^T``
rotates every vector feature the same way, ``v -> v R^T``.
"""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeMismatchError, StaleCacheError
from .data import random_rotation

N_RBF = 8
RBF_CENTERS = np.linspace(0.0, 4.0, N_RBF)
RBF_WIDTH = 0.5
_NORM_FLOOR = 1e-12


def n_dot_features(m1):
    return m1 * (m1 + 1) // 2


def layer_dims(hc, n_layers):
    """``(scalars_in, vectors_in)`` for every layer; the input layer sees one of each."""
    return [(1, 1) if k == 0 else (hc, hc) for k in range(n_layers)]


@dataclass
class So3Model:
    """Named parameter arrays plus the architecture they describe.

    ``debug_ambient_w11`` maps a layer index to a full ``(3*m1, 3*a1)``
    matrix that replaces the ``W11 (x) I_3`` action in forward. It exists
    only to break equivariance on purpose in tests.
    """

    hc: int
    n_layers: int
    params: dict = field(default_factory=dict)
    debug_ambient_w11: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, hc, n_layers, rng):
        """Gaussian weights with variance ``1/fan_in``, zero biases, unit gates."""
        if hc < 1 or n_layers < 0:
            raise ValueError("hc must be >= 1 and n_layers >= 0")
        params = {}

        def gauss(rows, cols):
            return rng.standard_normal((rows, cols)) / np.sqrt(cols)

        for k, (a0, a1) in enumerate(layer_dims(hc, n_layers)):
            p = f"layers.{k}."
            params[p + "msg_w1"] = gauss(hc, a0 + N_RBF)
            params[p + "msg_b1"] = np.zeros(hc)
            params[p + "msg_w2"] = gauss(a0, hc)
            params[p + "msg_b2"] = np.zeros(a0)
            params[p + "w00"] = gauss(hc, a0)
            params[p + "w11"] = gauss(hc, a1)
            params[p + "cg_proj_w"] = gauss(hc, hc + n_dot_features(hc))
            params[p + "cg_proj_b"] = np.zeros(hc)
            params[p + "gate"] = np.ones(hc)
        m0 = hc if n_layers else 1
        params["readout_w"] = gauss(1, m0)
        params["readout_b"] = np.zeros(1)
        return cls(hc=hc, n_layers=n_layers, params=params)

    def copy(self):
        return So3Model(self.hc, self.n_layers,
                        {k: v.copy() for k, v in self.params.items()},
                        dict(self.debug_ambient_w11))

    def n_params(self):
        return sum(v.size for v in self.params.values())


def rbf_features(points):
    """Gaussian radial basis of all pairwise distances, shape ``(B, N, N, N_RBF)``."""
    diff = points[:, :, None, :] - points[:, None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return np.exp(-np.square((dist[..., None] - RBF_CENTERS) / RBF_WIDTH))


def _as_batch(points):
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 2
    if single:
        points = points[None]
    if points.ndim != 3 or points.shape[-1] != 3:
        raise ShapeMismatchError(f"expected (N, 3) or (B, N, 3) points, got {points.shape}")
    return points, single


def forward(model, points, phi=None):
    """Predict for one cloud ``(N, 3)`` or a batch ``(B, N, 3)``.

    Returns ``(prediction, cache)``; the prediction is a float for a single
    cloud and a ``(B,)`` array for a batch. ``phi`` may carry precomputed
    ``rbf_features(points)`` since they do not depend on the parameters.
    """
    pts, single = _as_batch(points)
    params = model.params
    bsz, n_pts, _ = pts.shape
    if phi is None:
        phi = rbf_features(pts)
    elif phi.shape != (bsz, n_pts, n_pts, N_RBF):
        raise ShapeMismatchError(f"phi has shape {phi.shape}, points {pts.shape}")
    s = np.sum(pts * pts, axis=-1, keepdims=True)
    v = pts[:, :, None, :].copy()
    layers = []
    for k in range(model.n_layers):
        p = f"layers.{k}."
        a0 = s.shape[-1]
        w1 = params[p + "msg_w1"]
        # the pair tensor (B, N, N, hc) dominates the cost, so work in place
        h = phi @ w1[:, a0:].T
        h += (s @ w1[:, :a0].T + params[p + "msg_b1"])[:, None, :, :]
        np.tanh(h, out=h)
        agg = h.sum(axis=2)
        agg /= n_pts
        s1 = s + agg @ params[p + "msg_w2"].T + params[p + "msg_b2"]
        s2 = s1 @ params[p + "w00"].T
        if k in model.debug_ambient_w11:
            amb = model.debug_ambient_w11[k]
            flat = v.reshape(bsz, n_pts, -1)
            v2 = (flat @ amb.T).reshape(bsz, n_pts, -1, 3)
        else:
            v2 = params[p + "w11"] @ v
        m1 = v2.shape[2]
        gram = (v2 @ np.swapaxes(v2, -1, -2)).reshape(bsz, n_pts, m1 * m1)
        w_s, w_g = _split_cg(params[p + "cg_proj_w"], m1)
        z = s2 @ w_s.T + gram @ w_g.T + params[p + "cg_proj_b"]
        t = np.tanh(z)
        nrm = np.sqrt(np.sum(v2 * v2, axis=-1) + _NORM_FLOOR)
        gate = 1.0 / (1.0 + np.exp(-params[p + "gate"] * nrm))
        v_out = v2 * gate[..., None]
        residual = s.shape[-1] == t.shape[-1] and v.shape[2] == m1
        s_out = t + s if residual else t
        if residual:
            v_out = v_out + v
        layers.append(dict(s=s, v=v, h=h, agg=agg, s1=s1, s2=s2, v2=v2, gram=gram,
                           t=t, nrm=nrm, gate=gate, residual=residual))
        s, v = s_out, v_out
    pooled = s.mean(axis=1)
    pred = pooled @ params["readout_w"][0] + params["readout_b"][0]
    cache = dict(phi=phi, layers=layers, pooled=pooled, s_final=s, v_final=v,
                 n_points=n_pts, single=single,
                 snapshot={k: a.copy() for k, a in params.items()})
    return (float(pred[0]) if single else pred), cache


def vector_features(cache):
    """Vector features entering each layer, then the final ones."""
    return [lay["v"] for lay in cache["layers"]] + [cache["v_final"]]


def backward(model, cache, d_pred):
    """Gradients of ``sum(d_pred * prediction)`` w.r.t. every parameter."""
    params = model.params
    for name, snap in cache["snapshot"].items():
        if name not in params or not np.array_equal(params[name], snap):
            raise StaleCacheError(f"parameter {name!r} changed since forward")
    if model.debug_ambient_w11:
        raise NotImplementedError("backward through the debug ambient W11 is not supported")
    d_pred = np.atleast_1d(np.asarray(d_pred, dtype=np.float64))
    grads = {}
    n_pts = cache["n_points"]
    pooled = cache["pooled"]
    grads["readout_b"] = np.array([d_pred.sum()])
    grads["readout_w"] = (d_pred @ pooled)[None, :]
    ds = np.broadcast_to((d_pred[:, None] * params["readout_w"][0])[:, None, :] / n_pts,
                         cache["s_final"].shape).copy()
    dv = np.zeros_like(cache["v_final"])
    phi = cache["phi"]
    n_rbf = phi.shape[-1]

    for k in reversed(range(model.n_layers)):
        c = cache["layers"][k]
        p = f"layers.{k}."
        s, v, v2, gate, nrm = c["s"], c["v"], c["v2"], c["gate"], c["nrm"]
        a0 = s.shape[-1]
        m0 = c["t"].shape[-1]
        m1 = v2.shape[2]
        if c["residual"]:
            ds_in, dv_in = ds.copy(), dv.copy()
        else:
            ds_in, dv_in = np.zeros_like(s), np.zeros_like(v)

        # cg merge + tanh
        dz = ds * (1.0 - c["t"] ** 2)
        w_s, w_g = _split_cg(params[p + "cg_proj_w"], m1)
        iu = np.triu_indices(m1)
        dw_g = _flat_outer(dz, c["gram"]).reshape(m0, m1, m1)
        grads[p + "cg_proj_w"] = np.concatenate(
            [_flat_outer(dz, c["s2"]), dw_g[:, iu[0], iu[1]]], axis=1)
        grads[p + "cg_proj_b"] = dz.sum(axis=(0, 1))
        ds2 = dz @ w_s
        dgram = (dz @ w_g).reshape(v2.shape[:2] + (m1, m1))

        # norm gate
        dv2 = dv * gate[..., None]
        dgate = np.sum(dv * v2, axis=-1)
        du = dgate * gate * (1.0 - gate)
        gamma = params[p + "gate"]
        grads[p + "gate"] = np.sum(du * nrm, axis=(0, 1))
        dv2 += (du * gamma / nrm)[..., None] * v2

        # dot products
        dv2 += (dgram + np.swapaxes(dgram, -1, -2)) @ v2

        # mixers
        grads[p + "w11"] = (np.moveaxis(dv2, 2, 0).reshape(m1, -1)
                            @ np.moveaxis(v, 2, 0).reshape(v.shape[2], -1).T)
        dv_in += params[p + "w11"].T @ dv2
        grads[p + "w00"] = _flat_outer(ds2, c["s1"])
        ds1 = ds2 @ params[p + "w00"]

        # messages
        ds_in += ds1
        grads[p + "msg_w2"] = _flat_outer(ds1, c["agg"])
        grads[p + "msg_b2"] = ds1.sum(axis=(0, 1))
        dagg = ds1 @ params[p + "msg_w2"]
        dpre = np.square(c["h"])
        np.subtract(1.0, dpre, out=dpre)
        dpre *= (dagg / n_pts)[:, :, None, :]
        dpre_j = dpre.sum(axis=1)
        grads[p + "msg_b1"] = dpre_j.sum(axis=(0, 1))
        w1 = params[p + "msg_w1"]
        dw1 = np.empty_like(w1)
        dw1[:, :a0] = _flat_outer(dpre_j, s)
        dw1[:, a0:] = dpre.reshape(-1, m0).T @ phi.reshape(-1, n_rbf)
        grads[p + "msg_w1"] = dw1
        ds_in += dpre_j @ w1[:, :a0]

        ds, dv = ds_in, dv_in
    return grads


def _split_cg(w, m1):
    """Split ``cg_proj_w`` into its scalar block and a ``(out, m1*m1)`` Gram block.

    The stored Gram weights cover pairs ``a <= b`` only; they are placed on
    the upper triangle of a full square so the projection is one matmul
    against the flattened Gram matrix.
    """
    n_dots = n_dot_features(m1)
    w_s = w[:, :-n_dots]
    iu = np.triu_indices(m1)
    w_g = np.zeros((w.shape[0], m1, m1))
    w_g[:, iu[0], iu[1]] = w[:, -n_dots:]
    return w_s, w_g.reshape(w.shape[0], m1 * m1)


def _flat_outer(dy, x):
    """``sum_{b,n} dy[b,n,:] x[b,n,:]^T`` as an ``(out, in)`` matrix."""
    return dy.reshape(-1, dy.shape[-1]).T @ x.reshape(-1, x.shape[-1])


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``.

    Scalars give ``((p - t)**2, 2 (p - t))``; arrays are averaged, so the
    gradient carries the ``1/k`` factor.
    """
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64)
    if diff.ndim == 0:
        return float(diff * diff), float(2.0 * diff)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def invariance_check(model, cloud, n_rotations, rng):
    """Largest ``|f(X R^T) - f(X)| / (|f(X)| + 1e-9)`` over Haar rotations."""
    pts, _ = _as_batch(cloud)
    ref = forward(model, pts)[0]
    worst = 0.0
    for _ in range(n_rotations):
        rot = random_rotation(rng)
        out = forward(model, pts @ rot.T)[0]
        worst = max(worst, float(np.max(np.abs(out - ref) / (np.abs(ref) + 1e-9))))
    return worst
