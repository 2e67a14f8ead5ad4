"""
Two-layer deep linear network and the gated routing network.

Both expose analytic MSE gradients; the deep linear net additionally
supports population-statistics gradients driven only by ``sigma_xx`` and
``sigma_yx``.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .linalg import as_matrix, load_matrix, save_matrix


@dataclass
class PopulationStats:
    """Second-order data statistics: ``sigma_xx`` (d_in x d_in), ``sigma_yx`` (d_out x d_in)."""

    sigma_xx: np.ndarray
    sigma_yx: np.ndarray

    def __post_init__(self):
        self.sigma_xx = as_matrix(self.sigma_xx, "sigma_xx")
        self.sigma_yx = as_matrix(self.sigma_yx, "sigma_yx")
        d = self.sigma_xx.shape[0]
        if self.sigma_xx.shape != (d, d) or self.sigma_yx.shape[1] != d:
            raise InvalidInputError("inconsistent statistics shapes")
        if not np.allclose(self.sigma_xx, self.sigma_xx.T, atol=1e-10):
            raise InvalidInputError("sigma_xx must be symmetric")

    @classmethod
    def from_samples(cls, xs, ys):
        xs = as_matrix(xs, "xs")
        ys = as_matrix(ys, "ys")
        n = xs.shape[0]
        return cls(xs.T @ xs / n, ys.T @ xs / n)


@dataclass
class DeepLinearNet:
    """``y = V @ U @ x`` with ``U`` of shape (H, d_in) and ``V`` of shape (d_out, H)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = as_matrix(self.u, "u")
        self.v = as_matrix(self.v, "v")
        if self.v.shape[1] != self.u.shape[0]:
            raise InvalidInputError(
                f"hidden sizes disagree: u {self.u.shape}, v {self.v.shape}")

    @property
    def dims(self):
        return self.u.shape[1], self.u.shape[0], self.v.shape[0]

    def params(self):
        return [self.u, self.v]

    def set_params(self, params):
        self.u, self.v = params

    def copy(self):
        return DeepLinearNet(self.u.copy(), self.v.copy())


def dln_forward(net, x):
    """Apply the network to a vector (d_in,) or a batch (n, d_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.u.shape[1]:
        raise InvalidInputError(f"input dim {x.shape[-1]} != d_in {net.u.shape[1]}")
    return x @ (net.v @ net.u).T


def product_map(net):
    return net.v @ net.u


def balancedness_gap(net):
    """Frobenius norm of ``V^T V - U U^T``."""
    return float(np.linalg.norm(net.v.T @ net.v - net.u @ net.u.T))


def _check_stats(net, stats):
    d_in, _, d_out = net.dims
    if stats.sigma_xx.shape[0] != d_in or stats.sigma_yx.shape[0] != d_out:
        raise InvalidInputError("statistics do not match network dimensions")


def dln_population_grads(net, stats):
    """
    Gradients of the population MSE.

    ``grad_u = V^T (V U Sxx - Syx)`` and ``grad_v = (V U Sxx - Syx) U^T``.
    """
    _check_stats(net, stats)
    residual = net.v @ net.u @ stats.sigma_xx - stats.sigma_yx
    return net.v.T @ residual, residual @ net.u.T


def dln_population_loss(net, stats):
    """Population loss up to the constant ``tr(Syy) / 2``.

    Equals ``tr(W Sxx W^T) / 2 - tr(W Syx^T)`` for ``W = V U``; add half the
    output second moment to compare against sample losses.
    """
    _check_stats(net, stats)
    w = net.v @ net.u
    return float(0.5 * np.sum((w @ stats.sigma_xx) * w) - np.sum(w * stats.sigma_yx))


def dln_batch_loss_grads(net, xs, ys):
    """Sample MSE ``sum ||V U x_i - y_i||^2 / (2 n)`` and its gradients."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise InvalidInputError("batch must be a non-empty (n, d_in) matrix")
    d_in, _, d_out = net.dims
    if xs.shape[1] != d_in or ys.shape != (xs.shape[0], d_out):
        raise InvalidInputError("batch shapes do not match network")
    n = xs.shape[0]
    err = xs @ (net.v @ net.u).T - ys
    loss = 0.5 * float(np.sum(err * err)) / n
    r = err.T @ xs / n  # d_out x d_in
    return loss, net.v.T @ r, r @ net.u.T


def save_net(directory, net):
    """Write a model as a directory of matrix files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(net, DeepLinearNet):
        named = {"u": net.u, "v": net.v}
        roles = {"u": "input layer U", "v": "output layer V"}
        kind = "deep_linear"
    else:
        named = {"hidden": net.hidden}
        roles = {"hidden": "shared hidden layer"}
        for j, e in enumerate(net.encoders):
            named[f"encoder_{j}"] = e
            roles[f"encoder_{j}"] = f"input encoder for source {j}"
        for o, d in enumerate(net.decoders):
            named[f"decoder_{o}"] = d
            roles[f"decoder_{o}"] = f"output decoder for source {o}"
        kind = "routing"
    manifest = {"kind": kind, "matrices": []}
    for name, mat in named.items():
        save_matrix(directory / f"{name}.mat", mat)
        manifest["matrices"].append(
            {"name": name, "file": f"{name}.mat", "shape": list(mat.shape), "role": roles[name]})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_net(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    mats = {}
    for entry in manifest["matrices"]:
        mat = load_matrix(directory / entry["file"])
        if list(mat.shape) != entry["shape"]:
            raise InvalidInputError(f"{entry['file']}: shape {mat.shape} != manifest {entry['shape']}")
        mats[entry["name"]] = mat
    if manifest["kind"] == "deep_linear":
        return DeepLinearNet(mats["u"], mats["v"])
    m = sum(1 for k in mats if k.startswith("encoder_"))
    return RoutingNet([mats[f"encoder_{j}"] for j in range(m)],
                      [mats[f"decoder_{o}"] for o in range(m)],
                      mats["hidden"])


class RoutingNet:
    """
    Gated linear routing network.

    A sample from input source ``j`` to output source ``o`` is mapped by
    ``decoders[o] @ hidden @ encoders[j]``; only those three matrices take
    part in the forward pass and receive gradient.
    """

    def __init__(self, encoders, decoders, hidden):
        self.encoders = [as_matrix(e, "encoder") for e in encoders]
        self.decoders = [as_matrix(d, "decoder") for d in decoders]
        self.hidden = as_matrix(hidden, "hidden")
        if len(self.encoders) != len(self.decoders) or not self.encoders:
            raise InvalidInputError("need the same positive number of encoders and decoders")
        if len({e.shape for e in self.encoders}) != 1 or len({d.shape for d in self.decoders}) != 1:
            raise InvalidInputError("all encoders (and all decoders) must share a shape")
        h = self.hidden.shape[0]
        if self.hidden.shape != (h, h):
            raise InvalidInputError("hidden layer must be square")
        if self.encoders[0].shape[0] != h or self.decoders[0].shape[1] != h:
            raise InvalidInputError("encoder/decoder shapes do not match hidden layer")

    @property
    def m(self):
        return len(self.encoders)

    def params(self):
        """Parameter list in the fixed order encoders, decoders, hidden."""
        return [*self.encoders, *self.decoders, self.hidden]

    def set_params(self, params):
        m = self.m
        self.encoders = list(params[:m])
        self.decoders = list(params[m:2 * m])
        self.hidden = params[2 * m]

    def copy(self):
        return RoutingNet([e.copy() for e in self.encoders],
                          [d.copy() for d in self.decoders], self.hidden.copy())

    def _check_sources(self, j, o):
        if not (0 <= j < self.m and 0 <= o < self.m):
            raise InvalidInputError(f"source pair ({j}, {o}) out of range for M={self.m}")


def routing_forward(net, x, j, o):
    net._check_sources(j, o)
    return net.decoders[o] @ (net.hidden @ (net.encoders[j] @ np.asarray(x, dtype=np.float64)))


def routing_batch_grads(net, batch):
    """
    Mean-over-samples MSE ``sum ||y_hat - y||^2 / (2 n)`` and gradients.

    Returns
    -------
    loss : float
    grads : list of ndarray
        Same order as ``net.params()``; encoders/decoders not touched by the
        batch get exact zeros.
    """
    samples = list(batch)
    if not samples:
        raise InvalidInputError("empty routing batch")
    n = len(samples)
    js = np.array([smp[0] for smp in samples], dtype=np.intp)
    os_ = np.array([smp[1] for smp in samples], dtype=np.intp)
    if js.min() < 0 or os_.min() < 0 or js.max() >= net.m or os_.max() >= net.m:
        raise InvalidInputError(f"source index out of range for M={net.m}")
    xs = np.array([smp[2] for smp in samples], dtype=np.float64)
    ys = np.array([smp[3] for smp in samples], dtype=np.float64)
    enc = np.stack(net.encoders)
    dec = np.stack(net.decoders)
    a = np.matmul(enc[js], xs[:, :, None])[:, :, 0]
    h = a @ net.hidden.T
    d_sel = dec[os_]
    err = np.matmul(d_sel, h[:, :, None])[:, :, 0] - ys
    back_h = np.matmul(err[:, None, :], d_sel)[:, 0, :]
    back_a = back_h @ net.hidden
    # Selector matrices sum per-sample outer products into per-source
    # gradients; unused sources get exact zeros.
    pick_in = np.zeros((net.m, n))
    pick_in[js, np.arange(n)] = 1.0 / n
    pick_out = np.zeros((net.m, n))
    pick_out[os_, np.arange(n)] = 1.0 / n
    g_enc = (pick_in @ (back_a[:, :, None] * xs[:, None, :]).reshape(n, -1)).reshape(enc.shape)
    g_dec = (pick_out @ (err[:, :, None] * h[:, None, :]).reshape(n, -1)).reshape(dec.shape)
    g_hid = back_h.T @ a / n
    loss = 0.5 * float(np.sum(err * err)) / n
    return loss, [*g_enc, *g_dec, g_hid]
