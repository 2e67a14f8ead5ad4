"""
Experiment runners: deep-linear dynamics against the closed forms,
post-saturation oscillations, the routing task and the spurious-feature
sweep.

Every runner takes an :class:`~muonlab.config.ExperimentConfig` and returns
a :class:`RunResult`; :func:`write_run` persists it as ``trajectory.csv``,
``metrics.json`` and ``config.json``.
"""

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import theory
from .datagen import (DEFAULT_ROUTING_TARGETS, Rng, SpuriousSpec, aligned_init, allowed_pairs,
                      balanced_small_init, check_encodings, gaussian_regression,
                      make_source_encodings, routing_small_init, spurious_dataset)
from .errors import InvalidInputError, NumericalDivergenceError
from .linalg import effective_rank, singular_values, svd_compact
from .models import (PopulationStats, balancedness_gap, dln_population_grads,
                     routing_batch_grads)
from .optim import make_optimizer

# Above this many records, trajectories are thinned before writing CSV.
MAX_CSV_RECORDS = 100_000


@dataclass
class TrajectoryRecord:
    step: int
    time: float
    loss: float
    product_singular_values: tuple
    balancedness_gap: float = float("nan")
    alignment: np.ndarray = None   # (H, 2) projections of hidden rows on r_1, r_2


@dataclass
class RunResult:
    fingerprint: str
    trajectory: list
    metrics: dict
    wall_time: float
    status: str = "ok"
    tables: dict = field(default_factory=dict)   # extra named CSV tables (list of dict rows)


def measure_alignment(net, stats):
    """Projections ``(u_i . r_1, u_i . r_2)`` of every hidden row of ``U``.

    ``r_k`` are the right singular vectors of ``sigma_yx``.
    """
    res = svd_compact(stats.sigma_yx)
    if res.rank < 2:
        raise InvalidInputError("alignment needs sigma_yx of rank >= 2")
    return net.u @ res.vt[:2].T


def detect_plateaus(t, loss, slope_ratio=0.1, min_duration=0.3, min_drop=0.05):
    """
    Find loss plateaus with a derivative threshold.

    A plateau is a maximal stretch where ``|dL/dt|`` stays below
    ``slope_ratio`` times its maximum over the run, lasting at least
    ``min_duration`` and followed later by a loss drop of at least
    ``min_drop`` times the total decrease (so the converged tail does not
    count).

    Returns
    -------
    list of (t_start, t_end, loss_level)
    """
    t = np.asarray(t, dtype=np.float64)
    loss = np.asarray(loss, dtype=np.float64)
    if t.size < 3:
        return []
    slope = np.abs(np.gradient(loss, t))
    peak = slope.max()
    if peak == 0:
        return []
    total_drop = loss[0] - loss.min()
    if not total_drop > 0:
        return []
    flat = slope < slope_ratio * peak
    plateaus = []
    i = 0
    while i < t.size:
        if not flat[i]:
            i += 1
            continue
        j = i
        while j + 1 < t.size and flat[j + 1]:
            j += 1
        if t[j] - t[i] >= min_duration and loss[j] - loss[j:].min() >= min_drop * total_drop:
            plateaus.append((float(t[i]), float(t[j]), float(np.mean(loss[i:j + 1]))))
        i = j + 1
    return plateaus


def crossing_time(t, values, level):
    """First time ``values`` reaches ``level`` (linear interpolation); inf if never."""
    values = np.asarray(values)
    hit = np.flatnonzero(values >= level)
    if hit.size == 0:
        return math.inf
    i = hit[0]
    if i == 0:
        return float(t[0])
    w = (level - values[i - 1]) / (values[i] - values[i - 1])
    return float(t[i - 1] + w * (t[i] - t[i - 1]))


# ---------------------------------------------------------------- dynamics

def _regression_setup(cfg):
    rng = Rng(cfg.seed)
    d_in, hidden, d_out = cfg.model.d_in, cfg.model.hidden, cfg.model.d_out
    n = cfg.n_samples if cfg.mode == "sample" else 1
    data = gaussian_regression(rng.substream("data"), n, d_in, d_out, cfg.data.spectrum, cfg.data.noise)
    init_rng = rng.substream("init")
    if cfg.data.init == "aligned":
        net = aligned_init(init_rng, data.q, data.r, hidden, cfg.data.init_scale)
    else:
        net = balanced_small_init(init_rng, d_in, hidden, d_out, cfg.data.init_scale,
                                  exact_balance=cfg.data.init == "balanced")
    if cfg.mode == "population":
        stats = data.stats
        a = stats.sigma_yx
        sigma_yy = a @ a.T + cfg.data.noise ** 2 * np.eye(d_out)
    else:
        stats = PopulationStats.from_samples(data.xs, data.ys)
        sigma_yy = data.ys.T @ data.ys / data.ys.shape[0]
    return data, net, stats, sigma_yy


def _mse(w, stats, sigma_yy):
    # Full MSE 1/2 E||W x - y||^2 from second moments.
    return float(0.5 * np.sum((w @ stats.sigma_xx) * w) - np.sum(w * stats.sigma_yx)
                 + 0.5 * np.trace(sigma_yy))


def train_deep_linear(cfg, net, stats, sigma_yy, learning_rate=None, momentum=None, log_every=None):
    """Full-batch / population training loop shared by dynamics and oscillation runs."""
    hp = cfg.optimizer.hyperparams()
    if learning_rate is not None:
        hp = replace(hp, learning_rate=learning_rate)
    if momentum is not None:
        hp = replace(hp, momentum=momentum)
    opt = make_optimizer(cfg.optimizer.kind, hp)
    log_every = cfg.log_every if log_every is None else log_every
    want_alignment = net.u.shape[0] >= 1 and svd_compact(stats.sigma_yx).rank >= 2
    records = []
    status = "ok"
    eta = hp.learning_rate

    def log(step):
        w = net.v @ net.u
        records.append(TrajectoryRecord(
            step, step * eta, _mse(w, stats, sigma_yy),
            tuple(singular_values(w, method=hp.svd_method)), balancedness_gap(net),
            measure_alignment(net, stats) if want_alignment else None))

    log(0)
    for step in range(1, cfg.steps + 1):
        # Divergence is detected below; silence the overflow warnings it causes.
        with np.errstate(over="ignore", invalid="ignore"):
            gu, gv = dln_population_grads(net, stats)
        try:
            u, v = opt.step([net.u, net.v], [gu, gv])
        except InvalidInputError:
            status = "failed"   # non-finite gradient
            break
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            status = "failed"
            break
        net.u, net.v = u, v
        if step % log_every == 0 or step == cfg.steps:
            log(step)
    return records, status


def _tracking_errors(times, sigmas, s, kind, fit_fraction=0.05, end_fraction=0.99):
    """Max relative deviation between simulated and closed-form mode trajectories.

    The oracle is aligned at the first record where the mode exceeds
    ``fit_fraction * s_k`` (logistic init for GD, time offset for spectral
    runs) and compared until the oracle reaches ``end_fraction * s_k``.
    """
    errors = []
    for k, sk in enumerate(s):
        if sk <= 0:
            continue
        sig = sigmas[:, k]
        above = np.flatnonzero(sig >= fit_fraction * sk)
        if above.size == 0:
            errors.append(math.inf)
            continue
        i0 = above[0]
        t0, s0 = times[i0], sig[i0]
        if kind == "spectral":
            offset = theory.fit_spectral_offset(t0, s0)
            t_end = theory.spectral_learn_time(end_fraction * sk, offset)
            pred = theory.spectral_sigma_trajectory(sk, times, offset)
        else:
            sigma0 = theory.fit_logistic_init(sk, t0, s0)
            t_end = theory.gd_learn_time(sk, sigma0, end_fraction)
            pred = theory.gd_sigma_trajectory(sk, sigma0, times)
        window = (times >= t0) & (times <= t_end)
        if not np.any(window):
            errors.append(math.inf)
            continue
        errors.append(float(np.max(np.abs(sig[window] - pred[window]) / pred[window])))
    return errors


def run_dynamics(cfg):
    """Train a deep linear net and compare its product spectrum with the closed forms."""
    start = time.perf_counter()
    data, net, stats, sigma_yy = _regression_setup(cfg)
    records, status = train_deep_linear(cfg, net, stats, sigma_yy)
    s = np.asarray(cfg.data.spectrum, dtype=np.float64)
    times = np.array([r.time for r in records])
    losses = np.array([r.loss for r in records])
    sigmas = np.array([r.product_singular_values[:s.size] for r in records])
    kind = "spectral" if cfg.optimizer.kind.startswith("spectral") else "gd"
    metrics = {"status": status, "steps_run": records[-1].step, "final_loss": float(losses[-1]),
               "final_balancedness_gap": records[-1].balancedness_gap}
    errs = _tracking_errors(times, sigmas, s, kind)
    for k, e in enumerate(errs):
        metrics[f"tracking_error_{k + 1}"] = e
    metrics["max_tracking_error"] = max(errs) if errs else math.nan
    for k, sk in enumerate(s):
        metrics[f"t90_{k + 1}"] = crossing_time(times, sigmas[:, k], 0.9 * sk)
        metrics[f"t99_{k + 1}"] = crossing_time(times, sigmas[:, k], 0.99 * sk)
    plateaus = detect_plateaus(times, losses)
    metrics["n_plateaus"] = len(plateaus)
    metrics["plateaus"] = [list(p) for p in plateaus]
    return RunResult(cfg.fingerprint(), records, metrics, time.perf_counter() - start, status)


# ------------------------------------------------------------- oscillation

def oscillation_amplitude(times, sigma2, target, t_start):
    """``max |sigma_2(t) - target|`` over ``t >= t_start``."""
    window = np.asarray(times) >= t_start
    if not np.any(window):
        return math.nan
    return float(np.max(np.abs(np.asarray(sigma2)[window] - target)))


def run_oscillation(cfg):
    """
    Post-saturation oscillation amplitude of sigma_2 per learning rate,
    with and without momentum.

    The reference ``s_2`` is the second singular value of the training-set
    least-squares map (the exact fixed point in sample mode). The window
    starts once both modes have saturated, at ``1.25 sqrt(s_1)``.
    """
    start = time.perf_counter()
    data, net0, stats, sigma_yy = _regression_setup(cfg)
    w_star = np.linalg.solve(stats.sigma_xx, stats.sigma_yx.T).T
    target = singular_values(w_star)
    s = np.asarray(cfg.data.spectrum, dtype=np.float64)
    if s.size < 2:
        raise InvalidInputError("oscillation study needs at least two modes")
    t_start = 1.25 * math.sqrt(float(target[0]))
    kind = "spectral_momentum_gd" if cfg.optimizer.kind == "spectral_gd" else cfg.optimizer.kind
    rows = []
    metrics = {"status": "ok", "s2_reference": float(target[1]), "window_start": t_start}
    trajectory = []
    for lr in cfg.oscillation.learning_rates:
        for mu in (0.0, cfg.oscillation.momentum):
            steps = int(math.ceil(cfg.oscillation.t_end / lr))
            run_cfg = replace(cfg, steps=steps, optimizer=replace(
                cfg.optimizer, kind=kind if mu > 0 else cfg.optimizer.kind))
            net = net0.copy()
            records, status = train_deep_linear(run_cfg, net, stats, sigma_yy,
                                                learning_rate=lr, momentum=mu, log_every=1)
            times = np.array([r.time for r in records])
            sig2 = np.array([r.product_singular_values[1] for r in records])
            amp = oscillation_amplitude(times, sig2, float(target[1]), t_start)
            if status != "ok":
                metrics["status"] = "failed"
            rows.append({"learning_rate": lr, "momentum": mu, "amplitude": amp,
                         "amplitude_over_lr": amp / lr, "status": status})
            metrics[f"amplitude_lr{lr:g}_mu{mu:g}"] = amp
            for r in records[::max(1, len(records) // 2000)]:
                trajectory.append(replace(r, alignment=None, step=r.step))
    metrics["amplitudes"] = rows
    return RunResult(cfg.fingerprint(), trajectory, metrics, time.perf_counter() - start,
                     metrics["status"], {"oscillation": rows})


# ----------------------------------------------------------------- routing

def routing_eval(net, encodings, targets):
    """
    Per-pair MSE and nearest-target accuracy over all ``N`` numbers.

    Returns
    -------
    mse, acc : ndarray, shape (m, m)
        Entry ``[j, o]`` is for input source ``j`` routed to output ``o``.
    """
    m = net.m
    enc = np.stack(net.encoders)            # (m, H, in)
    dec = np.stack(net.decoders)            # (m, out, H)
    hid_in = np.einsum("gh,jhi,jni->jng", net.hidden, enc, encodings)      # (m, N, H)
    out = np.einsum("okh,jnh->jonk", dec, hid_in)                         # (m, m, N, out)
    err = out - targets[None, None]
    mse = 0.5 * np.mean(np.sum(err * err, axis=-1), axis=-1)
    dist = np.sum((out[:, :, :, None, :] - targets[None, None, None]) ** 2, axis=-1)
    hit = np.argmin(dist, axis=-1) == np.arange(targets.shape[0])[None, None]
    return mse, hit.mean(axis=-1).reshape(m, m)


def _routing_batch(rng, pairs, encodings, targets):
    # Algorithm-1 batch without re-validating encodings every step.
    n_numbers = encodings.shape[1]
    idx = rng.integers(0, n_numbers, size=len(pairs))
    return [(j, o, encodings[j, i], targets[i]) for (j, o), i in zip(pairs, idx)]


def run_routing(cfg):
    """Train the routing network with Algorithm-1 batches and evaluate every source pair."""
    start = time.perf_counter()
    rc = cfg.routing
    rng = Rng(cfg.seed)
    targets = DEFAULT_ROUTING_TARGETS if rc.targets is None else np.asarray(rc.targets, dtype=np.float64)
    if targets.shape != (rc.n_numbers, rc.out_dim):
        raise InvalidInputError("targets must have shape (n_numbers, out_dim)")
    encodings = make_source_encodings(rng.substream("encodings"), rc.m, rc.n_numbers, rc.in_dim)
    check_encodings(encodings)
    net = routing_small_init(rng.substream("init"), rc.m, rc.in_dim, rc.hidden, rc.out_dim,
                             rc.init_scale, rc.hidden_init_scale)
    opt = make_optimizer(cfg.optimizer.kind, cfg.optimizer.hyperparams())
    batch_rng = rng.substream("batches")
    # Same loop order as the Algorithm-1 sampler: j outer, shift inner.
    pairs = [(j, (j + s) % rc.m) for j in range(rc.m) for s in range(rc.k)]
    seen = allowed_pairs(rc.m, rc.k)
    seen_mask = np.zeros((rc.m, rc.m), dtype=bool)
    for j, o in seen:
        seen_mask[j, o] = True

    def train_loss():
        mse, _ = routing_eval(net, encodings, targets)
        return float(mse[seen_mask].mean())

    records = []
    status = "ok"
    loss = train_loss()
    records.append(TrajectoryRecord(0, 0.0, loss, tuple(singular_values(net.hidden, "lapack")[:8])))
    step = 0
    for step in range(1, cfg.steps + 1):
        batch = _routing_batch(batch_rng, pairs, encodings, targets)
        _, grads = routing_batch_grads(net, batch)
        try:
            new = opt.step(net.params(), grads)
        except InvalidInputError:
            status = "failed"
            break
        if not np.isfinite(sum(float(np.sum(p)) for p in new)):
            status = "failed"
            break
        net.set_params(new)
        if step % rc.eval_every == 0 or step == cfg.steps:
            loss = train_loss()
            records.append(TrajectoryRecord(step, step * cfg.optimizer.learning_rate, loss,
                                            tuple(singular_values(net.hidden, "lapack")[:8])))
            if loss < rc.loss_tol:
                break
    mse, acc = routing_eval(net, encodings, targets)
    unseen = ~seen_mask
    thr_rank, ent_rank = effective_rank(net.hidden)
    metrics = {
        "status": status,
        "steps_run": step,
        "train_loss": float(mse[seen_mask].mean()),
        "seen_accuracy": float(acc[seen_mask].mean()),
        "unseen_accuracy": float(acc[unseen].mean()) if unseen.any() else math.nan,
        "unseen_pairs_perfect": int(np.sum(acc[unseen] == 1.0)),
        "n_unseen_pairs": int(unseen.sum()),
        "unseen_mse": float(mse[unseen].mean()) if unseen.any() else math.nan,
        "hidden_threshold_rank": thr_rank,
        "hidden_entropy_rank": ent_rank,
        "hidden_singular_values": [float(x) for x in singular_values(net.hidden, "lapack")],
    }
    table = [{"in_src": j, "out_src": o, "seen": bool(seen_mask[j, o]),
              "mse": float(mse[j, o]), "accuracy": float(acc[j, o])}
             for j in range(rc.m) for o in range(rc.m)]
    result = RunResult(cfg.fingerprint(), records, metrics, time.perf_counter() - start, status,
                       {"generalization": table})
    result.net = net
    return result


# ---------------------------------------------------------- spurious sweep

def _eval_loss_and_accuracy(w, xs, ys):
    pred = xs @ w.T
    loss = 0.5 * float(np.mean(np.sum((pred - ys) ** 2, axis=1)))
    acc = float(np.mean(np.sign(pred) == np.sign(ys)))
    return loss, acc


def spurious_single_run(sc, kind, strength, seed, steps, base_opt):
    """
    One (optimizer, spurious strength, seed) training run.

    Returns a dict with the eval curves and summary numbers. The separation
    step is the first evaluated step where the two eval losses differ by
    more than 10% of the with-spurious loss (``None`` if never).
    """
    spec = SpuriousSpec(sc.core_strength, strength, sc.noise_level, sc.d_in, sc.d_out)
    rng = Rng(seed)
    data = spurious_dataset(rng.substream("data"), spec, sc.n_train, sc.n_eval)
    stats = PopulationStats.from_samples(data.xs, data.ys)
    net = balanced_small_init(rng.substream("init"), sc.d_in, sc.hidden, sc.d_out, sc.init_scale)
    hp = replace(base_opt.hyperparams(), **_SPURIOUS_OPT_DEFAULTS[kind])
    opt = make_optimizer(kind, hp)
    curve = []
    separation = None
    status = "ok"
    for step in range(steps + 1):
        if step % sc.eval_every == 0:
            w = net.v @ net.u
            lw, aw = _eval_loss_and_accuracy(w, *data.eval_with)
            lo, ao = _eval_loss_and_accuracy(w, *data.eval_without)
            curve.append((step, lw, lo, aw, ao))
            if separation is None and step > 0 and abs(lo - lw) > 0.1 * lw:
                separation = step
        if step == steps:
            break
        gu, gv = dln_population_grads(net, stats)
        u, v = opt.step([net.u, net.v], [gu, gv])
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            status = "failed"
            break
        net.u, net.v = u, v
    curve = np.array(curve)
    return {
        "optimizer": kind, "spurious_strength": strength, "seed": seed, "status": status,
        "peak_without_loss": float(curve[:, 2].min()),
        "peak_without_accuracy": float(curve[:, 4].max()),
        "final_with_loss": float(curve[-1, 1]), "final_without_loss": float(curve[-1, 2]),
        "separation_step": separation, "curve": curve,
    }


# Per-optimizer learning rates and momenta for the spurious sweep.
_SPURIOUS_OPT_DEFAULTS = {
    "gd": {"learning_rate": 1e-2, "momentum": 0.0},
    "momentum_gd": {"learning_rate": 1e-3, "momentum": 0.9},
    "spectral_gd": {"learning_rate": 1e-3, "momentum": 0.0},
    "spectral_momentum_gd": {"learning_rate": 1e-3, "momentum": 0.9},
    "muon": {"learning_rate": 1e-3, "momentum": 0.9},
    "adam": {"learning_rate": 1e-3, "momentum": 0.0},
}


def _spurious_job(args):
    return spurious_single_run(*args)


def find_crossover(strengths, peak_a, peak_b, tol=1e-3):
    """
    Smallest grid strength above which method ``a`` is strictly worse (higher
    peak loss) than ``b`` at every grid point, provided ``a`` is not worse than
    ``b`` (within ``tol``) at the smallest strength. ``None`` if no such point.
    """
    order = np.argsort(strengths)
    s = np.asarray(strengths, dtype=np.float64)[order]
    a = np.asarray(peak_a, dtype=np.float64)[order]
    b = np.asarray(peak_b, dtype=np.float64)[order]
    if s.size < 2 or a[0] > b[0] + tol:
        return None
    worse = a > b + tol
    for i in range(s.size - 1):
        if np.all(worse[i + 1:]):
            return float(s[i])
    return None


def run_spurious_sweep(cfg, jobs=1):
    """
    Sweep the spurious strength for several optimizers and seeds.

    Jobs run in parallel when ``jobs > 1``; results are merged in grid order
    so the output does not depend on scheduling.
    """
    start = time.perf_counter()
    sc = cfg.spurious
    tasks = [(sc, kind, float(strength), int(seed), cfg.steps, cfg.optimizer)
             for strength in sc.spurious_strengths for kind in sc.optimizers for seed in sc.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_spurious_job, tasks))
    else:
        results = [_spurious_job(t) for t in tasks]
    rows = []
    trajectory = []
    for res in results:
        curve = res.pop("curve")
        rows.append(res)
        for step, lw, lo, aw, ao in curve:
            trajectory.append({"optimizer": res["optimizer"], "spurious_strength": res["spurious_strength"],
                               "seed": res["seed"], "step": int(step), "loss_with": lw, "loss_without": lo,
                               "accuracy_with": aw, "accuracy_without": ao})
    metrics = {"status": "ok" if all(r["status"] == "ok" for r in rows) else "failed"}
    strengths = sorted({r["spurious_strength"] for r in rows})
    mean_peak = {}
    for kind in sc.optimizers:
        mean_peak[kind] = [float(np.mean([r["peak_without_loss"] for r in rows
                                          if r["optimizer"] == kind and r["spurious_strength"] == s]))
                           for s in strengths]
    metrics["strengths"] = strengths
    metrics["mean_peak_without_loss"] = mean_peak
    if "momentum_gd" in mean_peak and "spectral_gd" in mean_peak:
        metrics["crossover_strength"] = find_crossover(strengths, mean_peak["momentum_gd"],
                                                       mean_peak["spectral_gd"])
        s0 = strengths[0]
        sep = {r["seed"]: {} for r in rows}
        for r in rows:
            if r["spurious_strength"] == s0:
                sep[r["seed"]][r["optimizer"]] = r["separation_step"]
        later = 0
        for seed, d in sep.items():
            g, p = d.get("momentum_gd"), d.get("spectral_gd")
            g = math.inf if g is None else g
            p = math.inf if p is None else p
            later += int(g > p)
        metrics["separation_later_seeds"] = later
        metrics["n_seeds"] = len(sep)
    result = RunResult(cfg.fingerprint(), [], metrics, time.perf_counter() - start, metrics["status"],
                       {"sweep_summary": rows, "eval_curves": trajectory})
    return result


# ------------------------------------------------------------------ output

def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    # JSON has no inf/nan; encode them as strings so files stay strict.
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return str(float(obj))
    return obj


def dumps_json(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n"


def trajectory_csv(records):
    """Serialize TrajectoryRecords; singular values and alignments become numbered columns."""
    if len(records) > MAX_CSV_RECORDS:
        stride = int(math.ceil(len(records) / MAX_CSV_RECORDS))
        records = records[::stride]
    n_sigma = max((len(r.product_singular_values) for r in records), default=0)
    n_align = max((0 if r.alignment is None else r.alignment.shape[0] for r in records), default=0)
    header = ["step", "time", "loss", "balancedness_gap"]
    header += [f"sigma_{k + 1}" for k in range(n_sigma)]
    header += [f"align_{i}_{c}" for i in range(n_align) for c in (1, 2)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in records:
        row = [r.step, repr(float(r.time)), repr(float(r.loss)), repr(float(r.balancedness_gap))]
        sig = list(r.product_singular_values) + [""] * (n_sigma - len(r.product_singular_values))
        row += [repr(float(x)) if x != "" else "" for x in sig]
        if n_align:
            al = r.alignment.ravel().tolist() if r.alignment is not None else [""] * (2 * n_align)
            row += [repr(float(x)) if x != "" else "" for x in al]
        writer.writerow(row)
    return buf.getvalue()


def table_csv(rows):
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                         for k, v in row.items()})
    return buf.getvalue()


def write_run(out_dir, cfg, result):
    """Write config.json, trajectory.csv, extra tables and finally metrics.json, each atomically."""
    out_dir = Path(out_dir)
    _atomic_write(out_dir / "config.json", cfg.to_json() + "\n")
    if result.trajectory:
        _atomic_write(out_dir / "trajectory.csv", trajectory_csv(result.trajectory))
    for name, rows in result.tables.items():
        _atomic_write(out_dir / f"{name}.csv", table_csv(rows))
    metrics = dict(result.metrics)
    metrics["fingerprint"] = result.fingerprint
    metrics["wall_time"] = result.wall_time
    _atomic_write(out_dir / "metrics.json", dumps_json(metrics))


RUNNERS = {
    "dynamics": run_dynamics,
    "oscillation": run_oscillation,
    "routing": run_routing,
}


def run_experiment(cfg, jobs=1):
    """Dispatch on ``cfg.experiment``; raises NumericalDivergenceError if the run failed."""
    if cfg.experiment == "spurious-sweep":
        result = run_spurious_sweep(cfg, jobs=jobs)
    elif cfg.experiment in RUNNERS:
        result = RUNNERS[cfg.experiment](cfg)
    else:
        raise InvalidInputError(f"experiment {cfg.experiment!r} has no training runner")
    return result


def check_result(result):
    if result.status != "ok":
        raise NumericalDivergenceError(f"run {result.fingerprint} diverged")
    return result
