"""Monte-Carlo physical layer for one relaying session.

Gains follow h_uv = r_uv^(-alpha/2) exp(i theta_uv) with uniform phases. The
noise seen by every receiver has power N0, which already contains the
worst-case interference from simultaneously active relay squarelets, so no
interferer nodes are simulated explicitly.
"""
from dataclasses import dataclass
import math
import warnings

import numpy as np

from .errors import ScheduleViolation
from .geometry import point_to_cell_distance
from .hierarchy import DivergenceWarning, interference_series  # noqa: F401

CODEBOOK = np.array([0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi])


@dataclass(frozen=True)
class ChannelRealization:
    """Phase draws for a tx x rx link set.

    ``theta`` has shape (trials, n_tx, n_rx); in slow fading a single draw is
    shared by all trials (shape (1, n_tx, n_rx)).
    """

    amplitude: np.ndarray
    theta: np.ndarray
    alpha: float
    fading: str

    @property
    def gains(self):
        return self.amplitude[None, :, :] * np.exp(1j * self.theta)


def draw_channel(tx_xy, rx_xy, alpha, fading="fast", trials=1, rng=None):
    """Sample phases for all tx-rx links."""
    rng = np.random.default_rng(rng)
    tx_xy, rx_xy = np.atleast_2d(tx_xy), np.atleast_2d(rx_xy)
    r = np.hypot(tx_xy[:, None, 0] - rx_xy[None, :, 0], tx_xy[:, None, 1] - rx_xy[None, :, 1])
    amp = r ** (-alpha / 2.0)
    t = trials if fading == "fast" else 1
    theta = rng.uniform(0.0, 2 * np.pi, size=(t, len(tx_xy), len(rx_xy)))
    return ChannelRealization(amp, theta, float(alpha), fading)


def quantize_phase(theta):
    """Nearest phase of {0, pi/2, pi, 3pi/2}; the error is at most pi/4."""
    return np.mod(np.round(np.asarray(theta) / (0.5 * np.pi)), 4) * (0.5 * np.pi)


# ------------------------------------------------------------------ MAC

def mac_powers(src_xy, cell, params, level, n_relays):
    """Transmit powers r~^alpha m^-1 a_l^(alpha/2) with r~ = r_{u,A}/sqrt(2 a_l)."""
    r_ua = point_to_cell_distance(src_xy, cell)
    rt = r_ua / math.sqrt(2.0 * params.a_l[level])
    return rt ** params.alpha * params.a_l[level] ** (params.alpha / 2) / n_relays, rt


def _check_distance(xy, cell, thr, what):
    d = point_to_cell_distance(xy, cell)
    if np.any(d < thr - 1e-9):
        raise ScheduleViolation(f"{what} closer than sqrt(2 a_(l+1)) to the relay squarelet")


def mac_sinr_trial(sources, relays, placement, params, const, level, cell,
                   realization=None, trials=1, rng=None, fading="fast"):
    """Matched-filter SINR of each source at the relay squarelet.

    Returns
    -------
    sinr : ndarray (trials, n_sources)
    signal : ndarray (trials, n_sources)
        ||h_u||^2 p_u.
    realization : ChannelRealization
    """
    src_xy = placement.nodes[np.asarray(sources, dtype=int)]
    rel_xy = placement.nodes[np.asarray(relays, dtype=int)]
    _check_distance(src_xy, cell, math.sqrt(2.0 * params.a_l[level + 1]), "source")
    m = len(rel_xy)
    p, _ = mac_powers(src_xy, cell, params, level, m)
    if realization is None:
        realization = draw_channel(src_xy, rel_xy, params.alpha, fading, trials, rng)
    H = realization.gains                                  # (T, U, V)
    norm2 = np.sum(np.abs(H) ** 2, axis=2)                 # (T, U)
    gram = H.conj() @ np.swapaxes(H, 1, 2)                 # h_u^dag h_u~
    cross = np.abs(gram) ** 2
    idx = np.arange(len(src_xy))
    cross[:, idx, idx] = 0.0
    interf = cross @ p / norm2
    signal = norm2 * p
    sinr = signal / (interf + const.N0 + const.delta2)
    return sinr, signal, realization


def cross_term_mean(src_xy, rel_xy, alpha):
    """E|h_u^dag h_u~|^2 = sum_v r_uv^-alpha r_u~v^-alpha (matrix over source pairs)."""
    r = np.hypot(src_xy[:, None, 0] - rel_xy[None, :, 0], src_xy[:, None, 1] - rel_xy[None, :, 1])
    w = r ** -alpha
    return w @ w.T


# ------------------------------------------------------------------- BC

@dataclass(frozen=True)
class BCTrial:
    """Per-trial outputs of the beamforming broadcast.

    sinr : (trials, n_dest); power : (trials, n_relays) samples of |x^_v|^2;
    alignment : (trials, n_dest) ratios |h_w h^_w^dag|^2 / ||h_w||^4.
    """

    sinr: np.ndarray
    power: np.ndarray
    alignment: np.ndarray
    power_limit: float


def bc_beamform_trial(relays, destinations, placement, params, const, level,
                      cell=None, realization=None, trials=1, rng=None,
                      fading="fast", quantized=True):
    """Quantized-phase transmit beamforming from a relay squarelet.

    The relays send x = sum_w h^_w^dag / ||h_w|| x~_w with x~_w ~ CN(0, K m^-1
    a_l^(alpha/2)), K = 2^-alpha (1 - Delta^2), plus CN(0, Delta^2)
    quantization noise.
    """
    rng = np.random.default_rng(rng)
    rel_xy = placement.nodes[np.asarray(relays, dtype=int)]
    dst_xy = placement.nodes[np.asarray(destinations, dtype=int)]
    if cell is not None:
        _check_distance(dst_xy, cell, math.sqrt(2.0 * params.a_l[level + 1]), "destination")
    r = np.hypot(rel_xy[:, None, 0] - dst_xy[None, :, 0], rel_xy[:, None, 1] - dst_xy[None, :, 1])
    if np.any(r.max(axis=0) > 2.0 * r.min(axis=0) + 1e-9):
        raise ScheduleViolation("destination distance spread exceeds a factor 2")
    m = len(rel_xy)
    if realization is None:
        realization = draw_channel(rel_xy, dst_xy, params.alpha, fading, trials, rng)
    H = realization.gains                                  # (T, V, W)
    th = quantize_phase(realization.theta) if quantized else realization.theta
    Hq = realization.amplitude[None] * np.exp(1j * th)
    T = max(trials, H.shape[0])
    H = np.broadcast_to(H, (T,) + H.shape[1:])
    Hq = np.broadcast_to(Hq, (T,) + Hq.shape[1:])
    norm2 = np.sum(np.abs(H) ** 2, axis=1)                 # ||h_w||^2, (T, W)
    px = const.bc_power_factor * params.a_l[level] ** (params.alpha / 2) / m
    # effective gain from beam of w~ to receiver w: h_w h^_w~^dag / ||h_w~||
    eff = np.einsum("tvw,tvx->twx", H, Hq.conj()) / np.sqrt(norm2)[:, None, :]
    g2 = np.abs(eff) ** 2
    W = H.shape[2]
    idx = np.arange(W)
    signal = g2[:, idx, idx] * px
    interf = (g2.sum(axis=2) - g2[:, idx, idx]) * px
    sinr = signal / (interf + norm2 * const.delta2 + const.N0)
    align = np.abs(np.einsum("tvw,tvw->tw", H, Hq.conj())) ** 2 / norm2 ** 2
    # transmitted samples
    xt = np.sqrt(px / 2) * (rng.standard_normal((T, W)) + 1j * rng.standard_normal((T, W)))
    x = np.einsum("tvw,tw->tv", Hq.conj() / np.sqrt(norm2)[:, None, :], xt)
    z = np.sqrt(const.delta2 / 2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
    power = np.abs(x + z) ** 2
    limit = params.a_l[level] ** (params.alpha / 2) / m
    return BCTrial(sinr, power, align, limit)


def bc_power_mean(relays, destinations, placement, params, const, level):
    """Exact E|x^_v|^2 = sum_w |h_vw|^2/||h_w||^2 K m^-1 a^(alpha/2) + Delta^2."""
    rel_xy = placement.nodes[np.asarray(relays, dtype=int)]
    dst_xy = placement.nodes[np.asarray(destinations, dtype=int)]
    r = np.hypot(rel_xy[:, None, 0] - dst_xy[None, :, 0], rel_xy[:, None, 1] - dst_xy[None, :, 1])
    a = r ** -params.alpha
    m = len(rel_xy)
    px = const.bc_power_factor * params.a_l[level] ** (params.alpha / 2) / m
    return (a / a.sum(axis=0)).sum(axis=1) * px + const.delta2


# ---------------------------------------------------- budgets and costs

def interference_budget(alpha, cutoff):
    """1 + sum_{i<=cutoff} 8 i 2^alpha i^-alpha and the bound on the remaining tail.

    Emits a DivergenceWarning for alpha <= 2 (tail bound is then infinite).
    """
    if alpha <= 2:
        warnings.warn(f"interference series diverges for alpha={alpha}",
                      DivergenceWarning, stacklevel=2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DivergenceWarning)
            return interference_series(alpha, cutoff)
    return interference_series(alpha, cutoff)


def quantizer_cost(phase, params, const, level):
    """Quantizer bits per n_{l+1} message bits.

    mac: K5. bc: (1/K6) log2(Delta^-2 2^(l+1) n^(alpha/2)).
    """
    if phase == "mac":
        return const.K5
    if phase == "bc":
        return math.log2(2.0 ** (level + 1) * params.n ** (params.alpha / 2)
                         / const.delta2) / const.K6
    raise ValueError(f"unknown phase {phase!r}")


def rate_floor_mean(sinr):
    """Sample mean and standard error of log2(1 + SINR)/2."""
    r = 0.5 * np.log2(1.0 + np.asarray(sinr))
    r = r.reshape(r.shape[0], -1) if r.ndim > 1 else r[:, None]
    mean = r.mean(axis=0)
    se = r.std(axis=0, ddof=1) / math.sqrt(r.shape[0]) if r.shape[0] > 1 else np.zeros_like(mean)
    return mean, se


def write_trials_csv(path, sinr, power=None, ids=None):
    """Stream trial outputs as CSV rows (trial, id, sinr, power)."""
    sinr = np.asarray(sinr)
    ids = np.arange(sinr.shape[1]) if ids is None else ids
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,id,sinr,power\n")
        for t in range(sinr.shape[0]):
            for j, u in enumerate(ids):
                pw = "" if power is None else repr(float(power[t, j]))
                fh.write(f"{t},{u},{float(sinr[t, j])!r},{pw}\n")
