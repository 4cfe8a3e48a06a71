"""Trajectory observables: stroboscopic velocity profiles over the forcing
period, least-squares response extraction across an eta sweep, single-mode
amplitudes, and experienced-force averages.

Accumulators are single-writer during a run and merged explicitly afterwards;
all of them also plug into the compiled integrator path via kernel_buffers.
"""

import math
from dataclasses import dataclass

import numpy as np


class VelocityProfile:
    """Per-phase-bin sums of M^{-1}p, their squares, and counts.

    Bin assignment is step_index mod I (exact: I*dt = T is enforced at
    parameter construction). Merging profiles adds sums and counts.
    """

    def __init__(self, I, d=2):
        if I < 1:
            raise ValueError("I must be >= 1")
        self.I = int(I)
        self.d = int(d)
        self.sums = np.zeros((self.I, self.d))
        self.sumsq = np.zeros((self.I, self.d))
        self.counts = np.zeros(self.I, dtype=np.int64)
        self._minv = None

    def kernel_buffers(self, params):
        return {"bins": (self.sums, self.sumsq, self.counts)}

    def accept(self, step_index, state, params):
        if self._minv is None:
            self._minv = params.mass_inverse()
        v = self._minv @ state.p
        i = step_index % self.I
        self.sums[i] += v
        self.sumsq[i] += v * v
        self.counts[i] += 1

    def merge(self, other):
        if other.I != self.I or other.d != self.d:
            raise ValueError("profiles must share I and d to merge")
        out = VelocityProfile(self.I, self.d)
        out.sums = self.sums + other.sums
        out.sumsq = self.sumsq + other.sumsq
        out.counts = self.counts + other.counts
        return out

    def bin_means(self):
        if np.any(self.counts == 0):
            raise ValueError("empty bin: every phase bin needs samples")
        return self.sums / self.counts[:, None]

    def overall_mean(self):
        return self.sums.sum(axis=0) / self.counts.sum()


def stroboscopic_velocity(profile, dt=None):
    """Per-bin (tau_i, mean, stderr). tau_i = (i+1)*dt when dt given, else the
    bin index; stderr is the naive per-bin sample error."""
    if np.any(profile.counts <= 1):
        raise ValueError("empty bin: need more than one sample per phase bin")
    means = profile.bin_means()
    var = profile.sumsq / profile.counts[:, None] - means * means
    var = np.maximum(var, 0.0)
    stderr = np.sqrt(var / (profile.counts[:, None] - 1))
    taus = (np.arange(profile.I) + 1) * (dt if dt is not None else 1.0)
    return [(taus[i], means[i].copy(), stderr[i].copy()) for i in range(profile.I)]


@dataclass
class ResponseFit:
    """Least-squares fit of per-eta means against eta, one fit per component."""

    slope: np.ndarray
    intercept: np.ndarray
    slope_stderr: np.ndarray
    intercept_stderr: np.ndarray
    rss: np.ndarray
    n_points: int
    with_intercept: bool


def fit_linear_response(etas, means, weights=None, intercept=True):
    """OLS (or WLS when weights given) of mean values against eta.

    means: (R, d). weights: per-point 1/sigma^2 scale factors or None.
    Slope standard errors come from the residuals, i.e. from the scatter of
    the independent per-eta runs.
    """
    etas = np.asarray(etas, dtype=float)
    Y = np.atleast_2d(np.asarray(means, dtype=float))
    if Y.shape[0] != etas.shape[0]:
        raise ValueError("etas and means must have matching length")
    n_distinct = np.unique(etas).size
    if n_distinct == 1:
        raise ValueError("rank deficient: all eta values equal")
    if n_distinct < 3:
        raise ValueError("need at least 3 distinct eta values")
    R, d = Y.shape
    X = np.column_stack([np.ones(R), etas]) if intercept else etas[:, None]
    w = np.ones(R) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    Yw = Y * sw[:, None]
    coef, _, rank, _ = np.linalg.lstsq(Xw, Yw, rcond=None)
    if rank < X.shape[1]:
        raise ValueError("rank deficient: all eta values equal")
    resid = Y - X @ coef
    rss = np.sum(w[:, None] * resid * resid, axis=0)
    dof = R - X.shape[1]
    cov_scale = np.linalg.inv(Xw.T @ Xw)
    sigma2 = rss / dof if dof > 0 else np.full(d, np.nan)
    if intercept:
        icpt, slope = coef[0], coef[1]
        icpt_err = np.sqrt(cov_scale[0, 0] * sigma2)
        slope_err = np.sqrt(cov_scale[1, 1] * sigma2)
    else:
        icpt, slope = np.zeros(d), coef[0]
        icpt_err = np.zeros(d)
        slope_err = np.sqrt(cov_scale[0, 0] * sigma2)
    return ResponseFit(slope, icpt, slope_err, icpt_err, rss, R, intercept)


def mode_amplitude(profile, k):
    """Discrete Fourier coefficient (1/I) sum_i mean(tau_i) e^{-2*pi*i*k*i/I}
    of the bin-mean sequence; k=1 is the forcing-frequency mode."""
    if not (0 <= k < profile.I):
        raise ValueError("mode index k must satisfy 0 <= k < I")
    means = profile.bin_means()
    return np.fft.fft(means, axis=0)[k] / profile.I


class BlockMeanAccumulator:
    """Running mean of a per-step vector observable with batch-mean errors.

    kind = "velocity" accumulates M^{-1}p; kind = "force" accumulates the
    time-averaged (mode-0) driving force F0 at the post-step position, which
    is identically zero for modulated fields. Contiguous blocks (one per
    integrator chunk) are later grouped into <=32 batches, so the standard
    error respects autocorrelation at scales below the batch length.
    """

    def __init__(self, kind, d=2, field=None, block_len=65536):
        if kind not in ("velocity", "force"):
            raise ValueError("kind must be 'velocity' or 'force'")
        self.kind = kind
        self.d = d
        self.field = field
        self.zero_force = field is not None and field.modulated and kind == "force"
        self.block_len = block_len
        self.block_sums = []
        self.block_ns = []
        self._cur = np.zeros(d)
        self._cur_n = 0
        self._minv = None

    def kernel_buffers(self, params):
        if self.kind == "velocity":
            return {"vel_blocks": True}
        return {"force_blocks": True}

    def add_velocity_block(self, sum_vec, n):
        self._push(sum_vec, n)

    def add_force_block(self, sum_vec, n):
        if self.zero_force:
            sum_vec = np.zeros(self.d)
        self._push(sum_vec, n)

    def _push(self, sum_vec, n):
        self.block_sums.append(np.array(sum_vec, dtype=float))
        self.block_ns.append(int(n))

    def accept(self, step_index, state, params):
        if self.kind == "velocity":
            if self._minv is None:
                self._minv = params.mass_inverse()
            val = self._minv @ state.p
        elif self.zero_force:
            val = np.zeros(self.d)
        else:
            val = self.field.spatial(state.q)
        self._cur += val
        self._cur_n += 1
        if self._cur_n >= self.block_len:
            self._push(self._cur, self._cur_n)
            self._cur = np.zeros(self.d)
            self._cur_n = 0

    def _flush(self):
        if self._cur_n:
            self._push(self._cur, self._cur_n)
            self._cur = np.zeros(self.d)
            self._cur_n = 0

    def merge(self, other):
        self._flush()
        other._flush()
        out = BlockMeanAccumulator(self.kind, self.d, self.field, self.block_len)
        out.block_sums = self.block_sums + other.block_sums
        out.block_ns = self.block_ns + other.block_ns
        return out

    def result(self, n_batches=32):
        """(mean, stderr). stderr is nan when fewer than 2 batches exist."""
        self._flush()
        if not self.block_sums:
            raise ValueError("no samples accumulated")
        sums = np.array(self.block_sums)
        ns = np.array(self.block_ns, dtype=float)
        mean = sums.sum(axis=0) / ns.sum()
        B = min(n_batches, len(ns))
        if B < 2:
            return mean, np.full(self.d, np.nan)
        idx = np.array_split(np.arange(len(ns)), B)
        bm = np.array([sums[g].sum(axis=0) / ns[g].sum() for g in idx])
        stderr = bm.std(axis=0, ddof=1) / math.sqrt(B)
        return mean, stderr


def mean_experienced_force(acc):
    """Arithmetic mean of F0 along the trajectory, with batch-mean stderr."""
    if acc.kind != "force":
        raise ValueError("accumulator must have kind='force'")
    return acc.result()


def mean_velocity(acc):
    if acc.kind != "velocity":
        raise ValueError("accumulator must have kind='velocity'")
    return acc.result()
