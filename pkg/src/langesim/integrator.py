"""Strang-splitting integrator for the periodically forced Langevin dynamics.

Two execution paths produce the same trajectories from the same stream:
a pure-numpy reference stepper (any d, any SPD mass) and a compiled fast
path (d=2, scalar mass) driven through run_trajectory. The fast path is
selected automatically when the model supports it and every sink exposes
kernel buffers.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels


class BlowUpError(RuntimeError):
    """Non-finite state encountered; carries the 0-based offending step."""

    def __init__(self, step_index, what="non-finite state"):
        super().__init__(f"{what} at step {step_index}")
        self.step_index = step_index


@dataclass
class PhaseState:
    """q wrapped into [0, cell); Q unwrapped; physical time = step_index*dt."""

    q: np.ndarray
    p: np.ndarray
    Q: np.ndarray
    step_index: int = 0

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d), np.zeros(d), np.zeros(d), 0)

    def copy(self):
        return PhaseState(self.q.copy(), self.p.copy(), self.Q.copy(), self.step_index)


class RandomStream:
    """Counter-based stream: Philox keyed by (master_seed, stream_id).

    Identical keys give identical sequences (numpy's stream-stability
    guarantee makes this byte-exact for a fixed numpy version across
    platforms); distinct stream_ids are independent by construction of the
    Philox key schedule. n_drawn counts normal variates, for the
    consumption contract of run_trajectory.
    """

    def __init__(self, master_seed, stream_id):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        self.gen = np.random.Generator(np.random.Philox(key=key))
        self.n_drawn = 0

    def normals(self, shape):
        out = self.gen.standard_normal(shape)
        self.n_drawn += out.size
        return out

    def uniforms(self, shape):
        return self.gen.random(shape)


def derive_stream(master_seed, replica_id):
    return RandomStream(master_seed, replica_id)


class StepCoefficients:
    """Per-run constants of the splitting scheme.

    alpha = exp(-gamma*dt*M^{-1}/2) and S = ((1-alpha^2) M / beta)^{1/2};
    alpha, M and S share the mass eigenbasis, so S is the exact symmetric
    square root and the momentum half-kick preserves N(0, M/beta).
    """

    def __init__(self, params):
        d = params.d
        self.dt = params.dt
        self.half_dt = 0.5 * params.dt
        if params.mass_scalar is not None:
            m = params.mass_scalar
            a = math.exp(-params.gamma * params.dt / (2.0 * m))
            self.alpha = a * np.eye(d)
            self.S = math.sqrt((1.0 - a * a) * m / params.beta) * np.eye(d)
            self.minv = np.eye(d) / m
        else:
            evals, U = np.linalg.eigh(params.mass_matrix)
            lam = 1.0 / evals  # eigenvalues of M^{-1}
            a = np.exp(-params.gamma * params.dt * lam / 2.0)
            self.alpha = (U * a) @ U.T
            s = np.sqrt((1.0 - a * a) * evals / params.beta)
            self.S = (U * s) @ U.T
            self.minv = (U * lam) @ U.T


def splitting_step(state, params, pot, field, eta, noise, coeffs=None):
    """One step of the splitting scheme; noise = (G^n, G^{n+1/2}).

    Returns a new PhaseState; raises BlowUpError on non-finite output.
    """
    if coeffs is None:
        coeffs = StepCoefficients(params)
    g_n, g_h = np.asarray(noise[0], dtype=float), np.asarray(noise[1], dtype=float)
    n = state.step_index
    t_n = n * params.dt
    t_n1 = (n + 1) * params.dt
    kick_n = -pot.gradient(state.q) + eta * field.eval(t_n, state.q)
    p_half = coeffs.alpha @ state.p + coeffs.half_dt * kick_n + coeffs.S @ g_n
    dq = params.dt * (coeffs.minv @ p_half)
    q_new = np.mod(state.q + dq, params.cell)
    Q_new = state.Q + dq
    kick_n1 = -pot.gradient(q_new) + eta * field.eval(t_n1, q_new)
    p_new = coeffs.alpha @ p_half + coeffs.half_dt * kick_n1 + coeffs.S @ g_h
    # same divergence cut as the compiled path: catch runaway momenta well
    # before positions overflow into NaN
    if not (np.all(np.abs(p_new) < 1e100) and np.all(np.isfinite(q_new))):
        raise BlowUpError(n)
    return PhaseState(q_new, p_new, Q_new, n + 1)


def _kernel_supported(params, pot, field, sinks):
    if params.d != 2 or params.mass_scalar is None:
        return False
    if _kernels.pot_id(pot) is None or _kernels.force_id(field) is None:
        return False
    return all(hasattr(s, "kernel_buffers") for s in sinks)


def run_trajectory(init, n_steps, params, pot, field, eta, stream, sinks=()):
    """Apply splitting_step n_steps times, feeding each post-step state to
    every sink; consumes exactly 2*d*n_steps normal variates.

    Dispatches to the compiled path when the model and all sinks support it;
    results agree with the reference loop to floating-point roundoff.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if n_steps == 0:
        return init
    if _kernel_supported(params, pot, field, sinks):
        return _run_fast(init, n_steps, params, pot, field, eta, stream, sinks)
    coeffs = StepCoefficients(params)
    state = init
    for _ in range(n_steps):
        noise = stream.normals((2, params.d))
        try:
            state = splitting_step(state, params, pot, field, eta, noise, coeffs)
        except BlowUpError as e:
            raise BlowUpError(state.step_index, "non-finite state") from e
        for s in sinks:
            s.accept(state.step_index, state, params)
    return state


_CHUNK = 1 << 16  # steps per noise block; results do not depend on this


def _run_fast(init, n_steps, params, pot, field, eta, stream, sinks):
    m = params.mass_scalar
    a_coef = math.exp(-params.gamma * params.dt / (2.0 * m))
    s_coef = math.sqrt((1.0 - a_coef * a_coef) * m / params.beta)
    I = params.steps_per_period
    pid = _kernels.pot_id(pot)
    fid, mode_n = _kernels.force_id(field)
    modulated = field.modulated
    cos_tab = _kernels.cosine_table(I)
    cellx, celly = float(params.cell[0]), float(params.cell[1])

    vec = np.empty(6)
    vec[0:2] = init.q
    vec[2:4] = init.p
    vec[4:6] = init.Q
    step0 = init.step_index
    phase0 = cos_tab[step0 % I] if modulated else 1.0
    g_cache = np.empty(2)
    gx, gy, _, _ = _kernels.eval_g(
        vec[0], vec[1], phase0, params.beta, eta, pid, fid, mode_n
    )
    g_cache[0], g_cache[1] = gx, gy

    binsum = np.zeros((0, 2))
    binsumsq = np.zeros((0, 2))
    bincnt = np.zeros(0, dtype=np.int64)
    acc_vel = acc_vsum = acc_force = False
    block_sinks = []
    for s in sinks:
        buf = s.kernel_buffers(params)
        if buf.get("bins") is not None:
            binsum, binsumsq, bincnt = buf["bins"]
            acc_vel = True
        if buf.get("vel_blocks") or buf.get("force_blocks"):
            acc_vsum = acc_vsum or bool(buf.get("vel_blocks"))
            acc_force = acc_force or bool(buf.get("force_blocks"))
            block_sinks.append((s, buf))

    # With block sinks attached, cap the chunk so short runs still produce
    # enough blocks for a batch-mean error bar. Deterministic in n_steps;
    # trajectories never depend on the chunking (one noise stream, in order).
    chunk = _CHUNK
    if block_sinks:
        chunk = min(_CHUNK, max(256, -(-n_steps // 64)))

    done = 0
    while done < n_steps:
        n = min(chunk, n_steps - done)
        noise = stream.normals((n, 2, 2))
        out = np.zeros(4)  # chunk sums: vx, vy, f0x, f0y
        bad = _kernels.strang_chunk(
            vec, g_cache, step0 + done, n,
            params.dt, a_coef, s_coef, params.beta, m, eta,
            pid, fid, mode_n, modulated, I, cos_tab,
            cellx, celly, noise,
            binsum, binsumsq, bincnt, acc_vel, acc_vsum, acc_force, out,
        )
        if bad >= 0:
            raise BlowUpError(step0 + done + bad)
        for s, buf in block_sinks:
            if buf.get("vel_blocks"):
                s.add_velocity_block(out[0:2], n)
            if buf.get("force_blocks"):
                s.add_force_block(out[2:4], n)
        done += n
    return PhaseState(vec[0:2].copy(), vec[2:4].copy(), vec[4:6].copy(), step0 + n_steps)


def sample_gibbs(params, pot, stream, max_batches=1000):
    """Draw (q, p) from the equilibrium Gibbs measure at eta=0.

    Momenta are exactly N(0, M/beta); positions by rejection sampling of
    exp(-beta V) under a uniform envelope on the cell. Used to seed replicas
    before the nonequilibrium burn-in.
    """
    d = params.d
    if params.mass_scalar is not None:
        L = math.sqrt(params.mass_scalar / params.beta) * np.eye(d)
    else:
        L = np.linalg.cholesky(params.mass_matrix / params.beta)
    p = L @ stream.normals(d)
    if pot.descriptor == "zero":
        q = stream.uniforms(d) * params.cell
        return PhaseState(q, p, q.copy(), 0)
    # envelope: V >= -4 for every built-in (cos2d attains -3, separable -d)
    v_floor = -4.0 if pot.descriptor == "cos2d" else -float(d)
    for _ in range(max_batches):
        cand = stream.uniforms((64, d)) * params.cell
        u = stream.uniforms(64)
        for k in range(64):
            v = pot.value(cand[k])
            if u[k] < math.exp(-params.beta * (v - v_floor)):
                q = cand[k].copy()
                return PhaseState(q, p, q.copy(), 0)
    raise RuntimeError("gibbs sampler failed to accept; check potential bounds")
