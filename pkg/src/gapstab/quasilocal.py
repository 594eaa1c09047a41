"""Heisenberg dynamics, weight functions, integral operators, spectral flow,
and Lieb-Robinson / quasi-locality measurements.

Weight functions are specified in the frequency domain, which is all the
finite-volume evaluation needs: in the eigenbasis of H the integral operator
with weight w acts entrywise as A_{jk} -> A_{jk} * w_hat(E_j - E_k).  The
chosen w_hat is the normalized cubic B-spline bump (box^(*4)), which is even,
C^2, exactly supported in [-gamma, gamma], has w_hat(0) = 1, and whose time
kernel is proportional to sinc^4 >= 0, so ||F(A)|| <= ||A||.  W_hat solves
the derivative identity i*omega*W_hat(omega) + w_hat(omega) = 1 with
W_hat(0) = 0 and equals 1/(i*omega) outside the support of w_hat.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import MetricVolume
from .hilbert import Operator, commutator_norm, embed, operator_norm
from .interaction import FFunction, f_norm

__all__ = [
    "WeightPair",
    "DecayEnvelope",
    "heisenberg",
    "integral_op_F",
    "integral_op_G",
    "SpectralFlow",
    "spectral_flow",
    "lr_cone_measure",
    "lr_cone_sweep",
    "ql_envelope_measure",
    "FlowAbort",
]


def _bspline4(x):
    """Cubic cardinal B-spline (box^(*4)), support [-2, 2], peak 2/3.

    Evaluated on |x| < 2 only; outside the support the value is exactly 0
    (the raw clipped-cube sum suffers catastrophic cancellation there).
    """
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 2.0
    xi = np.where(inside, x, 0.0)
    acc = np.zeros_like(xi)
    for c, shift in ((1, 2), (-4, 1), (6, 0), (-4, -1), (1, -2)):
        acc = acc + c * np.clip(xi + shift, 0.0, None) ** 3
    return np.where(inside, acc / 6.0, 0.0)


class WeightPair:
    """Frequency-domain weight pair (w_hat, W_hat) at bandwidth gamma.

    w_hat: even, C^2, supp [-gamma, gamma], w_hat(0) = 1, positive-definite
    (nonnegative time kernel), so the induced Schur multiplier is a
    contraction.  W_hat(omega) = (1 - w_hat(omega)) / (i omega), extended by
    0 at omega = 0; beyond the support it equals 1/(i omega).
    """

    def __init__(self, gamma: float):
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        self.gamma = float(gamma)

    def w_hat(self, omega):
        x = 2.0 * np.asarray(omega, dtype=float) / self.gamma
        return 1.5 * _bspline4(x)

    def W_hat(self, omega):
        om = np.asarray(omega, dtype=float)
        out = np.zeros(om.shape, dtype=complex)
        nz = om != 0
        out[nz] = (1.0 - self.w_hat(om[nz])) / (1j * om[nz])
        return out

    def w_time(self, t):
        """Time kernel of w_hat: (3 gamma / 8 pi) sinc^4(gamma t / 4)."""
        u = self.gamma * np.asarray(t, dtype=float) / 4.0
        s = np.ones_like(u)
        nz = u != 0
        s[nz] = np.sin(u[nz]) / u[nz]
        return 3.0 * self.gamma / (8.0 * np.pi) * s ** 4

    def identity_defect(self, omegas):
        """max |i omega W_hat + w_hat - 1| over the sampled frequencies."""
        om = np.asarray(omegas, dtype=float)
        return float(np.max(np.abs(1j * om * self.W_hat(om) + self.w_hat(om) - 1.0)))

    def W_sup(self):
        """sup |W_hat| (attained at the band edge)."""
        grid = np.linspace(1e-9, self.gamma, 4001)
        inside = np.max(np.abs(self.W_hat(grid)))
        return float(max(inside, 1.0 / self.gamma))


@dataclass
class DecayEnvelope:
    """Empirical non-increasing envelope n -> G(n) with provenance."""

    samples: dict
    label: str = ""
    monotonized: bool = False

    def monotone(self):
        keys = sorted(self.samples)
        out = {}
        running = 0.0
        for k in reversed(keys):
            running = max(running, self.samples[k])
            out[k] = running
        return DecayEnvelope(dict(sorted(out.items())), self.label, True)

    def __call__(self, n):
        keys = sorted(self.samples)
        if not keys:
            return 0.0
        if n <= keys[0]:
            return self.samples[keys[0]]
        for k in keys:
            if k >= n:
                return self.samples[k]
        return 0.0 if self.monotonized else self.samples[keys[-1]]

    def tail_sum(self, start, weight=lambda n: 1.0):
        return sum(weight(n) * g for n, g in self.samples.items() if n >= start)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("r,G\n")
            for k in sorted(self.samples):
                fh.write(f"{k},{self.samples[k]!r}\n")


class EigenFrame:
    """Eigendecomposition of one Hamiltonian + Schur-multiplier application."""

    def __init__(self, H):
        mat = H.dense() if isinstance(H, Operator) else np.asarray(H)
        self.vals, self.vecs = np.linalg.eigh(mat)
        self.bohr = self.vals[:, None] - self.vals[None, :]

    def gap_of_cluster(self, q):
        return float(self.vals[q] - self.vals[q - 1]) if q < len(self.vals) else np.inf

    def projector(self, q):
        g = self.vecs[:, :q]
        return g @ g.conj().T

    def schur(self, mat, multiplier):
        at = self.vecs.conj().T @ mat @ self.vecs
        return self.vecs @ (at * multiplier) @ self.vecs.conj().T

    def evolve(self, mat, t):
        phase = np.exp(1j * t * self.vals)
        at = self.vecs.conj().T @ mat @ self.vecs
        return self.vecs @ (phase[:, None] * at * phase.conj()[None, :]) @ self.vecs.conj().T


def heisenberg(H, A: Operator, t: float, frame: EigenFrame | None = None) -> Operator:
    """tau_t(A) = e^{itH} A e^{-itH}, exact via the eigenbasis (dense only)."""
    if frame is None:
        frame = EigenFrame(H)
    if len(A.sites) != len(frame.vals) and A.data.shape[0] != len(frame.vals):
        raise ValueError("operator dimension does not match the Hamiltonian")
    return Operator(frame.evolve(A.dense(), t), A.sites, A.space)


def integral_op_F(H, A: Operator, weights: WeightPair,
                  frame: EigenFrame | None = None) -> Operator:
    """F(A): entrywise A_{jk} w_hat(E_j - E_k) in the eigenbasis of H."""
    if frame is None:
        frame = EigenFrame(H)
    return Operator(frame.schur(A.dense(), weights.w_hat(frame.bohr)), A.sites, A.space)


def integral_op_G(H, A: Operator, weights: WeightPair,
                  frame: EigenFrame | None = None) -> Operator:
    """G(A): entrywise A_{jk} W_hat(E_j - E_k); bounded interpolation inside the band."""
    if frame is None:
        frame = EigenFrame(H)
    return Operator(frame.schur(A.dense(), weights.W_hat(frame.bohr)), A.sites, A.space)


class FlowAbort(RuntimeError):
    def __init__(self, s, gap, gamma):
        super().__init__(f"gap {gap:.6f} dipped below gamma={gamma} at s={s:.6f}")
        self.s, self.gap, self.gamma = s, gap, gamma


class SpectralFlow:
    """Spectral-flow unitaries U(s) solving U' = -i D(s) U, D(s) = G_s(V).

    Integrates with classical RK4 plus polar re-unitarization, checking
    gap(H(s)) > gamma at every visited grid point.  Stores U and the
    eigenframe of H(s) at each requested grid value.
    """

    def __init__(self, H0, V, gamma, s_grid, s_steps=200, gap_floor=None):
        self.H0op = H0
        self.Vop = V
        self.H0 = H0.dense() if isinstance(H0, Operator) else np.asarray(H0)
        self.V = V.dense() if isinstance(V, Operator) else np.asarray(V)
        self.gamma = float(gamma)
        self.weights = WeightPair(self.gamma)
        self.s_grid = np.asarray(sorted(set(float(s) for s in s_grid)), dtype=float)
        if self.s_grid[0] != 0.0:
            self.s_grid = np.concatenate([[0.0], self.s_grid])
        self.gap_floor = self.gamma if gap_floor is None else gap_floor
        frame0 = EigenFrame(self.H0)
        tol = 1e-8 * max(np.max(np.abs(frame0.vals)), 1.0)
        self.q = int(np.sum(frame0.vals <= frame0.vals[0] + tol))
        self._frames = {0.0: frame0}
        self.U = {0.0: np.eye(self.H0.shape[0], dtype=complex)}
        self._integrate(s_steps)

    def frame(self, s) -> EigenFrame:
        s = float(s)
        if s not in self._frames:
            self._frames[s] = EigenFrame(self.H0 + s * self.V)
        return self._frames[s]

    def _D(self, s):
        fr = self.frame(s)
        gap = fr.gap_of_cluster(self.q)
        if gap <= self.gap_floor:
            raise FlowAbort(s, gap, self.gap_floor)
        return fr.schur(self.V, self.weights.W_hat(fr.bohr))

    def _integrate(self, s_steps):
        total = self.s_grid[-1] - self.s_grid[0]
        u = self.U[0.0].copy()
        for i in range(len(self.s_grid) - 1):
            a, b = self.s_grid[i], self.s_grid[i + 1]
            n_sub = max(1, int(round(s_steps * (b - a) / max(total, 1e-300))))
            h = (b - a) / n_sub
            s = a
            for _ in range(n_sub):
                k1 = -1j * self._D(s) @ u
                u2 = u + 0.5 * h * k1
                d_mid = self._D(s + 0.5 * h)
                k2 = -1j * d_mid @ u2
                k3 = -1j * d_mid @ (u + 0.5 * h * k2)
                k4 = -1j * self._D(s + h) @ (u + h * k3)
                u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                # polar re-projection keeps the path exactly unitary
                w, _, vh = np.linalg.svd(u)
                u = w @ vh
                s += h
            self.U[float(b)] = u.copy()

    def alpha(self, A, s) -> np.ndarray:
        """alpha_s(A) = U(s)^dagger A U(s) on raw matrices."""
        u = self.U[float(s)]
        mat = A.dense() if isinstance(A, Operator) else A
        return u.conj().T @ mat @ u

    def P(self, s) -> np.ndarray:
        return self.frame(s).projector(self.q)

    def unitarity_error(self, s) -> float:
        u = self.U[float(s)]
        return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]), 2))

    def projector_transport_error(self, s) -> float:
        return float(np.linalg.norm(self.alpha(self.P(s), s) - self.P(0.0), 2))

    def checks(self):
        return [{"s": float(s),
                 "projector_error": self.projector_transport_error(s),
                 "unitarity_error": self.unitarity_error(s)}
                for s in self.s_grid]

    def checks_json(self, path):
        import json
        with open(path, "w") as fh:
            json.dump(self.checks(), fh, indent=1, sort_keys=True)


def spectral_flow(H0, V, s_target, gamma, s_steps=200, s_grid=None) -> SpectralFlow:
    """Convenience wrapper returning the flow integrated up to s_target."""
    if s_grid is None:
        s_grid = np.linspace(0.0, s_target, 21)
    return SpectralFlow(H0, V, gamma, s_grid, s_steps=s_steps)


def _matrix_comm_norm(a, b):
    """||[A, B]|| for Hermitian dense matrices; Lanczos above dim 512."""
    import scipy.sparse.linalg as spla
    dim = a.shape[0]
    if dim <= 512:
        return float(np.linalg.norm(a @ b - b @ a, 2))

    def mv(v):
        return 1j * (a @ (b @ v) - b @ (a @ v))

    lo = spla.LinearOperator((dim, dim), matvec=mv, dtype=complex)
    val = spla.eigsh(lo, k=1, which="LM", return_eigenvectors=False,
                     maxiter=5000, tol=1e-9)
    return float(abs(val[0]))


def lr_cone_sweep(phi, vol: MetricVolume, F: FFunction, a_op: Operator,
                  a_sites, b_specs, t_grid, frame=None):
    """Measured ||[tau_t(A), B]|| against the Lieb-Robinson RHS, for one A
    and several B's sharing the dynamics.

    b_specs: list of (b_op, b_sites).  Everything is rotated into the
    eigenbasis once; tau_t is then a phase Hadamard, so the sweep costs a
    few matrix products total plus one Lanczos norm per (B, t).
    """
    H = phi.local_hamiltonian(vol.sites)
    if frame is None:
        frame = EigenFrame(H)
    norm_phi = f_norm(phi, vol, F, 0)
    cf = F.convolution_constant(vol)
    na = operator_norm(a_op)
    v = frame.vecs
    a_eig = v.conj().T @ embed(a_op, vol.sites).dense() @ v
    out_rows = []
    for b_op, b_sites in b_specs:
        if set(a_sites) & set(b_sites):
            raise ValueError("Lieb-Robinson measurement needs disjoint supports")
        nb = operator_norm(b_op)
        b_eig = v.conj().T @ embed(b_op, vol.sites).dense() @ v
        pair_sum = sum(F(vol.distance(x, y)) for x in a_sites for y in b_sites)
        dist = vol.set_distance(a_sites, b_sites)
        for t in t_grid:
            phase = np.exp(1j * float(t) * frame.vals)
            at = (phase[:, None] * a_eig) * phase.conj()[None, :]
            measured = _matrix_comm_norm(at, b_eig)
            bound = (2.0 * na * nb / cf) * np.expm1(
                2.0 * cf * norm_phi * abs(t)) * pair_sum
            out_rows.append({"distance": dist, "t": float(t),
                             "measured": measured, "bound": float(bound)})
    return {"rows": out_rows, "velocity_bound": 2.0 * cf * norm_phi,
            "f_norm": norm_phi, "C_F": cf}


def lr_cone_measure(phi, vol: MetricVolume, F: FFunction, a_op: Operator,
                    b_op: Operator, a_sites, b_sites, t_grid, frame=None):
    """Single-pair Lieb-Robinson cone measurement; see lr_cone_sweep."""
    out = lr_cone_sweep(phi, vol, F, a_op, a_sites, [(b_op, b_sites)], t_grid,
                        frame=frame)
    rows = [{k: r[k] for k in ("t", "measured", "bound")} for r in out["rows"]]
    return {"rows": rows, "velocity_bound": out["velocity_bound"],
            "f_norm": out["f_norm"], "C_F": out["C_F"]}


def ql_envelope_measure(map_fn, vol: MetricVolume, space, probe_ops=None,
                        q: int = 1, label="") -> DecayEnvelope:
    """Empirical quasi-locality envelope of a linear operator map.

    G(r) = max over probe pairs (A at X, B at Y) with d(X, Y) = r of
    ||[K(A), B]|| / (||A|| ||B|| |X|^q), monotonized by running max from the
    right.  Default probes are single-site Paulis (or Gell-Mann-style basis
    for higher local dimension).
    """
    if probe_ops is None:
        probe_ops = _default_site_probes(vol, space)
    samples = {}
    images = []
    for (xs, a) in probe_ops:
        ka = map_fn(embed(a, vol.sites))
        na = operator_norm(a)
        images.append((xs, ka, na * len(xs) ** q))
    for (xs, ka, den) in images:
        for (ys, b) in probe_ops:
            if set(xs) & set(ys):
                continue
            r = vol.set_distance(xs, ys)
            bf = embed(b, vol.sites)
            val = commutator_norm(
                Operator(ka if isinstance(ka, np.ndarray) else ka.dense(),
                         tuple(vol.sites), space),
                bf) / (den * operator_norm(b))
            samples[r] = max(samples.get(r, 0.0), float(val))
    return DecayEnvelope(samples, label=label).monotone()


def _default_site_probes(vol, space):
    from .models import PAULI
    probes = []
    for x in vol.sites:
        d = space.dims[x]
        if d == 2:
            mats = [PAULI["X"], PAULI["Y"], PAULI["Z"]]
        else:
            mats = []
            for i in range(d):
                for j in range(i + 1, d):
                    m = np.zeros((d, d), dtype=complex)
                    m[i, j] = m[j, i] = 1.0
                    mats.append(m)
            diag = np.zeros((d, d), dtype=complex)
            diag[0, 0], diag[1, 1] = 1.0, -1.0
            mats.append(diag)
        for m in mats:
            probes.append(((x,), Operator(m, (x,), space)))
    return probes
