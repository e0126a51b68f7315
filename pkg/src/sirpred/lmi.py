"""Lyapunov-Krasovskii certificate for the polytopic prediction-error system.

The certificate is a tuple (P, R, S, P2, P3) making the 8x8 block matrix
Q(C_i; P, R, S, P2, P3) negative definite at the three polytope vertices, with
P > 0 and R, S >= 0. Verification uses a cyclic Jacobi eigen-solver so that
externally produced certificates can be checked without LAPACK.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from sirpred.core import Gains
from sirpred.stability import delay_matrix, vertex_matrices

log = logging.getLogger(__name__)

CERT_TOL = 1e-8
P_MARGIN = 1e-6
BLOCKS = ("P", "R", "S", "P2", "P3")


class CertificateFormatError(ValueError):
    pass


def _sym(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(2, 2)
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class LmiCandidate:
    P: np.ndarray
    R: np.ndarray
    S: np.ndarray
    P2: np.ndarray
    P3: np.ndarray

    def __post_init__(self):
        for name in ("P", "R", "S"):
            object.__setattr__(self, name, _sym(getattr(self, name)))
        for name in ("P2", "P3"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2, 2))

    @classmethod
    def zero(cls) -> "LmiCandidate":
        z = np.zeros((2, 2))
        return cls(z, z, z, z, z)

    @classmethod
    def identity(cls, scale: float = 1.0) -> "LmiCandidate":
        e = scale * np.eye(2)
        return cls(e, 0.1 * e, 0.1 * e, e, e)

    def to_vector(self) -> np.ndarray:
        v = []
        for m in (self.P, self.R, self.S):
            v += [m[0, 0], m[0, 1], m[1, 1]]
        v += list(self.P2.ravel()) + list(self.P3.ravel())
        return np.array(v)

    @classmethod
    def from_vector(cls, v) -> "LmiCandidate":
        v = np.asarray(v, dtype=float)
        syms = [np.array([[v[k], v[k + 1]], [v[k + 1], v[k + 2]]]) for k in (0, 3, 6)]
        return cls(*syms, v[9:13].reshape(2, 2), v[13:17].reshape(2, 2))


@dataclass(frozen=True)
class PolytopeVertices:
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    i_bar: float

    @classmethod
    def from_i_bar(cls, i_bar: float) -> "PolytopeVertices":
        return cls(*vertex_matrices(i_bar), i_bar)

    def __iter__(self):
        return iter((self.C1, self.C2, self.C3))


# ---------------------------------------------------------------------------
# the block matrix


def build_Q(C, cand: LmiCandidate, B1, eta_bar: float, coupling_34: bool = True) -> np.ndarray:
    """Assemble Q(C; P, R, S, P2, P3) for E = (e, e', e(tau - eta_bar), e(tau - eta(tau))).

    ``coupling_34=False`` puts a zero block at (3, 4), the variant of the
    derivative bound printed without the Jensen cross term.
    """
    C = np.asarray(C, dtype=float)
    B1 = np.asarray(B1, dtype=float)
    P, R, S, P2, P3 = cand.P, cand.R, cand.S, cand.P2, cand.P3
    Q = np.zeros((8, 8))
    Q[0:2, 0:2] = C.T @ P2 + P2.T @ C + S - R
    Q[0:2, 2:4] = P - P2.T + C.T @ P3
    Q[0:2, 6:8] = P2.T @ B1 + R
    Q[2:4, 2:4] = -P3 - P3.T + eta_bar ** 2 * R
    Q[2:4, 6:8] = P3.T @ B1
    Q[4:6, 4:4 + 2] = -(S + R)
    if coupling_34:
        Q[4:6, 6:8] = R
    Q[6:8, 6:8] = -2.0 * R
    # mirror the strict upper blocks, then symmetrize the diagonal blocks
    for i in range(4):
        for j in range(i + 1, 4):
            Q[2 * j:2 * j + 2, 2 * i:2 * i + 2] = Q[2 * i:2 * i + 2, 2 * j:2 * j + 2].T
    return 0.5 * (Q + Q.T)


# ---------------------------------------------------------------------------
# symmetric eigenvalues


def sym_eig(M, tol: float = 1e-12, max_sweeps: int = 100, vectors: bool = False):
    """Eigenvalues (ascending) of a symmetric matrix by cyclic Jacobi rotations.

    With ``vectors=True`` also returns V with M = V diag(w) V^T.
    """
    A = np.array(M, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"square matrix expected, got shape {A.shape}")
    scale = np.linalg.norm(A)
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(1.0, scale):
        raise ValueError("sym_eig: matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    target = tol * scale
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum((A - np.diag(np.diag(A))) ** 2))
        if off <= target or scale == 0:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        log.warning("sym_eig: no convergence after %d sweeps", max_sweeps)
    w = np.diag(A).copy()
    order = np.argsort(w)
    if vectors:
        return w[order], V[:, order]
    return w[order]


# ---------------------------------------------------------------------------
# verification and search


@dataclass
class CertificateReport:
    lambda_min_P: float
    lambda_min_R: float
    lambda_min_S: float
    lambda_max_Q: list
    tol: float = CERT_TOL

    @property
    def feasible(self) -> bool:
        return (self.lambda_min_P > self.tol and self.lambda_min_R >= -self.tol
                and self.lambda_min_S >= -self.tol
                and all(q < -self.tol for q in self.lambda_max_Q))

    @property
    def margin(self) -> float:
        """Largest eigenvalue among the vertex matrices; negative means strict."""
        return max(self.lambda_max_Q)

    def lines(self) -> list[str]:
        out = [f"lambda_min(P) = {self.lambda_min_P:.6g}",
               f"lambda_min(R) = {self.lambda_min_R:.6g}",
               f"lambda_min(S) = {self.lambda_min_S:.6g}"]
        out += [f"lambda_max(Q(C{i + 1})) = {q:.6g}" for i, q in enumerate(self.lambda_max_Q)]
        out.append("verdict: " + ("feasible" if self.feasible else "infeasible"))
        return out


def verify_certificate(cand: LmiCandidate, verts: PolytopeVertices, B1, eta_bar: float,
                       tol: float = CERT_TOL, coupling_34: bool = True) -> CertificateReport:
    qs = [float(sym_eig(build_Q(C, cand, B1, eta_bar, coupling_34))[-1]) for C in verts]
    return CertificateReport(float(sym_eig(cand.P)[0]), float(sym_eig(cand.R)[0]),
                             float(sym_eig(cand.S)[0]), qs, tol)


def lmi_objective(v, verts: PolytopeVertices, B1, eta_bar: float, mu: float = P_MARGIN,
                  coupling_34: bool = True) -> float:
    """max{lambda_max Q(C_i), lambda_max(-P) + mu, lambda_max(-R), lambda_max(-S)}."""
    cand = LmiCandidate.from_vector(v)
    Qs = np.stack([build_Q(C, cand, B1, eta_bar, coupling_34) for C in verts])
    vals = [np.linalg.eigvalsh(Qs)[:, -1].max(),
            -np.linalg.eigvalsh(cand.P)[0] + mu,
            -np.linalg.eigvalsh(cand.R)[0],
            -np.linalg.eigvalsh(cand.S)[0]]
    return float(max(vals))


@dataclass
class SearchResult:
    success: bool
    candidate: LmiCandidate
    f: float
    restarts: int
    evaluations: int
    history: list = field(default_factory=list)


def feasibility_search(verts: PolytopeVertices, B1, eta_bar: float, init: LmiCandidate | None = None,
                       max_restarts: int = 20, maxiter: int = 6000, seed: int = 0,
                       target: float = -CERT_TOL, coupling_34: bool = True) -> SearchResult:
    """Nelder-Mead on the 17 free entries of (P, R, S, P2, P3).

    Each restart starts from the best point so far with a fresh simplex;
    from the second restart on the start is also randomly perturbed.
    Success means the objective drops below ``target``.
    """
    rng = np.random.default_rng(seed)
    x = (init if init is not None else LmiCandidate.identity()).to_vector()
    fun = lambda v: lmi_objective(v, verts, B1, eta_bar, P_MARGIN, coupling_34)
    best_x, best_f = x, fun(x)
    evals = 1
    history = [best_f]
    for r in range(max_restarts):
        if best_f < target:
            return SearchResult(True, LmiCandidate.from_vector(best_x), best_f, r, evals, history)
        start = best_x
        if r > 0:
            start = best_x + 0.1 * rng.standard_normal(best_x.shape) * (np.abs(best_x) + 0.1)
        res = minimize(fun, start, method="Nelder-Mead",
                       options={"maxiter": maxiter, "maxfev": maxiter, "xatol": 1e-10,
                                "fatol": 1e-12, "adaptive": True})
        evals += res.nfev
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
        history.append(best_f)
        log.debug("restart %d: f = %.3g", r, best_f)
    ok = best_f < target
    if not ok:
        log.info("feasibility search failed: best f = %.6g after %d restarts", best_f, max_restarts)
    return SearchResult(ok, LmiCandidate.from_vector(best_x), best_f, max_restarts, evals, history)


def paper_certificate() -> LmiCandidate:
    """The rounded certificate reported for eta_bar = 5, I_bar = 0.03, alpha = (0.115, 0.005)."""
    P = [[51.1, -140.6], [-140.6, 979.2]]
    R = [[16.3, -0.6], [-0.6, 3.3]]
    P2 = [[42.3, -85.3], [-140.5, 984.4]]
    return LmiCandidate(P, R, R, P2, P2)


def problem_data(i_bar: float, g: Gains) -> tuple[PolytopeVertices, np.ndarray]:
    return PolytopeVertices.from_i_bar(i_bar), delay_matrix(g)


# ---------------------------------------------------------------------------
# the functional along a path


def eval_lk_functional(times, path, cand: LmiCandidate, eta_bar: float, t: float,
                       deriv=None) -> float:
    """V = e'Pe + int_{t-eta}^t e'Se + eta * int_{-eta}^0 int_{t+theta}^t e_dot' R e_dot.

    The double integral is rewritten as eta * int_{t-eta}^t (s - t + eta) e_dot' R e_dot ds.
    ``times`` may be non-uniform; ``deriv`` defaults to finite differences of ``path``.
    """
    times = np.asarray(times, dtype=float)
    path = np.asarray(path, dtype=float)
    if deriv is None:
        deriv = np.gradient(path, times, axis=0)
    deriv = np.asarray(deriv, dtype=float)
    lo = t - eta_bar
    if lo < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise IndexError(f"path covers [{times[0]}, {times[-1]}], need [{lo}, {t}]")
    inner = (times > lo) & (times < t)
    s = np.concatenate([[lo], times[inner], [t]])
    e = np.column_stack([np.interp(s, times, path[:, j]) for j in range(path.shape[1])])
    ed = np.column_stack([np.interp(s, times, deriv[:, j]) for j in range(deriv.shape[1])])
    quad_s = np.einsum("ij,jk,ik->i", e, cand.S, e)
    quad_r = np.einsum("ij,jk,ik->i", ed, cand.R, ed) * (s - lo)
    e_t = e[-1]
    return float(e_t @ cand.P @ e_t + np.trapezoid(quad_s, s) + eta_bar * np.trapezoid(quad_r, s))


# ---------------------------------------------------------------------------
# certificate files


def write_certificate(cand: LmiCandidate, path, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    for name in BLOCKS:
        m = getattr(cand, name)
        lines.append(name)
        for row in m:
            lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_certificate(path) -> LmiCandidate:
    """Parse labeled 2x2 blocks (P, R, S, P2, P3); '#' starts a comment."""
    blocks: dict[str, list[float]] = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = re.match(r"^(P2|P3|P|R|S)\s*[:=]?\s*(.*)$", line)
        if head:
            current = head.group(1)
            if current in blocks:
                raise CertificateFormatError(f"block {current} given twice")
            blocks[current] = []
            line = head.group(2)
            if not line:
                continue
        if current is None:
            raise CertificateFormatError(f"numbers before any block label: {raw!r}")
        try:
            blocks[current] += [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise CertificateFormatError(f"bad number in block {current}: {raw!r}") from exc
    missing = [b for b in BLOCKS if b not in blocks]
    if missing:
        raise CertificateFormatError(f"missing blocks: {', '.join(missing)}")
    for name, vals in blocks.items():
        if len(vals) != 4:
            raise CertificateFormatError(f"block {name} needs 4 entries, got {len(vals)}")
    return LmiCandidate(*(np.array(blocks[b]).reshape(2, 2) for b in BLOCKS))
