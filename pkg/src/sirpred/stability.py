"""Gain tuning for the observer and the predictor.

Delay-free quadratic stability test and its Lyapunov certificate, the three
vertex quasipolynomials of the polytopic error model, their D-partition
boundaries in the (alpha1, alpha2) plane, and a pointwise stability test by
Chebyshev collocation of the delay equation's infinitesimal generator.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from sirpred.core import Gains

log = logging.getLogger(__name__)

STABILITY_MARGIN = -1e-9
DEFAULT_NODES = 24

# plot windows (alpha1 range, alpha2 range)
WINDOW_LARGE = ((-1.0, 8.0), (-1.0, 8.0))
WINDOW_SMALL = ((-0.2, 1.2), (-0.1, 0.3))


class NoStabilizingGain(RuntimeError):
    pass


class RootFindingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# delay-free observer


def prop1_gain_check(g: Gains) -> bool:
    """True iff alpha1 > 1/(4 sqrt 2) and alpha2 > (alpha1^2+1)/(4 sqrt2 alpha1 - 1)."""
    a1, a2 = g.alpha1, g.alpha2
    c = 4.0 * math.sqrt(2.0)
    if not a1 > 1.0 / c:
        return False
    return a2 > (a1 * a1 + 1.0) / (c * a1 - 1.0)


def observer_matrix(g: Gains) -> np.ndarray:
    return np.array([[-g.alpha1, 1.0], [-g.alpha2, 0.0]])


def lyap_P(g: Gains) -> np.ndarray:
    """Closed-form solution of P A + A^T P = -I for A = [[-a1, 1], [-a2, 0]]."""
    a1, a2 = g.alpha1, g.alpha2
    if a1 == 0 or a2 == 0:
        raise ZeroDivisionError("lyap_P needs nonzero gains")
    return np.array([[a2 * a2 + a2, -a1 * a2],
                     [-a1 * a2, a1 * a1 + a2 + 1.0]]) / (2.0 * a1 * a2)


def lyap_residual(g: Gains) -> float:
    """Max-norm of P A + A^T P + I."""
    P = lyap_P(g)
    A = observer_matrix(g)
    return float(np.max(np.abs(P @ A + A.T @ P + np.eye(2))))


def prop1_Q(s: float, i: float, g: Gains) -> np.ndarray:
    """The matrix Q(S, I) with dV/dt = -beta/(2 a1 a2) x^T Q x along the linear error."""
    if not (0 <= s <= 1 and 0 <= i <= 1 and s + i <= 1 + 1e-12):
        raise ValueError(f"(S, I) = ({s}, {i}) outside the simplex")
    a1, a2 = g.alpha1, g.alpha2
    k = a1 * a1 + a2 + 1.0
    si = s * i
    off = k * si - a1 * a2 * i
    return np.array([[2.0 * (1.0 - si) * a1 * a2, off],
                     [off, 2.0 * (a1 * a2 + k * i)]])


def prop1_Q_batch(s, i, g: Gains) -> np.ndarray:
    """prop1_Q over arrays of (S, I); returns shape (n, 2, 2)."""
    s = np.asarray(s, dtype=float)
    i = np.asarray(i, dtype=float)
    if np.any(s < 0) or np.any(i < 0) or np.any(s + i > 1 + 1e-12):
        raise ValueError("(S, I) samples outside the simplex")
    a1, a2 = g.alpha1, g.alpha2
    k = a1 * a1 + a2 + 1.0
    si = s * i
    out = np.empty(s.shape + (2, 2))
    out[..., 0, 0] = 2.0 * (1.0 - si) * a1 * a2
    out[..., 0, 1] = out[..., 1, 0] = k * si - a1 * a2 * i
    out[..., 1, 1] = 2.0 * (a1 * a2 + k * i)
    return out


def det_lower_bound(g: Gains) -> float:
    a1, a2 = g.alpha1, g.alpha2
    return 2.0 * a1 * a1 * a2 * a2 - (a1 * a1 + a2 + 1.0) ** 2 / 16.0


# ---------------------------------------------------------------------------
# vertex quasipolynomials


def vertex_matrices(i_bar: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices C1, C2, C3 of the polytope containing A0(t) on [0,1] x [0, i_bar]."""
    c1 = np.array([[0.0, 1.0], [0.0, 0.0]])
    c2 = np.array([[0.0, 1.0], [0.0, -i_bar]])
    c3 = np.array([[0.0, 1.0], [-i_bar, -i_bar]])
    return c1, c2, c3


def delay_matrix(g: Gains) -> np.ndarray:
    """Coefficient of the delayed error, B1 = [[-a1, 0], [-a2, 0]]."""
    return np.array([[-g.alpha1, 0.0], [-g.alpha2, 0.0]])


@dataclass(frozen=True)
class Quasipolynomial:
    vertex_index: int
    i_bar: float
    eta_bar: float
    gains: Gains

    def __post_init__(self):
        if self.vertex_index not in (1, 2, 3):
            raise ValueError(f"vertex_index must be 1, 2 or 3, got {self.vertex_index}")
        if not 0 < self.i_bar <= 1:
            raise ValueError(f"i_bar must lie in (0, 1], got {self.i_bar}")
        if not self.eta_bar > 0:
            raise ValueError(f"eta_bar must be positive, got {self.eta_bar}")

    @property
    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        return vertex_matrices(self.i_bar)[self.vertex_index - 1], delay_matrix(self.gains)

    def derivative(self, s):
        return _qp_derivative(self.vertex_index, self.i_bar, self.eta_bar,
                              self.gains.alpha1, self.gains.alpha2, s)


def _qp(vertex, i_bar, eta, a1, a2, s):
    e = np.exp(-eta * s)
    if vertex == 1:
        return s * s + (s * a1 + a2) * e
    inner = ((s + i_bar) * a1 + a2) * e
    if vertex == 2:
        return s * s + inner + s * i_bar
    return s * s + inner + (s + 1.0) * i_bar


def _qp_derivative(vertex, i_bar, eta, a1, a2, s):
    e = np.exp(-eta * s)
    if vertex == 1:
        return 2.0 * s + (a1 - eta * (s * a1 + a2)) * e
    d = 2.0 * s + (a1 - eta * ((s + i_bar) * a1 + a2)) * e + i_bar
    return d


def qp_eval(qp: Quasipolynomial, s):
    return _qp(qp.vertex_index, qp.i_bar, qp.eta_bar, qp.gains.alpha1, qp.gains.alpha2, s)


def real_crossing_lines(vertex: int, i_bar: float) -> tuple[float, float]:
    """(slope, intercept) of the s = 0 boundary alpha2 = slope*alpha1 + intercept."""
    if vertex == 1:
        return 0.0, 0.0
    if vertex == 2:
        return -i_bar, 0.0
    if vertex == 3:
        return -i_bar, -i_bar
    raise ValueError(f"vertex must be 1, 2 or 3, got {vertex}")


def imag_crossing_system(vertex: int, i_bar: float, eta_bar: float, omega: float):
    """The 2x2 linear system M alpha = b satisfied on the s = j*omega boundary."""
    sn, cs = math.sin(omega * eta_bar), math.cos(omega * eta_bar)
    if vertex == 1:
        M = np.array([[omega * sn, cs], [omega * cs, -sn]])
        b = np.array([omega * omega, 0.0])
    else:
        M = np.array([[omega * sn + i_bar * cs, cs],
                      [omega * cs - i_bar * sn, -sn]])
        rhs0 = omega * omega if vertex == 2 else omega * omega - i_bar
        b = np.array([rhs0, -omega * i_bar])
    return M, b


def imag_crossing_curve(vertex: int, i_bar: float, eta_bar: float, omega_grid) -> np.ndarray:
    """Boundary points (alpha1, alpha2) for a root crossing at j*omega.

    Returns an array of shape (n, 3) with columns omega, alpha1, alpha2.
    Near-singular systems are skipped.
    """
    pts = []
    skipped = 0
    for w in np.asarray(omega_grid, dtype=float):
        if not w > 0:
            raise ValueError("omega grid must be positive")
        M, b = imag_crossing_system(vertex, i_bar, eta_bar, w)
        if abs(np.linalg.det(M)) < 1e-12:
            skipped += 1
            continue
        a = np.linalg.solve(M, b)
        pts.append((w, a[0], a[1]))
    if skipped:
        log.info("vertex %d: skipped %d singular crossing systems", vertex, skipped)
    return np.array(pts).reshape(-1, 3)


def default_omega_grid(eta_bar: float, n: int = 2000) -> np.ndarray:
    """omega in (0, 4 pi / eta_bar]."""
    wmax = 4.0 * math.pi / eta_bar
    return np.linspace(wmax / n, wmax, n)


# ---------------------------------------------------------------------------
# rightmost roots by Chebyshev collocation


def cheb_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev extremal points x_j = cos(j pi / n) and differentiation matrix."""
    j = np.arange(n + 1)
    x = np.cos(np.pi * j / n)
    c = np.where((j == 0) | (j == n), 2.0, 1.0) * (-1.0) ** j
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def generator_matrix(A0, A1, tau: float, n: int = DEFAULT_NODES) -> np.ndarray:
    """Collocation of the generator of x' = A0 x(t) + A1 x(t - tau).

    Nodes theta_j = tau (x_j - 1)/2 run from 0 (j = 0) to -tau (j = n); the
    first block row imposes the equation at theta = 0, the others are
    derivatives of the interpolant.
    """
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    d = A0.shape[0]
    _, D = cheb_nodes(n)
    M = np.kron(D * (2.0 / tau), np.eye(d))
    M[:d, :] = 0.0
    M[:d, :d] = A0
    M[:d, n * d:] += A1
    return M


def vertex_generator(C, a1: float, a2: float, tau: float, n: int = DEFAULT_NODES) -> np.ndarray:
    """Collocation generator for a vertex system, tracking only the first component.

    B1 acts on the first error component alone, so the second component's
    values on the delay interval never feed back; dropping them removes only
    the spurious spectrum of the bare differentiation block.
    Unknowns: x1(0), x2(0), x1(theta_1..theta_n).
    """
    _, D = cheb_nodes(n)
    D = D * (2.0 / tau)
    M = np.zeros((n + 2, n + 2))
    M[:2, :2] = C
    M[0, n + 1] = -a1
    M[1, n + 1] = -a2
    M[2:, 0] = D[1:, 0]
    M[2:, 2:] = D[1:, 1:]
    return M


def _det_and_derivative(A0, A1, tau, s):
    d = A0.shape[0]
    e = np.exp(-tau * s)
    Ms = s * np.eye(d) - A0 - A1 * e
    dMs = np.eye(d) + tau * A1 * e
    f = np.linalg.det(Ms)
    df = f * np.trace(np.linalg.solve(Ms, dMs))
    return f, df


def rightmost_root_dde(A0, A1, tau: float, n: int = DEFAULT_NODES, newton: bool = True) -> complex:
    """Rightmost characteristic root of x' = A0 x(t) + A1 x(t - tau)."""
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    try:
        ev = np.linalg.eigvals(generator_matrix(A0, A1, tau, n))
    except np.linalg.LinAlgError as exc:
        raise RootFindingError(f"eigenvalue iteration failed (tau={tau}, n={n}): {exc}") from exc
    lam = complex(ev[np.argmax(ev.real)])
    if newton:
        try:
            f, df = _det_and_derivative(A0, A1, tau, lam)
            if df != 0 and np.isfinite(f / df):
                step = f / df
                if abs(step) < 0.1 * (1.0 + abs(lam)):
                    lam = lam - step
        except np.linalg.LinAlgError:
            pass
    return lam


def rightmost_root(qp: Quasipolynomial, n: int = DEFAULT_NODES) -> complex:
    """Rightmost root of the vertex quasipolynomial, refined by one Newton step."""
    C = vertex_matrices(qp.i_bar)[qp.vertex_index - 1]
    M = vertex_generator(C, qp.gains.alpha1, qp.gains.alpha2, qp.eta_bar, n)
    try:
        ev = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise RootFindingError(f"eigenvalue iteration failed for {qp}: {exc}") from exc
    lam = complex(ev[np.argmax(ev.real)])
    f = qp_eval(qp, lam)
    df = qp.derivative(lam)
    if df != 0:
        step = f / df
        if np.isfinite(step) and abs(step) < 0.1 * (1.0 + abs(lam)):
            lam = lam - step
    return complex(lam)


def rightmost_real_batch(vertex: int, i_bar: float, eta_bar: float, a1, a2,
                         n: int = DEFAULT_NODES, chunk: int = 1024) -> np.ndarray:
    """Real part of the rightmost root for many gain pairs at once."""
    a1 = np.asarray(a1, dtype=float).ravel()
    a2 = np.asarray(a2, dtype=float).ravel()
    C = vertex_matrices(i_bar)[vertex - 1]
    base = vertex_generator(C, 0.0, 0.0, eta_bar, n)
    col = n + 1
    out = np.empty(a1.shape[0])
    for start in range(0, a1.shape[0], chunk):
        sl = slice(start, start + chunk)
        m = a1[sl].shape[0]
        Ms = np.repeat(base[None], m, axis=0)
        Ms[:, 0, col] = -a1[sl]
        Ms[:, 1, col] = -a2[sl]
        ev = np.linalg.eigvals(Ms)
        idx = np.argmax(ev.real, axis=1)
        lam = ev[np.arange(m), idx]
        f = _qp(vertex, i_bar, eta_bar, a1[sl], a2[sl], lam)
        df = _qp_derivative(vertex, i_bar, eta_bar, a1[sl], a2[sl], lam)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = f / df
        ok = np.isfinite(step) & (np.abs(step) < 0.1 * (1.0 + np.abs(lam)))
        lam = np.where(ok, lam - np.where(ok, step, 0), lam)
        out[sl] = lam.real
    return out


def is_stable(vertex: int, i_bar: float, eta_bar: float, g: Gains, n: int = DEFAULT_NODES) -> bool:
    lam = rightmost_root(Quasipolynomial(vertex, i_bar, eta_bar, g), n)
    return lam.real < STABILITY_MARGIN


# ---------------------------------------------------------------------------
# stability maps


@dataclass
class StabilityMap:
    alpha1_grid: np.ndarray
    alpha2_grid: np.ndarray
    stable: np.ndarray          # (3, n2, n1) booleans, rows follow alpha2
    rightmost: np.ndarray       # (3, n2, n1) real parts
    i_bar: float = float("nan")
    eta_bar: float = float("nan")

    @property
    def intersection(self) -> np.ndarray:
        return np.all(self.stable, axis=0)

    def cell_size(self) -> tuple[float, float]:
        d1 = self.alpha1_grid[1] - self.alpha1_grid[0] if len(self.alpha1_grid) > 1 else 0.0
        d2 = self.alpha2_grid[1] - self.alpha2_grid[0] if len(self.alpha2_grid) > 1 else 0.0
        return float(d1), float(d2)


def stability_map(i_bar: float, eta_bar: float, alpha1_range=WINDOW_SMALL[0],
                  alpha2_range=WINDOW_SMALL[1], resolution=200, n: int = DEFAULT_NODES,
                  workers: int = 1) -> StabilityMap:
    """Classify a grid of gains per vertex by the sign of the rightmost root."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    n1, n2 = resolution
    if n1 < 1 or n2 < 1:
        raise ValueError("resolution must be positive")
    g1 = np.linspace(alpha1_range[0], alpha1_range[1], n1)
    g2 = np.linspace(alpha2_range[0], alpha2_range[1], n2)
    A1, A2 = np.meshgrid(g1, g2)
    tasks = [(v, i_bar, eta_bar, A1.ravel(), A2.ravel(), n) for v in (1, 2, 3)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reals = list(ex.map(_batch_task, tasks))
    else:
        reals = [_batch_task(t) for t in tasks]
    rm = np.stack([r.reshape(n2, n1) for r in reals])
    return StabilityMap(g1, g2, rm < STABILITY_MARGIN, rm, i_bar, eta_bar)


def _batch_task(args):
    return rightmost_real_batch(*args)


def pick_gain(smap: StabilityMap) -> Gains:
    """Centroid of the intersection cells, snapped to the nearest stable grid point."""
    inter = smap.intersection
    if not inter.any():
        raise NoStabilizingGain("no stabilizing gain in window")
    rows, cols = np.nonzero(inter)
    a1 = smap.alpha1_grid[cols]
    a2 = smap.alpha2_grid[rows]
    c1, c2 = a1.mean(), a2.mean()
    d1, d2 = smap.cell_size()
    s1 = d1 if d1 > 0 else 1.0
    s2 = d2 if d2 > 0 else 1.0
    k = np.argmin(((a1 - c1) / s1) ** 2 + ((a2 - c2) / s2) ** 2)
    return Gains(float(a1[k]), float(a2[k]))
