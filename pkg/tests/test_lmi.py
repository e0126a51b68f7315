import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sirpred.core import Gains, HistoryBuffer
from sirpred.dde import DelaySpec, integrate
from sirpred.lmi import (
    CertificateFormatError,
    LmiCandidate,
    PolytopeVertices,
    build_Q,
    eval_lk_functional,
    feasibility_search,
    lmi_objective,
    paper_certificate,
    problem_data,
    read_certificate,
    sym_eig,
    verify_certificate,
    write_certificate,
)

rng = np.random.default_rng(1234)


def random_candidate(r):
    def sym():
        a = r.standard_normal((2, 2))
        return a + a.T
    return LmiCandidate(sym(), sym(), sym(), r.standard_normal((2, 2)), r.standard_normal((2, 2)))


@pytest.fixture(scope="module")
def small_delay_certificate():
    verts, B1 = problem_data(0.03, Gains(4, 1))
    res = feasibility_search(verts, B1, 0.2)
    assert res.success
    return res.candidate, verts, B1


# --- candidate and vertices --------------------------------------------------

def test_candidate_symmetrized():
    c = LmiCandidate([[1, 2], [0, 1]], np.eye(2), np.eye(2), [[1, 2], [3, 4]], np.zeros((2, 2)))
    assert np.array_equal(c.P, [[1, 1], [1, 1]])
    assert np.array_equal(c.P2, [[1, 2], [3, 4]])


def test_candidate_vector_round_trip():
    c = random_candidate(rng)
    d = LmiCandidate.from_vector(c.to_vector())
    for name in ("P", "R", "S", "P2", "P3"):
        assert np.array_equal(getattr(c, name), getattr(d, name))
    assert c.to_vector().shape == (17,)


def test_vertices():
    v = PolytopeVertices.from_i_bar(0.03)
    assert np.array_equal(v.C1, [[0, 1], [0, 0]])
    assert np.array_equal(v.C2, [[0, 1], [0, -0.03]])
    assert np.array_equal(v.C3, [[0, 1], [-0.03, -0.03]])


# --- the block matrix --------------------------------------------------------

def test_zero_inputs_zero_matrix():
    assert np.array_equal(build_Q(np.zeros((2, 2)), LmiCandidate.zero(), np.zeros((2, 2)), 1.0),
                          np.zeros((8, 8)))


def test_blocks_as_assembled():
    r = np.random.default_rng(5)
    c = random_candidate(r)
    C, B1, eta = r.standard_normal((2, 2)), r.standard_normal((2, 2)), 1.7
    Q = build_Q(C, c, B1, eta)
    blk = lambda i, j: Q[2 * i:2 * i + 2, 2 * j:2 * j + 2]
    sym = lambda a: 0.5 * (a + a.T)
    assert np.allclose(blk(0, 0), sym(C.T @ c.P2 + c.P2.T @ C + c.S - c.R))
    assert np.allclose(blk(0, 1), c.P - c.P2.T + C.T @ c.P3)
    assert np.allclose(blk(0, 2), 0)
    assert np.allclose(blk(0, 3), c.P2.T @ B1 + c.R)
    assert np.allclose(blk(1, 1), sym(-c.P3 - c.P3.T + eta ** 2 * c.R))
    assert np.allclose(blk(1, 3), c.P3.T @ B1)
    assert np.allclose(blk(2, 2), -(c.S + c.R))
    assert np.allclose(blk(2, 3), c.R)
    assert np.allclose(blk(3, 3), -2 * c.R)


def test_descriptor_free_reduction():
    r = np.random.default_rng(6)
    c = random_candidate(r)
    c = LmiCandidate(c.P, c.R, c.S, np.zeros((2, 2)), np.zeros((2, 2)))
    eta = 0.8
    Z = np.zeros((2, 2))
    lemma = np.block([[c.S - c.R, c.P, Z, c.R],
                      [c.P, eta ** 2 * c.R, Z, Z],
                      [Z, Z, -(c.S + c.R), Z],
                      [c.R, Z, Z, -2 * c.R]])
    C, B1 = r.standard_normal((2, 2)), r.standard_normal((2, 2))
    assert np.allclose(build_Q(C, c, B1, eta, coupling_34=False), lemma)
    # the printed theorem matrix differs only by R in the (3,4) block
    diff = build_Q(C, c, B1, eta) - lemma
    assert np.allclose(diff[4:6, 6:8], c.R) and np.allclose(diff[6:8, 4:6], c.R)
    diff[4:6, 6:8] = 0
    diff[6:8, 4:6] = 0
    assert np.allclose(diff, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 1))
def test_symmetry_linearity_affinity(seed, lam):
    r = np.random.default_rng(seed)
    a, b = random_candidate(r), random_candidate(r)
    C, C2, B1 = r.standard_normal((2, 2)), r.standard_normal((2, 2)), r.standard_normal((2, 2))
    Q = build_Q(C, a, B1, 1.3)
    assert np.array_equal(Q, Q.T)
    mix = LmiCandidate.from_vector(2.0 * a.to_vector() - 0.5 * b.to_vector())
    assert np.allclose(build_Q(C, mix, B1, 1.3), 2.0 * Q - 0.5 * build_Q(C, b, B1, 1.3), atol=1e-10)
    Cm = lam * C + (1 - lam) * C2
    assert np.allclose(build_Q(Cm, a, B1, 1.3),
                       lam * Q + (1 - lam) * build_Q(C2, a, B1, 1.3), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_polytope_closure(seed):
    r = np.random.default_rng(seed)
    c = random_candidate(r)
    verts, B1 = problem_data(0.03, Gains(0.3, 0.02))
    w = r.dirichlet(np.ones(3))
    Cm = w[0] * verts.C1 + w[1] * verts.C2 + w[2] * verts.C3
    top = max(sym_eig(build_Q(C, c, B1, 2.0))[-1] for C in verts)
    assert sym_eig(build_Q(Cm, c, B1, 2.0))[-1] <= top + 1e-9


# --- Jacobi eigenvalues ------------------------------------------------------

def test_sym_eig_identity():
    assert np.allclose(sym_eig(np.eye(8)), np.ones(8))


def test_sym_eig_diag():
    assert np.array_equal(sym_eig(np.diag([1.0, -2.0])), [-2.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_sym_eig_2x2_closed_form(a, b, c):
    M = np.array([[a, b], [b, c]])
    disc = np.sqrt(((a - c) / 2) ** 2 + b * b)
    mid = (a + c) / 2
    w = sym_eig(M)
    scale = max(1.0, abs(a), abs(b), abs(c))
    assert w[0] == pytest.approx(mid - disc, abs=1e-12 * scale)
    assert w[1] == pytest.approx(mid + disc, abs=1e-12 * scale)


def test_sym_eig_reconstruction_and_lapack():
    for _ in range(20):
        A = rng.standard_normal((8, 8))
        M = A + A.T
        w, V = sym_eig(M, vectors=True)
        assert np.linalg.norm(M - V @ np.diag(w) @ V.T) < 1e-10 * np.linalg.norm(M)
        assert np.allclose(w, np.linalg.eigvalsh(M), atol=1e-10)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


# --- verification and search -------------------------------------------------

def test_zero_candidate_infeasible():
    verts, B1 = problem_data(0.03, Gains(0.115, 0.005))
    rep = verify_certificate(LmiCandidate.zero(), verts, B1, 5.0)
    assert not rep.feasible
    assert rep.lambda_min_P == 0.0


def test_paper_certificate_report():
    verts, B1 = problem_data(0.03, Gains(0.115, 0.005))
    rep = verify_certificate(paper_certificate(), verts, B1, 5.0)
    assert len(rep.lambda_max_Q) == 3 and len(rep.lines()) == 7
    # frozen from an independent LAPACK evaluation of the same matrices
    Q1 = build_Q(verts.C1, paper_certificate(), B1, 5.0)
    assert rep.lambda_max_Q[0] == pytest.approx(np.linalg.eigvalsh(Q1)[-1], rel=1e-10)
    assert rep.lambda_max_Q[0] == pytest.approx(343.913, abs=1e-3)
    assert rep.lambda_min_P == pytest.approx(30.2678, abs=1e-3)


def test_objective_is_max_of_parts():
    verts, B1 = problem_data(0.03, Gains(4, 1))
    c = LmiCandidate.identity()
    f = lmi_objective(c.to_vector(), verts, B1, 0.5)
    rep = verify_certificate(c, verts, B1, 0.5)
    assert f == pytest.approx(max(max(rep.lambda_max_Q), -rep.lambda_min_P + 1e-6,
                                  -rep.lambda_min_R, -rep.lambda_min_S), abs=1e-10)


def test_search_small_delay_succeeds():
    verts, B1 = problem_data(0.03, Gains(4, 1))
    res = feasibility_search(verts, B1, 1e-3)
    assert res.success and res.f < -1e-8
    rep = verify_certificate(res.candidate, verts, B1, 1e-3)
    assert rep.feasible and rep.margin <= -1e-8


def test_search_zero_gain_fails():
    verts, B1 = problem_data(0.03, Gains(0, 0))
    res = feasibility_search(verts, B1, 1e-3, max_restarts=3)
    assert not res.success
    assert res.f >= -1e-8
    assert res.restarts == 3 and len(res.history) == 4


def test_search_deterministic():
    verts, B1 = problem_data(0.03, Gains(4, 1))
    a = feasibility_search(verts, B1, 0.2, max_restarts=2, maxiter=500)
    b = feasibility_search(verts, B1, 0.2, max_restarts=2, maxiter=500)
    assert a.f == b.f and np.array_equal(a.candidate.to_vector(), b.candidate.to_vector())


# --- the functional ----------------------------------------------------------

def test_lk_zero_path():
    t = np.linspace(0, 2, 21)
    assert eval_lk_functional(t, np.zeros((21, 2)), LmiCandidate.identity(), 1.0, 2.0) == 0.0


def test_lk_constant_path():
    c = random_candidate(np.random.default_rng(3))
    e = np.array([0.3, -1.2])
    t = np.linspace(0, 3, 31)
    v = eval_lk_functional(t, np.tile(e, (31, 1)), c, 1.5, 2.5)
    assert v == pytest.approx(e @ c.P @ e + 1.5 * e @ c.S @ e, rel=1e-12)


def test_lk_double_integral_closed_form():
    # e(s) = (s, 0): e_dot = (1, 0), so the R-term is eta * R11 * eta^2 / 2
    c = LmiCandidate(np.zeros((2, 2)), np.diag([2.0, 0.0]), np.zeros((2, 2)),
                     np.zeros((2, 2)), np.zeros((2, 2)))
    t = np.linspace(0, 4, 401)
    path = np.column_stack([t, np.zeros_like(t)])
    v = eval_lk_functional(t, path, c, 1.5, 3.0)
    assert v == pytest.approx(1.5 * 2.0 * 1.5 ** 2 / 2, rel=1e-10)


def test_lk_insufficient_span():
    t = np.linspace(0, 1, 11)
    with pytest.raises(IndexError):
        eval_lk_functional(t, np.zeros((11, 2)), LmiCandidate.identity(), 2.0, 1.0)


def test_lk_decreases_along_polytopic_path(small_delay_certificate):
    cand, verts, B1 = small_delay_certificate
    eta, dt = 0.2, 0.001
    Cs = list(verts)

    def rhs(t, x, delayed):
        w = np.array([1 + np.sin(t), 1 + np.cos(2 * t), 1.0])
        w /= w.sum()
        C = sum(wi * Ci for wi, Ci in zip(w, Cs))
        return C @ x + B1 @ delayed(eta)

    hist = HistoryBuffer.constant([1.0, -0.5], -eta, 0.0, dt)
    tr = integrate(rhs, hist, DelaySpec([eta]), dt, 6.0)
    path = np.column_stack([tr["x0"], tr["x1"]])
    samples = np.arange(2 * eta, 6.0 + 1e-9, eta / 10)
    V = np.array([eval_lk_functional(tr.t, path, cand, eta, s) for s in samples])
    assert V[-1] < 0.5 * V[0]
    assert np.all(np.diff(V) <= 1e-9 * V[0])


# --- certificate files -------------------------------------------------------

def test_certificate_round_trip(tmp_path):
    c = random_candidate(np.random.default_rng(8))
    path = tmp_path / "cert.txt"
    write_certificate(c, path, comment="test certificate\nsecond line")
    d = read_certificate(path)
    assert np.array_equal(c.to_vector(), d.to_vector())
    assert path.read_text().startswith("# test certificate")


def test_certificate_reader_comments(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("# printed values\nP\n51.1 -140.6\n-140.6 979.2  # row 2\n"
                    "R: 16.3 -0.6 -0.6 3.3\nS\n16.3 -0.6\n-0.6 3.3\n"
                    "P2\n42.3 -85.3\n-140.5 984.4\nP3\n42.3 -85.3\n-140.5 984.4\n")
    c = read_certificate(path)
    assert np.array_equal(c.to_vector(), paper_certificate().to_vector())


@pytest.mark.parametrize("text,msg", [
    ("P\n1 0 0 1\nR\n1 0 0 1\n", "missing"),
    ("P\n1 0 0\nR\n1 0 0 1\nS\n1 0 0 1\nP2\n1 0 0 1\nP3\n1 0 0 1\n", "4 entries"),
    ("P\n1 0 x 1\n", "bad number"),
    ("1 2\nP\n", "before any block"),
])
def test_certificate_reader_errors(tmp_path, text, msg):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(CertificateFormatError, match=msg):
        read_certificate(path)
