import numpy as np
import pytest

from qlra.quaternion import QMatrix, Quaternion


def randq(rng, m, n):
    return QMatrix(rng.standard_normal((4, m, n)))


def naive_matmul(A, B):
    """Entry-by-entry quaternion product using the scalar Hamilton product."""
    m, n = A.shape
    p = B.cols
    out = np.zeros((4, m, p))
    for i in range(m):
        for j in range(p):
            acc = Quaternion()
            for k in range(n):
                acc = acc + A.entry(i, k) * B.entry(k, j)
            out[:, i, j] = acc.to_array()
    return QMatrix(out)


def orthonormal(rng, m, k):
    """Orthonormal quaternion columns by Gram-Schmidt on compact columns and their J conj partners.

    Independent of the package factorizations: only numpy and the compact layout are used.
    """
    from qlra.complex_bridge import from_compact, to_compact

    Q = to_compact(QMatrix(rng.standard_normal((4, m, k))))
    cols = []
    for v in Q.T:
        for u in cols:
            v = v - u * np.vdot(u, v)
            ju = np.concatenate([-np.conj(u[m:]), np.conj(u[:m])])
            v = v - ju * np.vdot(ju, v)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            cols.append(v / nv)
        if len(cols) == k:
            break
    return from_compact(np.stack(cols, axis=1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").split("/")[0])):
            terminalreporter.write_line(line)
