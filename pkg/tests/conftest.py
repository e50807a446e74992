import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_conv2d(x, w, b, stride=1, pad=0):
    """Direct loop oracle: out[o, i, j] = b[o] + sum_c,ki,kj w[o,c,ki,kj] * xpad[c, i*s+ki, j*s+kj]."""
    c, h, wd = x.shape
    o_ch, _, k_h, k_w = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - k_h) // stride + 1
    ow = (wd + 2 * pad - k_w) // stride + 1
    out = np.zeros((o_ch, oh, ow))
    for o in range(o_ch):
        for i in range(oh):
            for j in range(ow):
                acc = b[o]
                for ci in range(c):
                    for ki in range(k_h):
                        for kj in range(k_w):
                            acc += w[o, ci, ki, kj] * xp[ci, i * stride + ki, j * stride + kj]
                out[o, i, j] = acc
    return out


# filled by test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
