import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def naive_conv1d(x, w, b, stride):
    """Triple-loop cross-correlation with TF-style same zero padding."""
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + k - length, 0)
    left = total // 2
    out = np.zeros((bsz, cout, out_len))
    for n in range(bsz):
        for o in range(cout):
            for t in range(out_len):
                acc = 0.0 if b is None else float(b[o])
                for c in range(cin):
                    for j in range(k):
                        src = t * stride + j - left
                        if 0 <= src < length:
                            acc += w[o, c, j] * x[n, c, src]
                out[n, o, t] = acc
    return out


def pairwise_auroc(scores, labels):
    """Exhaustive comparison of every positive/negative pair, ties worth 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
