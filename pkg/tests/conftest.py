import numpy as np
import pytest

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion of the build")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
    prev_status, _, prev_secs = _ACCEPTANCE.get(number, ("PASS", title, 0.0))
    if report.when == "teardown" and report.passed:
        status = prev_status  # teardown only matters when it fails
    elif prev_status != "PASS":
        status = prev_status
    # fixture setup (for example a training run) counts toward the criterion's time
    _ACCEPTANCE[number] = (status, title, prev_secs + report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, duration = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status:4}  {title}  ({duration:.2f}s)")


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar ``f`` w.r.t. every entry of float64 ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def naive_conv(x, w, stride, pad):
    """Quadruple-loop zero-padded cross-correlation for one [c,h,w] input."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for oc in range(o):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for i in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            yy, xi = y * stride - pad + u, xx * stride - pad + v
                            if 0 <= yy < h and 0 <= xi < wd:
                                acc += float(x[i, yy, xi]) * float(w[oc, i, u, v])
                out[oc, y, xx] = acc
    return out
