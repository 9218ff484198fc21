import re

import numpy as np
import pytest

from scanadapt import rng as _rng
from scanadapt.mrimodel import ScanRecord, forward
from scanadapt.phantom import PhantomSpec, generate_dataset, simulate_scan


def random_complex(r, shape):
    return r.standard_normal(shape) + 1j * r.standard_normal(shape)


def random_smaps(r, ncoils, h, w, normalize=True):
    s = random_complex(r, (ncoils, h, w))
    if normalize:
        s /= np.sqrt(np.sum(np.abs(s) ** 2, axis=0))
    return s


def random_scan(seed, h=8, w=16, ncoils=2, sigma=0.0, scan_id="rand"):
    r = _rng.make_rng(seed, _rng.TEST_DATA)
    x = random_complex(r, (h, w))
    s = random_smaps(r, ncoils, h, w)
    y = forward(x, s) + sigma * random_complex(r, (ncoils, h, w))
    return ScanRecord(scan_id, x, s, y, sigma)


def small_phantom_scan(index=0, size=16, ncoils=2, sigma=0.0, seed=0):
    return simulate_scan(PhantomSpec(size, size, ncoils=ncoils, noise_sigma=sigma, seed=seed), index)


@pytest.fixture(scope="session")
def tiny_dataset():
    """16x16, 2 coils, 6 train / 1 val / 3 test."""
    return generate_dataset(PhantomSpec(16, 16, ncoils=2, noise_sigma=0.01), 6, 1, 3)



def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line verdict of every acceptance criterion at the end."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", nodeid)
            if m is None or (rep.when != "call" and rep.passed):
                continue
            n = int(m.group(1))
            verdict = [ln for ln in rep.capstdout.splitlines() if ln.startswith("criterion ")]
            lines[n] = verdict[-1] if verdict else f"criterion {n}: {'PASS' if rep.passed else 'FAIL'} - {rep.when} error"
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.line(lines[n])
