import contextlib
import time

import numpy as np
import pytest

from rppgbench.signals import RgbTrace, SampledSeries
from rppgbench.synth import DEFAULT_SCENARIOS, SynthConfig, scenario_corpus


def tone(freq_hz, rate_hz=25.0, duration_s=60.0, amp=1.0, phase=0.0):
    t = np.arange(int(round(duration_s * rate_hz))) / rate_hz
    return SampledSeries(rate_hz, amp * np.sin(2 * np.pi * freq_hz * t + phase))


def dft_hann_periodogram(x, fs):
    """Plain one-sided Hann periodogram by explicit DFT summation."""
    n = len(x)
    x = x - x.mean()
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    p = np.abs(basis @ (x * w)) ** 2 / (fs * np.sum(w**2))
    p[1:] *= 2
    if n % 2 == 0:
        p[-1] /= 2
    return k * fs / n, p


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    summary = scenario_corpus(DEFAULT_SCENARIOS, 3, seed=5, out_dir=out,
                              base=SynthConfig(duration_s=30.0), ppg_rate_hz=100.0)
    return out, summary


@pytest.fixture
def flat_trace():
    return RgbTrace(25.0, np.full((500, 3), 100.0))


def ica_mixture(seed, fs=25.0, duration_s=60.0):
    """Known well-conditioned 3x3 mixing of a pulse, a 0.3 Hz drift and white noise."""
    from rppgbench.synth import pulse_waveform

    rng = np.random.default_rng(seed)
    pulse = pulse_waveform(float(rng.uniform(55, 140)), fs, duration_s,
                           phase_rad=float(rng.uniform(0, 2 * np.pi))).values
    t = np.arange(pulse.size) / fs
    drift = np.sin(2 * np.pi * 0.3 * t + rng.uniform(0, 2 * np.pi))
    noise = rng.normal(size=pulse.size)
    sources = np.vstack([pulse, drift, noise])
    sources /= sources.std(axis=1, keepdims=True)
    while True:
        mixing = rng.uniform(-1, 1, (3, 3))
        if np.linalg.cond(mixing) < 10:
            break
    x = mixing @ sources
    x = 100 + 10 * x / np.abs(x).max()
    return RgbTrace(fs, x.T), pulse


# --- acceptance bookkeeping ------------------------------------------------------

SESSION_START = time.perf_counter()
SUITE_BUDGET_S = 300.0
ACCEPTANCE: dict[int, str] = {}


@contextlib.contextmanager
def criterion(number, title, budget_s):
    """Time a criterion and record a one-line verdict, failing it when over budget."""
    start = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        ACCEPTANCE[number] = f"FAIL  {number:>2}. {title} ({elapsed:.2f}s): {type(exc).__name__}"
        raise
    elapsed = time.perf_counter() - start
    if elapsed > budget_s:
        ACCEPTANCE[number] = f"FAIL  {number:>2}. {title} ({elapsed:.2f}s > {budget_s:g}s budget)"
        raise AssertionError(f"criterion {number} took {elapsed:.2f}s (budget {budget_s}s)")
    ACCEPTANCE[number] = f"PASS  {number:>2}. {title} ({elapsed:.2f}s, budget {budget_s:g}s)"


def pytest_sessionfinish(session, exitstatus):
    total = time.perf_counter() - SESSION_START
    if 10 in ACCEPTANCE and total > SUITE_BUDGET_S:
        ACCEPTANCE[10] = f"FAIL  10. full suite runtime {total:.1f}s > {SUITE_BUDGET_S:g}s"
        session.exitstatus = pytest.ExitCode.TESTS_FAILED


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    total = time.perf_counter() - SESSION_START
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
    terminalreporter.write_line(f"total session time {total:.1f}s")
