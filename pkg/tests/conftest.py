import numpy as np
import pytest

from mlse_osv.corpus import GeneratorConfig, generate_corpus

SMALL_GENERATOR = GeneratorConfig(n_users=6, n_genuine=12, n_skilled=4)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Six users, 12 genuine and 4 skilled each: enough for one WD split."""
    root = tmp_path_factory.mktemp("small_corpus")
    records = generate_corpus(root, SMALL_GENERATOR, seed=11)
    return root, records


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    """Default desk corpus: 20 users, 20 genuine + 10 skilled, 32x32."""
    root = tmp_path_factory.mktemp("desk_corpus")
    records = generate_corpus(root, GeneratorConfig(), seed=0)
    return root, records


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ---------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Register the outcome of one numbered acceptance criterion for the summary."""

    def record(number: int, passed: bool, detail: str):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk_wd(desk_corpus, tmp_path_factory):
    """Default pipeline on the desk corpus through the CLI: train, enroll, then a 5-run WD report.

    The report also carries single-loss baselines, so the measured time is an
    upper bound for the plain pipeline.
    """
    import csv
    import json
    import time

    from mlse_osv.cli import run_command

    root, _ = desk_corpus
    work = tmp_path_factory.mktemp("desk_wd")
    common = ["--seed", "0", "--corpus", str(root)]
    start = time.perf_counter()
    assert run_command(["train", *common, "--out", str(work / "snaps")]) == 0
    assert run_command(["enroll", *common, "--snapshots", str(work / "snaps"), "--out", str(work / "models")]) == 0
    assert run_command(["eval-wd", *common, "--runs", "5", "--baselines", "--out", str(work / "eval")]) == 0
    elapsed = time.perf_counter() - start
    with open(work / "snaps" / "trials.csv") as fh:
        trials = list(csv.DictReader(fh))
    with open(work / "eval" / "report.csv") as fh:
        report = list(csv.DictReader(fh))
    details = json.loads((work / "eval" / "details.json").read_text())
    return {"elapsed": elapsed, "trials": trials, "report": report, "details": details, "dir": work}
