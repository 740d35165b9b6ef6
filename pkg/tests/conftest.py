import numpy as np
import pytest

from centrosim.genome import Chromosome, GenomeSpec, builtin_genome
from centrosim.rng import make_rng


@pytest.fixture(scope="session")
def spec3() -> GenomeSpec:
    return builtin_genome("s_cerevisiae_3")


@pytest.fixture(scope="session")
def spec16() -> GenomeSpec:
    return builtin_genome("s_cerevisiae_16")


@pytest.fixture
def tiny_spec() -> GenomeSpec:
    # two short chromosomes: 4 and 3 bins at 32 kb
    return GenomeSpec(
        resolution_bp=32000,
        chromosomes=(Chromosome("chrA", 120000), Chromosome("chrB", 90000)),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    import acceptance_report

    if not acceptance_report.RECORDS:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for num, name, verdict, detail in sorted(acceptance_report.RECORDS):
        terminalreporter.write_line(f"criterion {num:02d} {verdict}: {name} -- {detail}")
