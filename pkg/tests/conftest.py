import os

# Bitwise reproducibility of BLAS reductions needs a fixed thread count.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest  # noqa: E402

from hielo import synth  # noqa: E402
from hielo.corpus import build_instance, parse_mr  # noqa: E402


def instances_from_rows(rows):
    return [build_instance(parse_mr(mr), ref, external_tags=[t for _, t in tagged])[0]
            for mr, ref, tagged in rows]


@pytest.fixture(scope="session")
def toy_instances():
    return instances_from_rows(synth.toy_rows())


BIBIMBAP_MR = ("name[Bibimbap House], food[English], priceRange[moderate], area[riverside], "
               "near[Clare Hall]")
BIBIMBAP_REF = ("Bibimbap House is a moderately priced restaurant who's main cuisine is English "
                "food. You will find this local gem near Clare Hall in the Riverside area.")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
