import os

import numpy as np
import pytest

from dmetvqe import integrals, operators, oracle

FIXTURES = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                        "fixtures")

# Per-criterion PASS/FAIL lines collected by the acceptance suite and echoed
# in the terminal summary (visible without -s).
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

H4_DISTANCES = ["1.00", "1.25", "1.30", "1.50", "1.60", "1.75", "2.00",
                "2.25", "2.50", "2.75", "3.00"]


def fixture_path(molecule, label):
    return os.path.join(FIXTURES, molecule, f"d{label}.fcidump")


def load_golden(molecule):
    path = os.path.join(FIXTURES, molecule, "golden.csv")
    rows = {}
    with open(path) as fh:
        next(fh)
        for line in fh:
            label, e_fci, e_rhf = line.strip().split(",")
            rows[label] = (float(e_fci), float(e_rhf))
    return rows


_INTS_CACHE = {}


def load_ints(molecule, label):
    key = (molecule, label)
    if key not in _INTS_CACHE:
        _INTS_CACHE[key] = integrals.load_fcidump(fixture_path(molecule, label))
    return _INTS_CACHE[key]


@pytest.fixture(scope="session")
def h2_ints():
    return load_ints("h2", "0.735")


@pytest.fixture(scope="session")
def h4_25_ints():
    return load_ints("h4", "2.50")


@pytest.fixture(scope="session")
def h2_golden():
    return load_golden("h2")["0.735"]


@pytest.fixture(scope="session")
def h4_golden():
    return load_golden("h4")


@pytest.fixture(scope="session")
def h2_mo_hamiltonian(h2_ints):
    """H2 qubit Hamiltonian in the canonical orbital basis."""
    mf = integrals.run_rhf(h2_ints)
    c = mf.orbital_coeffs
    h_mo = c.T @ h2_ints.h1 @ c
    g_mo = np.einsum("pi,qj,rk,sl,pqrs->ijkl", c, c, c, c, h2_ints.h2,
                     optimize=True)
    mints = integrals.IntegralSet(2, 2, h_mo, g_mo, h2_ints.e_core)
    return operators.jordan_wigner(mints)
