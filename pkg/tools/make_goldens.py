"""Freeze the exact-diagonalization and mean-field reference energies for
every checked-in fixture into fixtures/<molecule>/golden.csv.

The FCI column comes from dense diagonalization of the qubit Hamiltonian
restricted to the molecular particle sector, cross-checked against the
unrestricted spectrum; the RHF column is the package SCF, which is itself
validated against the independent AO-basis SCF stored by make_fixtures.py
in scf_reference.csv.

Run from the repository root:  python tools/make_goldens.py
"""

import glob
import os
import re
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from dmetvqe import integrals, operators, oracle  # noqa: E402


def main(root):
    for moldir in sorted(glob.glob(os.path.join(root, "*"))):
        if not os.path.isdir(moldir):
            continue
        rows = ["distance,e_fci,e_rhf"]
        for path in sorted(glob.glob(os.path.join(moldir, "d*.fcidump"))):
            label = re.match(r"d(.+)\.fcidump", os.path.basename(path)).group(1)
            ints = integrals.load_fcidump(path)
            h = operators.jordan_wigner(ints)
            sector = oracle.exact_ground_energy(h, n_electrons=ints.n_electrons)
            full = oracle.exact_ground_energy(h)
            if sector.ground_energy > full.ground_energy + 1e-9:
                print(f"note: {path}: absolute ground state lies outside the "
                      f"{ints.n_electrons}-electron sector")
            mf = integrals.run_rhf(ints)
            rows.append(f"{label},{sector.ground_energy:.12f},{mf.scf_energy:.12f}")
            print(f"{path}: E_FCI={sector.ground_energy:.10f} E_RHF={mf.scf_energy:.10f}")
        out = os.path.join(moldir, "golden.csv")
        with open(out, "w") as fh:
            fh.write("\n".join(rows) + "\n")
        print(f"wrote {out}")


if __name__ == "__main__":
    repo = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    main(os.path.join(repo, "fixtures"))
