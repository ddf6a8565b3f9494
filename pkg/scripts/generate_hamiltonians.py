"""Regenerate the shipped molecular Pauli-string Hamiltonians.

Needs pyscf and openfermion, which are NOT dependencies of the package:

    pip install pyscf openfermion
    python scripts/generate_hamiltonians.py src/pulseforge/data/molecules

Each molecule is computed in STO-3G, Jordan-Wigner mapped, and then tapered
with the symmetry-conserving Bravyi-Kitaev transform (two qubits removed by
particle-number and spin-parity conservation).  The FCI reference written to
the header is the exact ground energy of the tapered operator in the
particle-number sector, cross-checked against pyscf's FCI solver.
"""
import sys
from pathlib import Path

import numpy as np
import openfermion as of
from openfermion.chem import MolecularData
from pyscf import fci, gto, mcscf, scf


def _integrals(atoms, charge, n_frozen=0, n_active=None):
    mol = gto.M(atom=atoms, basis="sto-3g", charge=charge, spin=0, unit="Angstrom")
    mf = scf.RHF(mol).run(verbose=0)
    n_orb = mf.mo_coeff.shape[1]
    if n_active is None:
        n_active = n_orb - n_frozen
    n_elec = mol.nelectron - 2 * n_frozen
    cas = mcscf.CASCI(mf, n_active, n_elec)
    cas.frozen = n_frozen
    h1, ecore = cas.get_h1eff()
    h2 = cas.get_h2eff()
    from pyscf import ao2mo

    h2 = ao2mo.restore(1, h2, n_active)
    e_fci = cas.kernel(verbose=0)[0]
    return h1, h2, ecore, n_active, n_elec, e_fci, mf.e_tot


def _qubit_hamiltonian(h1, h2, ecore, n_active, n_elec):
    # openfermion wants chemist-to-physicist index order: h2[p,q,r,s] = (pq|rs)
    two_body = np.asarray(h2.transpose(0, 2, 3, 1), dtype=float)
    one_sp, two_sp = of.chem.molecular_data.spinorb_from_spatial(h1, two_body)
    iop = of.InteractionOperator(ecore, one_sp, 0.5 * two_sp)
    fop = of.get_fermion_operator(iop)
    qop = of.symmetry_conserving_bravyi_kitaev(fop, 2 * n_active, n_elec)
    qop.compress(1e-10)
    return qop


def _terms(qop, n_qubits):
    out = {}
    for term, coeff in qop.terms.items():
        letters = ["I"] * n_qubits
        for idx, p in term:
            letters[idx] = p
        out["".join(letters)] = float(np.real(coeff))
    return out


def _write(path, label, bond, terms, fci_ref, hf, note):
    n = len(next(iter(terms)))
    with open(path, "w") as fh:
        fh.write(f"# label: {label}\n")
        fh.write(f"# bond_length: {bond:.4f}\n")
        fh.write(f"# fci_reference: {fci_ref:.10f}\n")
        fh.write(f"# hartree_fock: {hf:.10f}\n")
        fh.write(f"# n_qubits: {n}\n")
        fh.write("# source: pyscf STO-3G RHF/CASCI integrals, openfermion JW + "
                 "symmetry-conserving BK tapering\n")
        if note:
            fh.write(f"# reduction: {note}\n")
        for letters, c in sorted(terms.items()):
            fh.write(f"{c: .12f} {letters}\n")


def build(atoms_fn, charge, label, bond, out_dir, n_frozen=0, n_active=None, note=""):
    h1, h2, ecore, n_act, n_el, e_fci, e_hf = _integrals(atoms_fn(bond), charge, n_frozen, n_active)
    qop = _qubit_hamiltonian(h1, h2, ecore, n_act, n_el)
    n_q = 2 * n_act - 2
    terms = _terms(qop, n_q)
    mat = of.get_sparse_operator(qop, n_qubits=n_q).toarray()
    e_min = float(np.linalg.eigvalsh(mat)[0])
    if abs(e_min - e_fci) > 1e-6:
        raise RuntimeError(f"{label} {bond}: tapered {e_min} vs CASCI {e_fci}")
    name = f"{label}_{bond:.2f}.ham"
    _write(Path(out_dir) / name, label, bond, terms, e_fci, e_hf, note)
    print(f"{name}: E_fci={e_fci:.6f} E_hf={e_hf:.6f} terms={len(terms)}")


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h2 = lambda r: f"H 0 0 0; H 0 0 {r}"
    heh = lambda r: f"He 0 0 0; H 0 0 {r}"
    lih = lambda r: f"Li 0 0 0; H 0 0 {r}"
    for r in (0.1, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5):
        build(h2, 0, "h2", r, out)
    for r in (0.5, 0.7, 0.8, 0.9, 1.0, 1.25, 1.5, 2.0):
        build(heh, 1, "heh_plus", r, out)
    build(lih, 0, "lih", 1.6, out, n_frozen=1, n_active=3,
          note="Li 1s frozen, 3 active spatial orbitals, 2 electrons")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "molecules")
