"""Unit-cell solvers and the effective medium.

Computes the Dirichlet spectrum of the inclusion with mean classification,
the interior cell function and its mean (the dispersive coefficient mu0),
Zhikov's function beta, the gradient corrector and the effective tensor a0,
and dispersion scans locating band gaps.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .geometry import (
    INCLUSION,
    INTERFACE_INCLUSION,
    MATRIX,
    InclusionShape,
    Mesh,
    mesh_unit_cell,
)

SIGMA_D1, SIGMA_D0 = 1, 0  # per-mode class: nonzero-mean / zero-mean eigenvalue

MEAN_TOL_FACTOR = 1e-7  # |mean| > factor * ||phi|| * |D|^(1/2) declares Sigma_D1
POLE_TOL = 1e-8


class CellSolverError(RuntimeError):
    pass


class PoleError(ValueError):
    """Evaluation requested too close to a spectral pole."""


@dataclass
class DirichletSpectrum:
    """First eigenpairs of the Dirichlet Laplacian on the inclusion D."""

    eigenvalues: np.ndarray  # lambda_j^2, ascending
    eigenfunctions: np.ndarray  # (n_cell_nodes, n_modes), zero outside D
    means: np.ndarray  # integral of phi_j over D
    classes: np.ndarray  # SIGMA_D1 / SIGMA_D0 per mode
    theta: float  # |D| measured on the mesh
    moment1: float  # sum over all discrete modes of mean^2 / lambda^2
    moment2: float  # sum over all discrete modes of mean^2 / lambda^4
    mesh: Optional[Mesh] = None

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    def frequencies(self):
        """lambda_j = sqrt of the eigenvalues."""
        return np.sqrt(self.eigenvalues)

    def sigma_d1(self):
        return self.frequencies()[self.classes == SIGMA_D1]

    def sigma_d0(self):
        return self.frequencies()[self.classes == SIGMA_D0]

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z, np.zeros((0, 0)), z, z.astype(int), 0.0, 0.0, 0.0)


def _inclusion_dofs(mesh: Mesh):
    """Interior nodes of D (inclusion-incident nodes minus interface nodes)."""
    inc_tris = mesh.triangles[mesh.tri_tags == INCLUSION]
    nodes = np.unique(inc_tris)
    iface = np.unique(mesh.edges[mesh.edge_tags == INTERFACE_INCLUSION])
    return np.setdiff1d(nodes, iface, assume_unique=True)


def dirichlet_spectrum(cell_mesh: Mesh, n_modes: int) -> DirichletSpectrum:
    """First eigenpairs of -Laplace on D with homogeneous Dirichlet data.

    Shift-invert Lanczos around 0 with a deterministic start vector; the
    eigenfunctions are L2(D)-orthonormal and sign-fixed.  Also computes the
    torsion moments used to accelerate the spectral series of beta.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    inc_mask = cell_mesh.tri_tags == INCLUSION
    if not np.any(inc_mask):
        return DirichletSpectrum.empty()
    coeff = inc_mask.astype(float)
    K = fem.assemble_stiffness(cell_mesh, coeff)
    M = fem.assemble_mass(cell_mesh, coeff)
    dofs = _inclusion_dofs(cell_mesh)
    if len(dofs) <= n_modes + 1:
        raise CellSolverError(
            f"cell mesh too coarse: {len(dofs)} interior inclusion nodes "
            f"for {n_modes} requested modes"
        )
    Kd = K[np.ix_(dofs, dofs)].tocsc()
    Md = M[np.ix_(dofs, dofs)].tocsc()
    v0 = np.ones(len(dofs))
    v0 /= np.linalg.norm(v0)
    try:
        vals, vecs = spla.eigsh(
            Kd, k=n_modes, M=Md, sigma=0.0, which="LM", v0=v0, maxiter=2000
        )
    except spla.ArpackNoConvergence as exc:  # pragma: no cover
        raise CellSolverError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    # M-orthonormalize within repeated eigenvalues and fix signs
    norms = np.sqrt(np.einsum("ij,ij->j", vecs, Md @ vecs))
    vecs /= norms
    full = np.zeros((cell_mesh.n_vertices, n_modes))
    full[dofs] = vecs
    for j in range(n_modes):
        k = np.argmax(np.abs(full[:, j]))
        if full[k, j] < 0:
            full[:, j] = -full[:, j]

    b_full = fem.load_vector(cell_mesh, inc_mask)
    means = b_full @ full
    theta = float(cell_mesh.areas()[inc_mask].sum())

    # eigenspace-wise classification: project the constant onto each group.
    # The threshold must dominate the O(h^2 lambda) quadrature error of the
    # discrete means of true zero-mean modes.
    classes = np.zeros(n_modes, dtype=int)
    groups = _group_degenerate(vals)
    for g in groups:
        lam = np.sqrt(vals[g[0]])
        tol = np.sqrt(theta) * max(MEAN_TOL_FACTOR, 5.0 * cell_mesh.h**2 * lam)
        if np.sqrt((means[g] ** 2).sum()) > tol:
            classes[g] = SIGMA_D1

    # torsion solve: moments of the full discrete series
    lu = spla.splu(Kd)
    w = lu.solve(b_full[dofs])
    moment1 = float(b_full[dofs] @ w)
    moment2 = float(w @ (Md @ w))

    return DirichletSpectrum(
        eigenvalues=vals,
        eigenfunctions=full,
        means=means,
        classes=classes,
        theta=theta,
        moment1=moment1,
        moment2=moment2,
        mesh=cell_mesh,
    )


def _group_degenerate(vals, rtol=1e-6):
    groups, cur = [], [0]
    for j in range(1, len(vals)):
        if abs(vals[j] - vals[cur[-1]]) < rtol * max(1.0, vals[j]):
            cur.append(j)
        else:
            groups.append(np.array(cur))
            cur = [j]
    groups.append(np.array(cur))
    return groups


def classify_sigma(spectrum: DirichletSpectrum, z: complex, tol: float = 1e-6):
    """Classify z against +-lambda_j; returns (label, distance to Sigma_D)."""
    if spectrum.n_modes == 0:
        return "outside", np.inf
    lam = spectrum.frequencies()
    d = np.minimum(np.abs(z - lam), np.abs(z + lam))
    j = int(d.argmin())
    dist = float(d[j])
    if dist > tol:
        return "outside", dist
    label = "in_sigma_D1" if spectrum.classes[j] == SIGMA_D1 else "in_sigma_D0"
    return label, dist


def beta(spectrum: DirichletSpectrum, z: complex, with_tail: bool = False):
    """Zhikov's function: the cell average of the interior resolvent at 1.

    Evaluated through the torsion-accelerated spectral series
    beta(z) = -t1 - z^2 t2 + z^4 sum_j mean_j^2 / (lambda_j^4 (z^2-lambda_j^2)),
    where t1, t2 are the exact discrete torsion moments; the remaining
    truncation tail decays like lambda^-6 and is reported as an uncertainty.
    """
    if spectrum.n_modes == 0:
        return (0.0, 0.0) if with_tail else 0.0
    z = complex(z)
    lam2 = spectrum.eigenvalues
    lam = spectrum.frequencies()
    d1 = lam[spectrum.classes == SIGMA_D1]
    if d1.size and np.minimum(np.abs(z - d1), np.abs(z + d1)).min() < POLE_TOL:
        raise PoleError(f"z={z} within {POLE_TOL:g} of a nonzero-mean eigenvalue")
    m2 = spectrum.means**2
    series = (m2 / (lam2**2 * (z**2 - lam2))).sum()
    val = -spectrum.moment1 - z**2 * spectrum.moment2 + z**4 * series
    if not with_tail:
        return val
    tail_mass = max(spectrum.moment2 - float((m2 / lam2**2).sum()), 0.0)
    lam2_max = lam2[-1]
    denom = max(abs(lam2_max - abs(z) ** 2), 0.1 * lam2_max)
    tail = abs(z) ** 4 * tail_mass / denom
    return val, tail


def mu0(spectrum: DirichletSpectrum, z: complex, with_tail: bool = False):
    """Effective dispersive coefficient mu0(z) = 1 - z^2 beta(z)."""
    if with_tail:
        b, tail = beta(spectrum, z, with_tail=True)
        return 1.0 - z**2 * b, abs(z) ** 2 * tail
    return 1.0 - complex(z) ** 2 * beta(spectrum, z)


def lambda_cell(cell_mesh: Mesh, k: float, spectrum: Optional[DirichletSpectrum] = None):
    """Interior Helmholtz cell function: identically 1 outside D, boundary
    data 1 on dD.  Returns (nodal field, cell mean)."""
    inc_mask = cell_mesh.tri_tags == INCLUSION
    n = cell_mesh.n_vertices
    field_vals = np.ones(n, dtype=complex)
    total_area = float(cell_mesh.areas().sum())
    if not np.any(inc_mask) or k == 0:
        return field_vals, total_area  # harmonic with constant data
    if spectrum is not None and spectrum.n_modes:
        d1 = spectrum.sigma_d1()
        if d1.size and np.abs(np.abs(k) - d1).min() < POLE_TOL:
            raise PoleError(
                f"resonant cell: k={k} within {POLE_TOL:g} of a nonzero-mean mode"
            )
    coeff = inc_mask.astype(float)
    K = fem.assemble_stiffness(cell_mesh, coeff)
    M = fem.assemble_mass(cell_mesh, coeff)
    dofs = _inclusion_dofs(cell_mesh)
    A = (K - k**2 * M)[np.ix_(dofs, dofs)].tocsc()
    b = fem.load_vector(cell_mesh, inc_mask)[dofs]
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise PoleError(f"resonant cell at k={k}: {exc}") from exc
    v = lu.solve(k**2 * b)
    resid = np.linalg.norm(A @ v - k**2 * b) / max(np.linalg.norm(b) * k**2, 1e-300)
    if resid > 1e-6:
        raise PoleError(f"resonant cell at k={k}: residual {resid:.2e}")
    field_vals[dofs] += v
    mean = float(np.real(fem.integrate(cell_mesh, field_vals)))
    return field_vals, mean


def _matrix_dofs(mesh: Mesh):
    return np.unique(mesh.triangles[mesh.tri_tags == MATRIX])


def solve_corrector(cell_mesh: Mesh):
    """Gradient corrector and effective tensor.

    The corrector components are harmonic in the matrix with the wall-flux
    interface condition, periodic with zero cell mean, extended harmonically
    into D; the tensor is the matrix-region energy of (y_j + chi_j).
    Returns (chi (n,2), a0 (2,2)).
    """
    n = cell_mesh.n_vertices
    mat_mask = cell_mesh.tri_tags == MATRIX
    inc_mask = cell_mesh.tri_tags == INCLUSION
    K_mat = fem.assemble_stiffness(cell_mesh, mat_mask.astype(float))
    chi = np.zeros((n, 2))
    if not np.any(inc_mask):
        return chi, np.eye(2)
    if cell_mesh.periodic_pairs is None or not len(cell_mesh.periodic_pairs):
        raise CellSolverError("corrector needs a periodic cell mesh")

    # periodic reduction: slave -> master
    master = np.arange(n)
    for s, m in cell_mesh.periodic_pairs:
        master[s] = m
    # resolve chains (corner slaves may point to edge slaves)
    for _ in range(3):
        master = master[master]
    dofs = _matrix_dofs(cell_mesh)
    keep = np.intersect1d(dofs, np.unique(master[dofs]))
    red_index = -np.ones(n, dtype=np.int64)
    red_index[keep] = np.arange(len(keep))
    col = red_index[master[dofs]]
    if np.any(col < 0):  # pragma: no cover - masters are always matrix nodes
        raise CellSolverError("periodic master outside matrix region")
    P = sp.coo_matrix(
        (np.ones(len(dofs)), (np.arange(len(dofs)), col)),
        shape=(len(dofs), len(keep)),
    ).tocsr()

    Kd = K_mat[np.ix_(dofs, dofs)]
    K_red = (P.T @ Kd @ P).tocsc()
    c_red = P.T @ fem.load_vector(cell_mesh, mat_mask)[dofs]

    # interface flux right-hand side, written as a volume integral over D
    p = cell_mesh.vertices[cell_mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    b_geo = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c_geo = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    rhs_full = np.zeros((n, 2))
    inc_idx = np.nonzero(inc_mask)[0]
    for t in inc_idx:
        for i in range(3):
            rhs_full[cell_mesh.triangles[t, i], 0] += 0.5 * b_geo[t, i]
            rhs_full[cell_mesh.triangles[t, i], 1] += 0.5 * c_geo[t, i]

    nred = len(keep)
    sys = sp.bmat(
        [[K_red, c_red[:, None]], [c_red[None, :], None]], format="csc"
    )
    lu = spla.splu(sys)
    for j in range(2):
        r = P.T @ rhs_full[dofs, j]
        sol = lu.solve(np.concatenate([r, [0.0]]))
        chi_red = sol[:nred]
        chi[dofs, j] = P @ chi_red

    # harmonic extension into D with Dirichlet data from the interface
    K_inc = fem.assemble_stiffness(cell_mesh, inc_mask.astype(float))
    interior = _inclusion_dofs(cell_mesh)
    if len(interior):
        others = np.setdiff1d(np.unique(cell_mesh.triangles[inc_mask]), interior)
        A_ii = K_inc[np.ix_(interior, interior)].tocsc()
        A_ib = K_inc[np.ix_(interior, others)]
        lu_i = spla.splu(A_ii)
        for j in range(2):
            chi[interior, j] = lu_i.solve(-A_ib @ chi[others, j])

    # zero mean over the whole cell
    w_all = fem.load_vector(cell_mesh)
    vol = float(w_all.sum())
    for j in range(2):
        chi[:, j] -= (w_all @ chi[:, j]) / vol

    w1 = cell_mesh.vertices[:, 0] + chi[:, 0]
    w2 = cell_mesh.vertices[:, 1] + chi[:, 1]
    a0 = np.empty((2, 2))
    a0[0, 0] = w1 @ (K_mat @ w1)
    a0[0, 1] = w1 @ (K_mat @ w2)
    a0[1, 0] = a0[0, 1]
    a0[1, 1] = w2 @ (K_mat @ w2)
    return chi, a0


@dataclass
class EffectiveMedium:
    """Homogenized material data built from one unit cell."""

    a0: np.ndarray
    theta: float
    spectrum: DirichletSpectrum
    n_modes: int
    chi: Optional[np.ndarray] = None
    cell_mesh: Optional[Mesh] = None
    mesh_hash: str = ""

    def beta(self, z, with_tail=False):
        return beta(self.spectrum, z, with_tail)

    def mu0(self, z, with_tail=False):
        return mu0(self.spectrum, z, with_tail)

    @property
    def isotropic_a0(self):
        return 0.5 * (self.a0[0, 0] + self.a0[1, 1])

    @classmethod
    def trivial(cls):
        return cls(np.eye(2), 0.0, DirichletSpectrum.empty(), 0)

    # -- text serialization ("subwave-medium v1") ----------------------------

    def export_text(self) -> str:
        buf = io.StringIO()
        buf.write("subwave-medium v1\n")
        buf.write("[tensor]\n")
        for i in range(2):
            for j in range(2):
                buf.write(f"a{i + 1}{j + 1} = {self.a0[i, j]:.17g}\n")
        buf.write("[cell]\n")
        buf.write(f"theta = {self.theta:.17g}\n")
        buf.write(f"n_modes = {self.n_modes}\n")
        buf.write(f"mesh_hash = {self.mesh_hash}\n")
        sp_ = self.spectrum
        buf.write("[spectrum]\n")
        buf.write("eigenvalues = " + " ".join(f"{v:.17g}" for v in sp_.eigenvalues) + "\n")
        buf.write("means = " + " ".join(f"{v:.17g}" for v in sp_.means) + "\n")
        buf.write("classes = " + " ".join(str(int(c)) for c in sp_.classes) + "\n")
        buf.write(f"moment1 = {sp_.moment1:.17g}\n")
        buf.write(f"moment2 = {sp_.moment2:.17g}\n")
        buf.write(f"theta = {sp_.theta:.17g}\n")
        return buf.getvalue()

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.export_text())

    @classmethod
    def from_text(cls, text: str) -> "EffectiveMedium":
        lines = [ln.strip() for ln in text.strip().splitlines()]
        if lines[0] != "subwave-medium v1":
            raise ValueError("not a subwave-medium v1 file")
        kv = {}
        section = ""
        for ln in lines[1:]:
            if ln.startswith("["):
                section = ln.strip("[]")
            elif "=" in ln:
                k, v = ln.split("=", 1)
                kv[f"{section}.{k.strip()}"] = v.strip()

        def arr(key):
            s = kv.get(key, "")
            return np.array([float(t) for t in s.split()]) if s else np.zeros(0)

        a0 = np.array(
            [
                [float(kv["tensor.a11"]), float(kv["tensor.a12"])],
                [float(kv["tensor.a21"]), float(kv["tensor.a22"])],
            ]
        )
        eigenvalues = arr("spectrum.eigenvalues")
        spec = DirichletSpectrum(
            eigenvalues=eigenvalues,
            eigenfunctions=np.zeros((0, len(eigenvalues))),
            means=arr("spectrum.means"),
            classes=arr("spectrum.classes").astype(int),
            theta=float(kv.get("spectrum.theta", 0.0)),
            moment1=float(kv.get("spectrum.moment1", 0.0)),
            moment2=float(kv.get("spectrum.moment2", 0.0)),
        )
        return cls(
            a0=a0,
            theta=float(kv["cell.theta"]),
            spectrum=spec,
            n_modes=int(kv["cell.n_modes"]),
            mesh_hash=kv.get("cell.mesh_hash", ""),
        )

    @classmethod
    def load(cls, path) -> "EffectiveMedium":
        with open(path) as f:
            return cls.from_text(f.read())


def build_effective_medium(
    shape: Optional[InclusionShape], h: float = 0.02, n_modes: int = 24
) -> EffectiveMedium:
    """Mesh the unit cell and assemble the full effective medium."""
    cell = mesh_unit_cell(shape, h)
    if shape is None:
        med = EffectiveMedium.trivial()
        med.cell_mesh = cell
        med.chi = np.zeros((cell.n_vertices, 2))
        med.mesh_hash = cell.content_hash()
        return med
    spec = dirichlet_spectrum(cell, n_modes)
    chi, a0 = solve_corrector(cell)
    return EffectiveMedium(
        a0=a0,
        theta=spec.theta,
        spectrum=spec,
        n_modes=n_modes,
        chi=chi,
        cell_mesh=cell,
        mesh_hash=cell.content_hash(),
    )


@dataclass
class DispersionReport:
    samples: np.ndarray  # (n, 2): k, mu0(k)
    poles: np.ndarray  # nonzero-mean eigenvalue locations in range
    zeros: np.ndarray  # one zero per inter-pole interval where found
    gaps: np.ndarray  # (g, 2) intervals with mu0 < 0


def dispersion_scan(
    spectrum: DirichletSpectrum, k_range, n_samples: int = 200
) -> DispersionReport:
    """Sample mu0 over a real frequency range, bracket poles, and locate the
    unique zero in each inter-pole interval; gaps are the sign-negative
    intervals (pole, zero)."""
    k_lo, k_hi = float(k_range[0]), float(k_range[1])
    if k_lo < 0 or k_hi <= k_lo:
        raise ValueError("k_range must be positive and increasing")
    poles = np.sort(spectrum.sigma_d1())
    poles = poles[(poles > k_lo) & (poles < k_hi)]
    ks = np.linspace(k_lo, k_hi, n_samples)
    samples = []
    for k in ks:
        try:
            samples.append((k, float(np.real(mu0(spectrum, k)))))
        except PoleError:
            continue
    samples = np.asarray(samples).reshape(-1, 2)

    def f(k):
        return float(np.real(mu0(spectrum, k)))

    zeros, gaps = [], []
    endpoints = np.concatenate([[k_lo], poles, [k_hi]])
    for i in range(len(endpoints) - 1):
        a, b = endpoints[i], endpoints[i + 1]
        a_in = a + max(1e-9, 1e-9 * a) if a in poles or i > 0 else a
        b_in = b - max(1e-9, 1e-9 * b) if b in poles or i < len(endpoints) - 2 else b
        # widen away from the pole until mu0 is finite and of stable sign
        da = (b_in - a_in) * 1e-6
        fa, fb = f(a_in + da), f(b_in - da)
        if fa < 0 <= fb:
            lo, hi = a_in + da, b_in - da
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if f(mid) < 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 1e-14 * max(1.0, hi):
                    break
            z = 0.5 * (lo + hi)
            zeros.append(z)
            gaps.append((a, z))
        elif fa < 0 and fb < 0 and i > 0:
            # negative across the whole tail interval: gap truncated by range
            gaps.append((a, b))
    return DispersionReport(
        samples=samples,
        poles=poles,
        zeros=np.asarray(zeros),
        gaps=np.asarray(gaps).reshape(-1, 2),
    )


def cell_resolvent_apply(spectrum: DirichletSpectrum, g_nodal, z: complex):
    """Diagnostic eigen-expansion of the interior resolvent applied to g.

    Works in cell coordinates; by the eps^2 scaling of the contrast the same
    expansion represents the scaled-inclusion resolvent on every lattice copy.
    Truncated at the computed modes.
    """
    if spectrum.n_modes == 0:
        return np.zeros_like(g_nodal)
    mesh = spectrum.mesh
    inc_mask = mesh.tri_tags == INCLUSION
    M = fem.assemble_mass(mesh, inc_mask.astype(float))
    coeffs = spectrum.eigenfunctions.T @ (M @ g_nodal)
    weights = coeffs / (complex(z) ** 2 - spectrum.eigenvalues)
    return spectrum.eigenfunctions @ weights
