"""Scattering solvers on the truncated disk with a Fourier-mode DtN boundary.

The DtN operator is exact per Fourier mode and enters the discrete system as
a low-rank correction; linear solves factorize the sparse volumetric part and
apply the correction through the Woodbury identity with iterative refinement.
Also provides the transmission-disk series used as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import h1vp, hankel1, jv, jvp

from . import fem
from .geometry import (
    EXTERIOR,
    INCLUSION,
    MATRIX,
    TRUNCATION_CIRCLE,
    InclusionShape,
    Lattice,
    MacroDomain,
    Mesh,
    build_lattice,
    default_truncation_radius,
    mesh_scene,
)
from .microcell import EffectiveMedium

C_BRANCH_TOL = 1e-12


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave or exterior point source at a fixed wavenumber."""

    kind: str  # plane | point_source
    wavenumber: float
    direction: tuple = (1.0, 0.0)
    location: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind == "plane":
            d = np.asarray(self.direction, dtype=float)
            if abs(np.linalg.norm(d) - 1.0) > 1e-14:
                raise ValueError("plane-wave direction must have unit norm")
        elif self.kind != "point_source":
            raise ValueError(f"unknown incident kind {self.kind!r}")

    def values(self, pts):
        pts = np.atleast_2d(pts)
        k = self.wavenumber
        if self.kind == "plane":
            d = np.asarray(self.direction)
            return np.exp(1j * k * (pts @ d))
        y0 = np.asarray(self.location)
        r = np.linalg.norm(pts - y0, axis=1)
        return -0.25j * hankel1(0, k * r)

    def gradient(self, pts):
        pts = np.atleast_2d(pts)
        k = self.wavenumber
        if self.kind == "plane":
            d = np.asarray(self.direction)
            return 1j * k * d[None, :] * np.exp(1j * k * (pts @ d))[:, None]
        y0 = np.asarray(self.location)
        dx = pts - y0
        r = np.linalg.norm(dx, axis=1)
        dH = -0.25j * k * h1vp(0, k * r)
        return dH[:, None] * dx / r[:, None]


@dataclass
class DtNOperator:
    """Fourier-mode Dirichlet-to-Neumann map on the truncation circle."""

    r: float
    z: complex
    n_modes_boundary: int
    mode_coefficients: np.ndarray  # d_n for n = -N..N

    def coefficient(self, n):
        return self.mode_coefficients[n + self.n_modes_boundary]


def build_dtn(r: float, z: complex, N: Optional[int] = None) -> DtNOperator:
    """Mode coefficients d_n = z H_n^(1)'(zr) / H_n^(1)(zr), n = -N..N."""
    if r <= 0:
        raise ValueError("truncation radius must be positive")
    z = complex(z)
    if abs(z.real) < C_BRANCH_TOL and z.imag < 0:
        raise ValueError("z on the negative imaginary axis (branch cut)")
    if N is None:
        N = int(np.ceil(abs(z) * r)) + 10
    n = np.arange(0, N + 1)
    H = hankel1(n, z * r)
    dH = h1vp(n, z * r)
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(dH))) or np.any(H == 0):
        raise ValueError(f"Hankel evaluation out of range for z*r = {z * r}")
    half = z * dH / H
    coeffs = np.concatenate([half[::-1][:-1], half])  # even in the mode index
    return DtNOperator(r=float(r), z=z, n_modes_boundary=int(N), mode_coefficients=coeffs)


def boundary_trace(mesh: Mesh):
    """Truncation-circle node indices sorted by angle plus trapezoid weights."""
    nodes = np.unique(mesh.edges[mesh.edge_tags == TRUNCATION_CIRCLE])
    if not len(nodes):
        raise SolverError("mesh has no truncation-circle boundary")
    p = mesh.vertices[nodes]
    theta = np.arctan2(p[:, 1], p[:, 0])
    order = np.argsort(theta, kind="stable")
    nodes, theta = nodes[order], theta[order]
    gaps = np.diff(np.concatenate([theta, [theta[0] + 2 * np.pi]]))
    w = 0.5 * (gaps + np.roll(gaps, 1))
    return nodes, theta, w


def dtn_fourier_matrix(mesh: Mesh, dtn: DtNOperator):
    """Trace-to-Fourier matrix B and diagonal D with <DtN w, v> = (Bv)^H D (Bw)."""
    nodes, theta, w = boundary_trace(mesh)
    N = dtn.n_modes_boundary
    ns = np.arange(-N, N + 1)
    B = (w[None, :] / (2 * np.pi)) * np.exp(-1j * ns[:, None] * theta[None, :])
    D = 2 * np.pi * dtn.r * dtn.mode_coefficients
    return nodes, B, D


class TruncatedSystem:
    """Sparse Helmholtz system plus the low-rank DtN correction.

    Solves A x = b with A = A_sparse - P^T B^H diag(D) B P via the Woodbury
    identity (P embeds boundary nodes); falls back to assembling the dense
    DtN block if refinement cannot reach the residual tolerance.
    """

    def __init__(self, A_sparse, bnodes, B, D, rtol=1e-9):
        self.A = A_sparse.tocsc()
        self.bnodes = bnodes
        self.B = B
        self.D = D
        self.rtol = rtol
        self._lu = None
        self._cap = {}

    def _factor(self):
        if self._lu is None:
            self._lu = spla.splu(self.A)
        return self._lu

    def _apply(self, x, conj=False):
        if conj:
            # A^H x; the DtN block transposes to B^H conj(D) B
            y = (self.A.T @ x.conj()).conj()
            t = self.B @ x[self.bnodes]
            y[self.bnodes] -= self.B.conj().T @ (np.conj(self.D) * t)
        else:
            y = self.A @ x
            t = self.B @ x[self.bnodes]
            y[self.bnodes] -= self.B.conj().T @ (self.D * t)
        return y

    def matvec(self, x):
        return self._apply(x)

    def solve(self, b, trans="N"):
        """Solve A x = b ('N') or A^H x = b ('H')."""
        lu = self._factor()
        conj = trans == "H"
        D = np.conj(self.D) if conj else self.D
        key = trans
        if key not in self._cap:
            rhs = np.zeros((self.A.shape[0], self.B.shape[0]), dtype=complex)
            rhs[self.bnodes] = self.B.conj().T
            Y = lu.solve(rhs, trans=trans)
            G = np.eye(self.B.shape[0], dtype=complex) - (D[:, None] * (self.B @ Y[self.bnodes]))
            self._cap[key] = (Y, G)
        Y, G = self._cap[key]
        x = lu.solve(np.asarray(b, dtype=complex), trans=trans)
        x = x + Y @ np.linalg.solve(G, D * (self.B @ x[self.bnodes]))
        # iterative refinement against the exact operator
        for _ in range(3):
            r = b - self._apply(x, conj=conj)
            nrm = np.linalg.norm(r) / max(np.linalg.norm(b), 1e-300)
            if nrm < self.rtol:
                break
            dx = lu.solve(r, trans=trans)
            dx = dx + Y @ np.linalg.solve(G, D * (self.B @ dx[self.bnodes]))
            x = x + dx
        else:
            x = self._dense_fallback(b, trans)
        return x

    def residual(self, x, b):
        return float(
            np.linalg.norm(b - self._apply(x)) / max(np.linalg.norm(b), 1e-300)
        )

    def _dense_fallback(self, b, trans):
        block = self.B.conj().T @ (self.D[:, None] * self.B)
        ii, jj = np.meshgrid(self.bnodes, self.bnodes, indexing="ij")
        A_full = self.A - sp.coo_matrix(
            (block.ravel(), (ii.ravel(), jj.ravel())), shape=self.A.shape
        )
        lu = spla.splu(A_full.tocsc())
        return lu.solve(np.asarray(b, dtype=complex), trans=trans)

    def smallest_singular_value(self, iters=5):
        """Inverse-iteration proxy for sigma_min of the full system."""
        n = self.A.shape[0]
        v = np.ones(n, dtype=complex) / np.sqrt(n)
        sigma = 0.0
        for _ in range(iters):
            try:
                w = self.solve(v, trans="N")
                w = self.solve(w, trans="H")
            except RuntimeError:
                return 0.0
            nw = np.linalg.norm(w)
            if not np.isfinite(nw) or nw == 0.0:
                return 0.0
            sigma = 1.0 / np.sqrt(nw)
            v = w / nw
        return float(sigma)


@dataclass
class ScatterScene:
    """Truncated scattering configuration with cached meshes."""

    omega: MacroDomain
    incident: IncidentWave
    inclusion: Optional[InclusionShape] = None
    epsilon: Optional[float] = None
    r: Optional[float] = None
    h_effective: float = 0.02
    h_fine: Optional[float] = None
    _lattice: Optional[Lattice] = field(default=None, repr=False)
    _eff_mesh: Optional[Mesh] = field(default=None, repr=False)
    _fine_mesh: Optional[Mesh] = field(default=None, repr=False)

    def __post_init__(self):
        if self.r is None:
            self.r = default_truncation_radius(self.omega)
        if self.h_fine is None and self.epsilon is not None:
            self.h_fine = self.epsilon / 12.0

    @property
    def k(self):
        return self.incident.wavenumber

    def lattice(self) -> Lattice:
        if self._lattice is None:
            eps = self.epsilon if self.epsilon is not None else 0.5
            self._lattice = (
                build_lattice(self.omega, eps)
                if self.inclusion is not None and self.epsilon is not None
                else Lattice(epsilon=eps, indices=())
            )
        return self._lattice

    def effective_mesh(self) -> Mesh:
        if self._eff_mesh is None:
            self._eff_mesh = mesh_scene(
                self.omega, Lattice(0.5, ()), None, self.r, self.h_effective
            )
        return self._eff_mesh

    def fine_mesh(self) -> Mesh:
        if self._fine_mesh is None:
            if self.inclusion is None or self.epsilon is None:
                self._fine_mesh = self.effective_mesh()
            else:
                self._fine_mesh = mesh_scene(
                    self.omega, self.lattice(), self.inclusion, self.r, self.h_fine
                )
        return self._fine_mesh


@dataclass
class FieldSolution:
    """Complex nodal total field on a scene mesh."""

    mesh: Mesh
    values: np.ndarray
    problem: str  # fine | effective | free
    k: complex
    residual: float
    incident: Optional[IncidentWave] = None
    epsilon: Optional[float] = None

    def scattered(self):
        if self.incident is None:
            return self.values
        return self.values - self.incident.values(self.mesh.vertices)


def _quad_points(mesh, mask):
    """Edge-midpoint quadrature (degree-2 exact) on masked triangles."""
    tris = mesh.triangles[mask]
    p = mesh.vertices[tris]
    mids = np.stack(
        [
            0.5 * (p[:, 0] + p[:, 1]),
            0.5 * (p[:, 1] + p[:, 2]),
            0.5 * (p[:, 2] + p[:, 0]),
        ],
        axis=1,
    )
    areas = mesh.areas()[mask]
    return tris, p, mids, areas


def _incident_rhs_effective(mesh, omega_mask, inc: IncidentWave, a0, s):
    """H(v) = int_Omega (I-A0) grad(u_in) . grad(v) + (s - k^2) u_in v."""
    k = inc.wavenumber
    tris, p, mids, areas = _quad_points(mesh, omega_mask)
    rhs = np.zeros(mesh.n_vertices, dtype=complex)
    I_minus = np.eye(2) - a0
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / (2 * areas)[:, None, None]  # (m,3,2)
    coef = s - k**2
    for q in range(3):
        pts = mids[:, q]
        gi = inc.gradient(pts)
        vi = inc.values(pts)
        flux = gi @ I_minus.T
        w = areas / 3.0
        # lambda_i at the midpoint of edge q: 0.5 for the two edge nodes
        lam = np.zeros(3)
        lam[q] = lam[(q + 1) % 3] = 0.5
        for i in range(3):
            contrib = w * (
                (grads[:, i, 0] * flux[:, 0] + grads[:, i, 1] * flux[:, 1])
                + coef * vi * lam[i]
            )
            np.add.at(rhs, tris[:, i], contrib)
    return rhs


def _incident_rhs_fine(mesh, inc_mask, inc: IncidentWave, eps):
    """(1 - eps^2) int_{D_eps} grad(u_in) . grad(v)."""
    tris, p, mids, areas = _quad_points(mesh, inc_mask)
    rhs = np.zeros(mesh.n_vertices, dtype=complex)
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / (2 * areas)[:, None, None]
    scale = 1.0 - eps**2
    for q in range(3):
        gi = inc.gradient(mids[:, q])
        w = areas / 3.0
        for i in range(3):
            contrib = scale * w * (grads[:, i, 0] * gi[:, 0] + grads[:, i, 1] * gi[:, 1])
            np.add.at(rhs, tris[:, i], contrib)
    return rhs


def effective_system(
    mesh: Mesh, medium: EffectiveMedium, z: complex, r: float, N: Optional[int] = None
) -> TruncatedSystem:
    """Assemble div(A0 grad) + z^2 mu0(z) inside Omega, Laplace + z^2 outside,
    DtN(z) on the truncation circle."""
    mat = mesh.tri_tags == MATRIX
    ext = ~mat
    a0 = medium.a0
    S = fem.assemble_tensor_stiffness(
        mesh,
        np.where(mat, a0[0, 0], 1.0),
        np.where(mat, a0[0, 1], 0.0),
        np.where(mat, a0[1, 1], 1.0),
    )
    M_in = fem.assemble_mass(mesh, mat.astype(float))
    M_out = fem.assemble_mass(mesh, ext.astype(float))
    z = complex(z)
    mu = complex(medium.mu0(z)) if medium.spectrum.n_modes else 1.0
    A_s = S.astype(complex) - z**2 * mu * M_in - z**2 * M_out
    dtn = build_dtn(r, z, N)
    bnodes, B, D = dtn_fourier_matrix(mesh, dtn)
    return TruncatedSystem(A_s, bnodes, B, D)


def fine_system(
    mesh: Mesh, epsilon: float, z: complex, r: float, N: Optional[int] = None
) -> TruncatedSystem:
    """Assemble the heterogeneous operator with eps^2 contrast in inclusions."""
    inc = mesh.tri_tags == INCLUSION
    coeff = np.where(inc, epsilon**2, 1.0)
    S = fem.assemble_stiffness(mesh, coeff)
    M = fem.assemble_mass(mesh)
    z = complex(z)
    A_s = S.astype(complex) - z**2 * M
    dtn = build_dtn(r, z, N)
    bnodes, B, D = dtn_fourier_matrix(mesh, dtn)
    return TruncatedSystem(A_s, bnodes, B, D)


def variational_parts(mesh: Mesh, medium: EffectiveMedium, k: float, r: float):
    """The coercive/compact/source decomposition of the effective problem:
    returns (a1 matrix, a2 matrix, H vector, DtN pieces)."""
    mat = mesh.tri_tags == MATRIX
    ext = ~mat
    a0 = medium.a0
    S = fem.assemble_tensor_stiffness(
        mesh,
        np.where(mat, a0[0, 0], 1.0),
        np.where(mat, a0[0, 1], 0.0),
        np.where(mat, a0[1, 1], 1.0),
    )
    M_in = fem.assemble_mass(mesh, mat.astype(float))
    M_out = fem.assemble_mass(mesh, ext.astype(float))
    mu = complex(medium.mu0(k)) if medium.spectrum.n_modes else 1.0
    s = k**2 * mu
    a1 = S.astype(complex) + M_in + M_out
    a2 = -(s + 1.0) * M_in - (k**2 + 1.0) * M_out
    return a1, a2, s, M_in, M_out


def solve_effective(scene: ScatterScene, medium: EffectiveMedium, k=None) -> FieldSolution:
    """Total effective field on the scene's effective mesh."""
    k = scene.k if k is None else k
    mesh = scene.effective_mesh()
    sys_ = effective_system(mesh, medium, k, scene.r)
    mat = mesh.tri_tags == MATRIX
    mu = complex(medium.mu0(k)) if medium.spectrum.n_modes else 1.0
    rhs = _incident_rhs_effective(mesh, mat, scene.incident, medium.a0, k**2 * mu)
    w = sys_.solve(rhs)
    resid = sys_.residual(w, rhs)
    u = w + scene.incident.values(mesh.vertices)
    problem = "effective" if medium.spectrum.n_modes or not np.allclose(medium.a0, np.eye(2)) else "free"
    return FieldSolution(
        mesh=mesh, values=u, problem=problem, k=k, residual=resid, incident=scene.incident
    )


def solve_fine(scene: ScatterScene, z=None) -> FieldSolution:
    """Total heterogeneous field on the scene's fine mesh (complex z allowed)."""
    z = scene.k if z is None else z
    mesh = scene.fine_mesh()
    if scene.inclusion is None or scene.epsilon is None or len(scene.lattice()) == 0:
        sys_ = fine_system(mesh, 1.0, z, scene.r)
        rhs = np.zeros(mesh.n_vertices, dtype=complex)
        problem = "free"
    else:
        sys_ = fine_system(mesh, scene.epsilon, z, scene.r)
        rhs = _incident_rhs_fine(
            mesh, mesh.tri_tags == INCLUSION, scene.incident, scene.epsilon
        )
        problem = "fine"
    w = sys_.solve(rhs) if np.any(rhs) else np.zeros(mesh.n_vertices, dtype=complex)
    resid = sys_.residual(w, rhs) if np.any(rhs) else 0.0
    u = w + scene.incident.values(mesh.vertices)
    return FieldSolution(
        mesh=mesh,
        values=u,
        problem=problem,
        k=z,
        residual=resid,
        incident=scene.incident,
        epsilon=scene.epsilon,
    )


@dataclass
class FarField:
    directions: np.ndarray  # angles theta_i
    values: np.ndarray  # complex far-field amplitudes
    extraction_radius: float

    def export_csv(self) -> str:
        lines = ["theta,re,im"]
        for t, v in zip(self.directions, self.values):
            lines.append(f"{t:.17g},{v.real:.17g},{v.imag:.17g}")
        return "\n".join(lines) + "\n"


def _farfield_from_samples(k, rho, phis, us, dus, directions):
    """Evaluate the far-field boundary integral on sampled circle data."""
    const = np.exp(-0.75j * np.pi) / np.sqrt(8 * np.pi * k)
    y = rho * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    nrm = y / rho
    dphi = 2 * np.pi / len(phis)
    th = np.atleast_1d(directions)
    dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    phase = np.exp(-1j * k * (dirs @ y.T))  # (ndir, nq)
    dn_phase = -1j * k * (dirs @ nrm.T) * phase
    integrand = phase * dus[None, :] - dn_phase * us[None, :]
    vals = const * (integrand.sum(axis=1) * rho * dphi)
    return vals


def far_field(
    sol: FieldSolution, extraction_radius: float, directions, n_quad: Optional[int] = None
) -> FarField:
    """Far-field pattern of the scattered part of a field solution."""
    rho = extraction_radius
    mesh = sol.mesh
    rmax = float(np.linalg.norm(mesh.vertices, axis=1).max())
    if rho > rmax + 1e-9:
        raise ValueError("extraction radius outside the computational disk")
    k = float(np.real(sol.k))
    if n_quad is None:
        n_quad = max(256, 8 * (int(np.ceil(k * rho)) + 8))
    phis = 2 * np.pi * np.arange(n_quad) / n_quad
    pts = rho * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    loc = fem.locator(mesh)
    u_tot = loc.interpolate(sol.values, pts)
    grad_nodes = fem.recovered_gradient(mesh, sol.values)
    gx = loc.interpolate(grad_nodes[:, 0], pts)
    gy = loc.interpolate(grad_nodes[:, 1], pts)
    if sol.incident is not None:
        u_s = u_tot - sol.incident.values(pts)
        gi = sol.incident.gradient(pts)
        gx = gx - gi[:, 0]
        gy = gy - gi[:, 1]
    else:
        u_s = u_tot
    nrm = pts / rho
    du = gx * nrm[:, 0] + gy * nrm[:, 1]
    th = np.atleast_1d(np.asarray(directions, dtype=float))
    vals = _farfield_from_samples(k, rho, phis, u_s, du, th)
    return FarField(directions=th, values=vals, extraction_radius=rho)


def far_field_smooth(u_fun, gradu_fun, k, rho, directions, n_quad=512) -> FarField:
    """Far field of an analytically known outgoing field (oracle path)."""
    phis = 2 * np.pi * np.arange(n_quad) / n_quad
    pts = rho * np.stack([np.cos(phis), np.sin(phis)], axis=1)
    us = u_fun(pts)
    g = gradu_fun(pts)
    nrm = pts / rho
    dus = g[:, 0] * nrm[:, 0] + g[:, 1] * nrm[:, 1]
    th = np.atleast_1d(np.asarray(directions, dtype=float))
    vals = _farfield_from_samples(k, rho, phis, us, dus, th)
    return FarField(directions=th, values=vals, extraction_radius=rho)


# ---------------------------------------------------------------------------
# transmission-disk series oracle


class DiskScatteringOracle:
    """Series solution for a plane wave hitting a penetrable disk with
    isotropic interior tensor a0 and interior coefficient z^2 mu0.

    Independent of the finite-element path; used to validate the effective
    solver, far fields, band-gap attenuation, and resonances.
    """

    def __init__(self, a0: float, mu0_value: complex, R: float, k: float,
                 direction=(1.0, 0.0), n_max: Optional[int] = None):
        self.a0 = float(a0)
        self.mu0 = complex(mu0_value)
        self.R = float(R)
        self.k = float(k)
        self.theta0 = float(np.arctan2(direction[1], direction[0]))
        if n_max is None:
            n_max = int(np.ceil(k * R)) + 20
        self.n_max = n_max
        self.gamma = k * np.sqrt(self.mu0 / self.a0 + 0j)
        ns = np.arange(0, n_max + 1)
        g, kk, R_ = self.gamma, self.k, self.R
        a_int = np.empty(n_max + 1, dtype=complex)
        b_sc = np.empty(n_max + 1, dtype=complex)
        for n in ns:
            Jg, dJg = jv(n, g * R_), jvp(n, g * R_)
            Hk, dHk = hankel1(n, kk * R_), h1vp(n, kk * R_)
            Jk, dJk = jv(n, kk * R_), jvp(n, kk * R_)
            inc = 1j**n
            Amat = np.array(
                [[Jg, -Hk], [self.a0 * g * dJg, -kk * dHk]], dtype=complex
            )
            rhs = np.array([inc * Jk, inc * kk * dJk], dtype=complex)
            a_n, b_n = np.linalg.solve(Amat, rhs)
            a_int[n] = a_n
            b_sc[n] = b_n
        self.a_int = a_int
        self.b_sc = b_sc

    def _angular(self, pts):
        pts = np.atleast_2d(pts)
        rr = np.linalg.norm(pts, axis=1)
        th = np.arctan2(pts[:, 1], pts[:, 0]) - self.theta0
        return rr, th

    def _series(self, coeffs, radial, rr, th):
        ns = np.arange(1, self.n_max + 1)
        out = coeffs[0] * radial(0, rr)
        ang = np.cos(ns[None, :] * th[:, None])
        rad = np.stack([radial(n, rr) for n in ns], axis=1)
        out = out + 2 * (rad * ang * coeffs[None, 1:]).sum(axis=1)
        return out

    def scattered_field(self, pts):
        rr, th = self._angular(pts)
        out = self._series(self.b_sc, lambda n, r: hankel1(n, self.k * r), rr, th)
        return out

    def interior_field(self, pts):
        rr, th = self._angular(pts)
        return self._series(self.a_int, lambda n, r: jv(n, self.gamma * r), rr, th)

    def total_field(self, pts):
        pts = np.atleast_2d(pts)
        rr, _ = self._angular(pts)
        inside = rr < self.R
        out = np.empty(len(pts), dtype=complex)
        if np.any(inside):
            out[inside] = self.interior_field(pts[inside])
        if np.any(~inside):
            d = np.array([np.cos(self.theta0), np.sin(self.theta0)])
            out[~inside] = self.scattered_field(pts[~inside]) + np.exp(
                1j * self.k * (pts[~inside] @ d)
            )
        return out

    def grad_scattered(self, pts):
        """Gradient of the scattered field (outside the disk)."""
        pts = np.atleast_2d(pts)
        rr, th = self._angular(pts)
        k = self.k
        ns = np.arange(0, self.n_max + 1)
        dur = np.zeros(len(pts), dtype=complex)
        dut = np.zeros(len(pts), dtype=complex)
        for n in ns:
            w = self.b_sc[n] * (1 if n == 0 else 2)
            H = hankel1(n, k * rr)
            dH = h1vp(n, k * rr)
            if n == 0:
                dur += w * k * dH
            else:
                dur += w * k * dH * np.cos(n * th)
                dut += -w * H * n * np.sin(n * th) / rr
        ct, st = np.cos(th + self.theta0), np.sin(th + self.theta0)
        gx = dur * ct - dut * st
        gy = dur * st + dut * ct
        return np.stack([gx, gy], axis=1)

    def far_field(self, directions):
        """Analytic far-field amplitude from the Hankel asymptotics."""
        th = np.atleast_1d(np.asarray(directions, dtype=float)) - self.theta0
        ns = np.arange(0, self.n_max + 1)
        phase = (-1j) ** ns * self.b_sc
        vals = phase[0] * np.ones_like(th, dtype=complex)
        for n in ns[1:]:
            vals = vals + 2 * phase[n] * np.cos(n * th)
        return np.sqrt(2 / (np.pi * self.k)) * np.exp(-0.25j * np.pi) * vals

    def interior_l2_energy(self, n_rad=400):
        """Squared L2 norm of the total field inside the disk.

        By angular orthogonality the n = 0 term carries weight 2*pi and each
        n >= 1 cosine pair carries 4*pi times the radial profile integral.
        """
        rs = (np.arange(n_rad) + 0.5) * self.R / n_rad
        dr = self.R / n_rad
        total = 0.0
        for n in range(self.n_max + 1):
            w = 2 * np.pi if n == 0 else 4 * np.pi
            prof = np.abs(jv(n, self.gamma * rs)) ** 2
            total += w * np.abs(self.a_int[n]) ** 2 * (prof * rs).sum() * dr
        return float(total)

    def scattering_cross_section(self):
        """Integral of |far field|^2 over directions."""
        ns = np.arange(0, self.n_max + 1)
        w = np.where(ns == 0, 1.0, 2.0)
        return float((2 / (np.pi * self.k)) * 2 * np.pi * (w * np.abs(self.b_sc) ** 2).sum())
