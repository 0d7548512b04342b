"""Corrector-augmented reconstruction, error norms, and rate fitting.

Builds the first-order approximation  Lambda(x/eps) u0(x) +
eps chi(x/eps) . eta_eps(x) S_eps(grad u0)(x)  on the fine mesh, evaluates
the volumetric, weighted, exterior and boundary-layer error functionals, and
fits log-log convergence slopes across the cell-size schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, fem
from .geometry import EXTERIOR, INCLUSION, MATRIX, MacroDomain, Mesh
from .helmholtz import FarField, FieldSolution, ScatterScene, far_field, solve_effective, solve_fine
from .microcell import EffectiveMedium

BOUNDARY_LAYER_INNER = 2  # d: eta ramps between d*eps and (d+1)*eps in d = 2


def mollifier_quadrature(n: int = 16):
    """Tensor Gauss-Legendre nodes on the mollifier support B_{1/2} with the
    smooth bump weight, discretely normalized to unit mass."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * x, 0.5 * w
    gx, gy = np.meshgrid(x, x, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    ww = (wx * wy).ravel()
    r2 = 4.0 * (pts**2).sum(axis=1)
    bump = np.where(r2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - r2, 1e-300)), 0.0)
    qw = ww * bump
    total = qw.sum()
    keep = qw > 0
    return pts[keep], qw[keep] / total


_MOLLIFIER = None


def _mollifier():
    global _MOLLIFIER
    if _MOLLIFIER is None:
        _MOLLIFIER = mollifier_quadrature(16)
    return _MOLLIFIER


def smoothing_convolve(eff_mesh: Mesh, grad_nodal: np.ndarray, eps: float, points):
    """Mollified vector field S_eps(v)(x) = int v(x - eps y) xi(y) dy,
    evaluated at the given points by mollifier-support quadrature."""
    qpts, qw = _mollifier()
    loc = fem.locator(eff_mesh)
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    fx = np.ascontiguousarray(grad_nodal[:, 0], dtype=np.complex128)
    fy = np.ascontiguousarray(grad_nodal[:, 1], dtype=np.complex128)
    return _kernels.mollify_vector_field(
        pts, eps, qpts, qw, eff_mesh.vertices, eff_mesh.triangles,
        loc.bin_ptr, loc.bin_tris, loc.nx, loc.ny, loc.x0, loc.y0, loc.dx, loc.dy,
        fx, fy,
    )


@dataclass
class Cutoff:
    """Boundary cutoff: 0 on the d*eps inner layer and outside Omega, 1 past
    the (d+1)*eps layer, quintic smoothstep ramp in between."""

    omega: MacroDomain
    eps: float
    degenerate: bool = False

    def values(self, pts):
        pts = np.atleast_2d(pts)
        if self.degenerate:
            return np.zeros(len(pts))
        d = self.omega.boundary_distance(pts)
        inside = self.omega.signed_distance(pts) < 0
        lo = BOUNDARY_LAYER_INNER * self.eps
        t = np.clip((d - lo) / self.eps, 0.0, 1.0)
        ramp = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
        return np.where(inside, ramp, 0.0)

    @property
    def gradient_bound(self):
        # max slope of the quintic smoothstep is 15/8 over a width-eps ramp
        return 1.875 / self.eps


def boundary_cutoff(omega: MacroDomain, eps: float) -> Cutoff:
    lo = (BOUNDARY_LAYER_INNER + 1) * eps
    # if the ramp never completes, the cutoff vanishes identically
    probe = _deep_interior_distance(omega)
    if probe <= lo:
        import warnings

        warnings.warn("epsilon too large: cutoff is identically zero")
        return Cutoff(omega, eps, degenerate=True)
    return Cutoff(omega, eps)


def _deep_interior_distance(omega: MacroDomain):
    if omega.kind == "disk":
        return omega.radius
    poly = omega._poly()
    c = poly.mean(axis=0)
    return float(omega.boundary_distance(c[None, :])[0])


@dataclass
class Reconstruction:
    """First-order two-scale approximation sampled on the fine mesh."""

    base: np.ndarray  # Lambda_eps * u0 at fine nodes
    corrector: np.ndarray  # eps chi^eps . eta_eps S_eps(grad u0)
    combined: np.ndarray
    u0_interp: np.ndarray
    eta: np.ndarray
    eps: float
    cutoff_inner: float
    cutoff_outer: float


def reconstruct(
    u0: FieldSolution,
    medium: EffectiveMedium,
    scene: ScatterScene,
    eps: float,
    fine_mesh: Mesh,
) -> Reconstruction:
    """Evaluate the corrector-augmented approximation on fine-mesh nodes."""
    if medium.cell_mesh is None or medium.chi is None:
        raise ValueError("medium lacks cell fields; rebuild with cell mesh")
    pts = fine_mesh.vertices
    omega = scene.omega
    eff_mesh = u0.mesh
    loc_eff = fem.locator(eff_mesh)
    u0_interp = loc_eff.interpolate(u0.values, pts)

    inside = omega.signed_distance(pts) < 0
    lam_eps = np.ones(len(pts), dtype=complex)
    chi_eps = np.zeros((len(pts), 2))
    if np.any(inside) and medium.spectrum.n_modes:
        from .microcell import lambda_cell

        lam_field, _ = lambda_cell(medium.cell_mesh, float(np.real(u0.k)), medium.spectrum)
        y = pts[inside] / eps
        y -= np.floor(y)
        loc_cell = fem.locator(medium.cell_mesh)
        lam_eps[inside] = loc_cell.interpolate(lam_field, y, fill=1.0)
        chi_eps[inside, 0] = np.real(
            loc_cell.interpolate(medium.chi[:, 0].astype(complex), y)
        )
        chi_eps[inside, 1] = np.real(
            loc_cell.interpolate(medium.chi[:, 1].astype(complex), y)
        )

    base = lam_eps * u0_interp

    cutoff = boundary_cutoff(omega, eps)
    eta = cutoff.values(pts)
    corrector = np.zeros(len(pts), dtype=complex)
    active = eta > 0
    if np.any(active) and medium.spectrum.n_modes:
        grad_u0 = fem.recovered_gradient(eff_mesh, u0.values)
        sm = smoothing_convolve(eff_mesh, grad_u0, eps, pts[active])
        corrector[active] = (
            eps
            * eta[active]
            * (chi_eps[active, 0] * sm[:, 0] + chi_eps[active, 1] * sm[:, 1])
        )
    return Reconstruction(
        base=base,
        corrector=corrector,
        combined=base + corrector,
        u0_interp=u0_interp,
        eta=eta,
        eps=eps,
        cutoff_inner=BOUNDARY_LAYER_INNER * eps,
        cutoff_outer=(BOUNDARY_LAYER_INNER + 1) * eps,
    )


@dataclass
class ErrorRow:
    eps: float
    l2_ball: float
    l2_recon: float
    heps: float
    h1_ext: float
    e_functional: float
    farfield_sup: float


@dataclass
class ErrorReport:
    rows: list

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def eps_values(self):
        return np.array([r.eps for r in self.rows])

    def export_csv(self) -> str:
        lines = ["epsilon,l2_ball,l2_recon,heps,h1_ext,e_functional,farfield_sup"]
        for r in self.rows:
            lines.append(
                f"{r.eps:.17g},{r.l2_ball:.17g},{r.l2_recon:.17g},{r.heps:.17g},"
                f"{r.h1_ext:.17g},{r.e_functional:.17g},{r.farfield_sup:.17g}"
            )
        return "\n".join(lines) + "\n"


def boundary_layer_functional(
    u0: FieldSolution, omega: MacroDomain, eps: float
) -> float:
    """E(u0) = eps^(1/2) |u0|_{H1(Omega)} + |grad u0|_{L2(O_{4 eps})}
    + eps |D^2 u0|_{L2(Omega minus O_eps)} with recovered second derivatives."""
    mesh = u0.mesh
    bary = mesh.barycenters()
    in_omega = mesh.tri_tags == MATRIX
    d = omega.boundary_distance(bary)
    h1_full = np.sqrt(
        fem.l2_norm_sq(mesh, u0.values, in_omega)
        + fem.h1_semi_sq(mesh, u0.values, in_omega)
    )
    layer_mask = in_omega & (d < 4 * eps)
    grad_layer = np.sqrt(fem.h1_semi_sq(mesh, u0.values, layer_mask))
    interior_mask = in_omega & (d > eps)
    grad_nodes = fem.recovered_gradient(mesh, u0.values)
    hxx, hxy = fem.element_gradients(mesh, grad_nodes[:, 0])
    hyx, hyy = fem.element_gradients(mesh, grad_nodes[:, 1])
    areas = np.where(interior_mask, mesh.areas(), 0.0)
    hess_sq = float(
        (
            areas
            * (np.abs(hxx) ** 2 + np.abs(hyy) ** 2 + 0.5 * np.abs(hxy + hyx) ** 2)
        ).sum()
    )
    return float(np.sqrt(eps) * h1_full + grad_layer + eps * np.sqrt(hess_sq))


def error_norms(
    u_eps: FieldSolution,
    recon: Reconstruction,
    u0: FieldSolution,
    scene: ScatterScene,
    eps: float,
    farfield_sup: float = np.nan,
) -> ErrorRow:
    """All error functionals for one cell size (same fine mesh for both fields)."""
    mesh = u_eps.mesh
    if len(recon.combined) != mesh.n_vertices:
        raise ValueError("reconstruction and fine solution use different meshes")
    diff_base = u_eps.values - recon.base
    diff_rec = u_eps.values - recon.combined
    inc_mask = mesh.tri_tags == INCLUSION
    not_inc = ~inc_mask
    ext_mask = mesh.tri_tags == EXTERIOR

    l2_ball = np.sqrt(fem.l2_norm_sq(mesh, diff_base))
    l2_recon = np.sqrt(fem.l2_norm_sq(mesh, diff_rec))
    heps = (
        l2_recon
        + np.sqrt(fem.h1_semi_sq(mesh, diff_rec, not_inc))
        + eps * np.sqrt(fem.h1_semi_sq(mesh, diff_rec, inc_mask))
    )
    diff_ext = u_eps.values - recon.u0_interp
    h1_ext = np.sqrt(
        fem.l2_norm_sq(mesh, diff_ext, ext_mask)
        + fem.h1_semi_sq(mesh, diff_ext, ext_mask)
    )
    e_func = boundary_layer_functional(u0, scene.omega, eps)
    return ErrorRow(
        eps=eps,
        l2_ball=float(l2_ball),
        l2_recon=float(l2_recon),
        heps=float(heps),
        h1_ext=float(h1_ext),
        e_functional=float(e_func),
        farfield_sup=float(farfield_sup),
    )


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    deviations: np.ndarray
    excluded: list


def fit_rate(pairs) -> RateFit:
    """Least-squares slope of log(error) against log(eps)."""
    pairs = [(float(e), float(v)) for e, v in pairs]
    excluded = [(e, v) for e, v in pairs if not (v > 0) or not np.isfinite(v)]
    kept = [(e, v) for e, v in pairs if (v > 0) and np.isfinite(v)]
    if len(kept) < 3:
        raise ValueError("need at least 3 positive error samples to fit a rate")
    x = np.log(np.array([e for e, _ in kept]))
    y = np.log(np.array([v for _, v in kept]))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    dev = y - (A @ coef)
    residual = float(np.sqrt((dev**2).mean()))
    return RateFit(slope, intercept, residual, dev, excluded)


@dataclass
class RateStudy:
    report: ErrorReport
    slopes: dict
    farfield_directions: np.ndarray


def run_rate_study(
    omega: MacroDomain,
    inclusion,
    medium: EffectiveMedium,
    k: float,
    eps_list,
    r: Optional[float] = None,
    n_directions: int = 72,
    verbose: bool = False,
) -> RateStudy:
    """Full per-eps pipeline: effective solve, fine solve, reconstruction,
    error functionals, and far-field comparison; fits all slopes."""
    from .helmholtz import IncidentWave

    thetas = 2 * np.pi * np.arange(n_directions) / n_directions
    rows = []
    for eps in eps_list:
        inc = IncidentWave(kind="plane", wavenumber=k)
        scene = ScatterScene(
            omega=omega,
            incident=inc,
            inclusion=inclusion,
            epsilon=eps,
            r=r,
            h_effective=eps / 6.0,
            h_fine=eps / 12.0,
        )
        u0 = solve_effective(scene, medium)
        u_eps = solve_fine(scene)
        recon = reconstruct(u0, medium, scene, eps, u_eps.mesh)
        rho = 0.9 * scene.r
        ff_eps = far_field(u_eps, rho, thetas)
        ff_0 = far_field(u0, rho, thetas)
        ff_sup = float(np.abs(ff_eps.values - ff_0.values).max())
        row = error_norms(u_eps, recon, u0, scene, eps, farfield_sup=ff_sup)
        rows.append(row)
        if verbose:
            print(
                f"eps=1/{round(1 / eps)}: L2={row.l2_ball:.4e} recon={row.l2_recon:.4e} "
                f"Heps={row.heps:.4e} H1ext={row.h1_ext:.4e} E={row.e_functional:.4e} "
                f"ff={row.farfield_sup:.4e}"
            )
    report = ErrorReport(rows=rows)
    slopes = {}
    for col in ("l2_ball", "l2_recon", "heps", "h1_ext", "e_functional", "farfield_sup"):
        try:
            slopes[col] = fit_rate(list(zip(report.eps_values(), report.column(col))))
        except ValueError:
            slopes[col] = None
    return RateStudy(report=report, slopes=slopes, farfield_directions=thetas)
