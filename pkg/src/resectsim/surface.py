"""Bivariate polynomial surface fitting, model sweep, and Pareto selection.

A surface z = P(x, y) = sum_ij a_ij * x^i * y^j is fitted by least squares
over coordinates normalized to [-1, 1] per axis (degree-10 monomials on raw
millimeter coordinates are catastrophically ill-conditioned). Two basis modes
exist: the full tensor grid (i <= degree_x, j <= degree_y) used by the model
sweep, and a total-degree-capped basis (additionally i + j <= cap) used for
the production fifth-order model, which has exactly 21 coefficients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, FitError, SelectionError
from .geometry import PointCloud

DEFAULT_MODEL_DEGREE = 5
DEFAULT_RMSE_CEILING_MM = 1.0


def basis_exponents(degree_x: int, degree_y: int, cap: int | None = None) -> list[tuple[int, int]]:
    """(i, j) exponent pairs of the basis, ordered by (i, j)."""
    return [
        (i, j)
        for i in range(degree_x + 1)
        for j in range(degree_y + 1)
        if cap is None or i + j <= cap
    ]


@dataclass
class PolySurface:
    """Fitted polynomial surface with its normalization and fit diagnostics."""

    degree_x: int
    degree_y: int
    cap: int | None
    coeffs: np.ndarray  # (degree_x+1, degree_y+1); entries outside the cap are 0
    x_center: float
    x_scale: float
    y_center: float
    y_scale: float
    domain: tuple[float, float, float, float]  # x_min, x_max, y_min, y_max
    rmse: float = 0.0
    fit_time_s: float = 0.0
    condition: float = 1.0

    @property
    def coefficient_count(self) -> int:
        return len(basis_exponents(self.degree_x, self.degree_y, self.cap))

    @property
    def model_id(self) -> str:
        return f"poly{self.degree_x}{self.degree_y}"

    def in_domain(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x0, x1, y0, y1 = self.domain
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def to_dict(self) -> dict:
        return {
            "degree_x": self.degree_x,
            "degree_y": self.degree_y,
            "cap": self.cap,
            "coeffs": self.coeffs.tolist(),
            "x_center": self.x_center,
            "x_scale": self.x_scale,
            "y_center": self.y_center,
            "y_scale": self.y_scale,
            "domain": list(self.domain),
            "rmse_mm": self.rmse,
            "fit_time_s": self.fit_time_s,
            "condition": self.condition,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolySurface":
        return cls(
            degree_x=d["degree_x"],
            degree_y=d["degree_y"],
            cap=d["cap"],
            coeffs=np.asarray(d["coeffs"], dtype=float),
            x_center=d["x_center"],
            x_scale=d["x_scale"],
            y_center=d["y_center"],
            y_scale=d["y_scale"],
            domain=tuple(d["domain"]),
            rmse=d.get("rmse_mm", 0.0),
            fit_time_s=d.get("fit_time_s", 0.0),
            condition=d.get("condition", 1.0),
        )


@dataclass
class FitReport:
    """Outcome of fitting one polynomial model to a cloud."""

    model_id: str
    degree_x: int
    degree_y: int
    coeff_count: int
    rmse: float
    fit_time_s: float
    condition: float = 1.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _design_matrix(xn: np.ndarray, yn: np.ndarray, exponents) -> np.ndarray:
    max_i = max(i for i, _ in exponents)
    max_j = max(j for _, j in exponents)
    xp = np.vander(xn, max_i + 1, increasing=True)
    yp = np.vander(yn, max_j + 1, increasing=True)
    cols = [xp[:, i] * yp[:, j] for i, j in exponents]
    return np.column_stack(cols)


def fit_poly(
    cloud: PointCloud, degree_x: int, degree_y: int, cap: int | None = None
) -> PolySurface:
    """Least-squares fit of z against (x, y) over normalized coordinates.

    Solved with an orthogonal factorization (LAPACK SVD via lstsq), never the
    normal equations. Raises FitError on an underdetermined or rank-deficient
    system.
    """
    if not (1 <= degree_x <= 10 and 1 <= degree_y <= 10):
        raise ContractViolation(f"degrees must lie in [1,10], got {degree_x}x{degree_y}")
    exponents = basis_exponents(degree_x, degree_y, cap)
    n_basis = len(exponents)
    pts = cloud.points
    if pts.shape[0] < n_basis:
        raise FitError(
            f"{pts.shape[0]} points cannot determine {n_basis} coefficients",
            basis_size=n_basis,
            point_count=pts.shape[0],
        )
    t0 = time.perf_counter()
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    x_center = 0.5 * (x.max() + x.min())
    y_center = 0.5 * (y.max() + y.min())
    x_scale = max(0.5 * (x.max() - x.min()), 1e-12)
    y_scale = max(0.5 * (y.max() - y.min()), 1e-12)
    A = _design_matrix((x - x_center) / x_scale, (y - y_center) / y_scale, exponents)
    sol, _, rank, sv = np.linalg.lstsq(A, z, rcond=None)
    if rank < n_basis:
        raise FitError(
            f"rank-deficient fit: rank {rank} < basis {n_basis}",
            basis_size=n_basis,
            point_count=pts.shape[0],
        )
    coeffs = np.zeros((degree_x + 1, degree_y + 1))
    for c, (i, j) in zip(sol, exponents):
        coeffs[i, j] = c
    elapsed = time.perf_counter() - t0
    surf = PolySurface(
        degree_x=degree_x,
        degree_y=degree_y,
        cap=cap,
        coeffs=coeffs,
        x_center=x_center,
        x_scale=x_scale,
        y_center=y_center,
        y_scale=y_scale,
        domain=(x.min(), x.max(), y.min(), y.max()),
        fit_time_s=max(elapsed, 1e-9),
        condition=float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else np.inf,
    )
    surf.rmse = rmse(surf, cloud)
    return surf


def evaluate(surface: PolySurface, x, y):
    """Evaluate P at (x, y); Horner recurrence in normalized coordinates.

    Extrapolation outside the fit domain is permitted; use
    surface.in_domain(x, y) to flag it.
    """
    xn = (np.asarray(x, dtype=float) - surface.x_center) / surface.x_scale
    yn = (np.asarray(y, dtype=float) - surface.y_center) / surface.y_scale
    # Horner in x over row polynomials, each itself Horner in y.
    rows = surface.coeffs
    acc = np.zeros_like(np.broadcast_arrays(xn, yn)[0], dtype=float)
    for i in range(rows.shape[0] - 1, -1, -1):
        row_val = np.zeros_like(acc)
        for j in range(rows.shape[1] - 1, -1, -1):
            row_val = row_val * yn + rows[i, j]
        acc = acc * xn + row_val
    if np.isscalar(x) and np.isscalar(y):
        return float(acc)
    return acc


def rmse(surface: PolySurface, cloud: PointCloud) -> float:
    """Root-mean-square z residual of the cloud against the surface."""
    if len(cloud) == 0:
        raise ContractViolation("rmse of an empty cloud is undefined")
    pts = cloud.points
    pred = evaluate(surface, pts[:, 0], pts[:, 1])
    return float(np.sqrt(np.mean((pts[:, 2] - pred) ** 2)))


def sweep_models(cloud: PointCloud, max_degree: int, timing_repeats: int = 3) -> list[FitReport]:
    """Fit every (dx, dy) pair with 1 <= dx, dy <= max_degree, uncapped basis.

    Fit time is the median of `timing_repeats` wall-clock runs (the time axis
    is noisy by nature); rmse is deterministic. Per-model failures are
    recorded in the report rather than raised.
    """
    if not 1 <= max_degree <= 10:
        raise ContractViolation(f"max_degree must lie in [1,10], got {max_degree}")
    reports = []
    for dx in range(1, max_degree + 1):
        for dy in range(1, max_degree + 1):
            n_basis = (dx + 1) * (dy + 1)
            try:
                times = []
                surf = None
                for _ in range(max(1, timing_repeats)):
                    surf = fit_poly(cloud, dx, dy)
                    times.append(surf.fit_time_s)
                reports.append(
                    FitReport(
                        model_id=surf.model_id,
                        degree_x=dx,
                        degree_y=dy,
                        coeff_count=surf.coefficient_count,
                        rmse=surf.rmse,
                        fit_time_s=float(np.median(times)),
                        condition=surf.condition,
                    )
                )
            except FitError as exc:
                reports.append(
                    FitReport(
                        model_id=f"poly{dx}{dy}",
                        degree_x=dx,
                        degree_y=dy,
                        coeff_count=n_basis,
                        rmse=float("nan"),
                        fit_time_s=float("nan"),
                        error=str(exc),
                    )
                )
    return reports


def pareto_front(reports: list[FitReport]) -> list[FitReport]:
    """Non-dominated set under minimize(rmse, fit time).

    A report is dominated iff another is <= in both objectives and < in at
    least one. Failed fits never enter the front.
    """
    if not reports:
        raise ContractViolation("pareto_front requires at least one report")
    usable = [r for r in reports if r.ok]
    front = []
    for r in usable:
        dominated = any(
            (o.rmse <= r.rmse and o.fit_time_s <= r.fit_time_s)
            and (o.rmse < r.rmse or o.fit_time_s < r.fit_time_s)
            for o in usable
            if o is not r
        )
        if not dominated:
            front.append(r)
    return front


def select_default(reports: list[FitReport], rmse_ceiling: float = DEFAULT_RMSE_CEILING_MM) -> str:
    """Cheapest Pareto-optimal model with rmse below the ceiling.

    Ties broken by fewer coefficients, then lexicographic model id. Raises
    SelectionError when nothing qualifies (supervisor must choose).
    """
    candidates = [r for r in pareto_front(reports) if r.rmse < rmse_ceiling]
    if not candidates:
        raise SelectionError(f"no Pareto-front model has rmse below {rmse_ceiling} mm")
    best = min(candidates, key=lambda r: (r.fit_time_s, r.coeff_count, r.model_id))
    return best.model_id


def reports_to_csv(reports: list[FitReport]) -> str:
    """CSV serialization with a Pareto-front marker column."""
    front_ids = {id(r) for r in pareto_front(reports)} if any(r.ok for r in reports) else set()
    lines = ["model_id,degree_x,degree_y,coeff_count,rmse_mm,fit_time_s,pareto"]
    for r in reports:
        mark = 1 if id(r) in front_ids else 0
        lines.append(
            f"{r.model_id},{r.degree_x},{r.degree_y},{r.coeff_count},"
            f"{r.rmse:.9g},{r.fit_time_s:.9g},{mark}"
        )
    return "\n".join(lines) + "\n"
