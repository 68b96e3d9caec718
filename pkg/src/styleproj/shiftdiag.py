"""Computable proxies for multi-source domain shift.

Exact hypothesis-class divergences between finite samples are not available,
so every quantity here is a clearly-labeled proxy in style space: a domain is
summarized by the centroid of its per-sample style vectors, the worst
pairwise shift between source domains is the largest centroid distance, and
the shift from a target to the source family is the distance from the target
centroid to the closest convex mixture of source centroids. The mixture
weights live on the probability simplex and are found by projected gradient
descent on the squared distance (a convex quadratic), with the simplex
projection done by the exact sort-and-threshold rule.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class DomainStyleSummary:
    name: str
    centroid: np.ndarray  # mean style vector, length 2C
    std: np.ndarray       # per-coordinate standard deviation
    count: int


@dataclass
class GammaResult:
    gamma: float
    eta: np.ndarray
    converged: bool
    iterations: int


@dataclass
class ShiftReport:
    target: str
    sources: list
    rho: float
    gamma: float
    eta: np.ndarray
    distance_matrix: np.ndarray  # pairwise source centroid distances
    converged: bool = True


def _to_vec(style) -> np.ndarray:
    if isinstance(style, np.ndarray):
        return style
    return style.as_array()  # StyleVector


def summarize_domain(styles, name: str = "") -> DomainStyleSummary:
    """Centroid and per-coordinate spread of a domain's style vectors."""
    if not styles:
        raise ValueError("cannot summarize an empty style list")
    mat = np.stack([_to_vec(s) for s in styles])
    return DomainStyleSummary(name=name, centroid=mat.mean(axis=0),
                              std=mat.std(axis=0), count=mat.shape[0])


def rho_proxy(summaries) -> tuple[float, np.ndarray]:
    """Largest pairwise centroid distance among source domains, plus the matrix."""
    if len(summaries) < 2:
        raise ValueError(f"need at least 2 source domains, got {len(summaries)}")
    n = len(summaries)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.linalg.norm(summaries[i].centroid - summaries[j].centroid))
            dist[i, j] = dist[j, i] = d
    return float(dist.max()), dist


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum w = 1} (sort-and-threshold)."""
    v = np.asarray(v, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    cum = (np.cumsum(u) - 1.0) / np.arange(1, v.size + 1)
    k = np.nonzero(u > cum)[0][-1]
    return np.maximum(v - cum[k], 0.0)


def gamma_eta(target: DomainStyleSummary, sources, step: float = 0.1,
              max_iter: int = 10000, tol: float = 1e-10) -> GammaResult:
    """Distance from the target centroid to the source-centroid mixture hull.

    Projected gradient descent on ||c_T - C eta||^2 over the simplex. The
    problem is rescaled by the largest source-centroid norm so the stated
    step size is stable regardless of the feature scale; the returned gamma
    is in the original units.
    """
    if not sources:
        raise ValueError("need at least one source domain")
    c = np.stack([s.centroid for s in sources], axis=1)  # (d, n)
    t = np.asarray(target.centroid, dtype=np.float64)
    n = c.shape[1]
    scale = max(float(np.max(np.linalg.norm(c, axis=0))), 1e-300)
    ch = c / scale
    th = t / scale
    # descent guarantee needs step <= 1/lambda_max; lambda_max <= n after rescale
    eff_step = min(step, 0.9 / n)
    eta = np.full(n, 1.0 / n)
    converged = False
    iterations = max_iter
    for it in range(max_iter):
        grad = ch.T @ (ch @ eta - th)
        nxt = simplex_project(eta - eff_step * grad)
        if np.abs(nxt - eta).max() < tol:
            eta = nxt
            converged = True
            iterations = it + 1
            break
        eta = nxt
    gamma = float(np.linalg.norm(c @ eta - t))
    return GammaResult(gamma=gamma, eta=eta, converged=converged, iterations=iterations)


def gamma_grid_oracle(target: DomainStyleSummary, sources,
                      resolution: float = 0.01) -> tuple[float, np.ndarray]:
    """Brute-force 3-source check: best eta on a regular simplex grid."""
    if len(sources) != 3:
        raise ValueError("grid oracle implemented for exactly 3 sources")
    c = np.stack([s.centroid for s in sources], axis=1)
    t = target.centroid
    steps = int(round(1.0 / resolution))
    best = (np.inf, None)
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            k = steps - i - j
            eta = np.array([i, j, k], dtype=np.float64) / steps
            g = float(np.linalg.norm(c @ eta - t))
            if g < best[0]:
                best = (g, eta)
    return best


def build_shift_report(target: DomainStyleSummary, sources) -> ShiftReport:
    rho, dist = rho_proxy(sources)
    res = gamma_eta(target, sources)
    return ShiftReport(target=target.name, sources=[s.name for s in sources],
                       rho=rho, gamma=res.gamma, eta=res.eta,
                       distance_matrix=dist, converged=res.converged)


def reports_to_csv(reports, path: str):
    """One row per target: proxy rho, proxy gamma, and the mixture weights."""
    n = max(len(r.eta) for r in reports)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        etas = ",".join(f"eta_{i}" for i in range(n))
        fh.write(f"target,rho_proxy,gamma_proxy,converged,{etas}\n")
        for r in reports:
            vals = ",".join(f"{v:.17g}" for v in r.eta)
            fh.write(f"{r.target},{r.rho:.17g},{r.gamma:.17g},{int(r.converged)},{vals}\n")


def reports_to_text(reports, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("Domain shift diagnostics (style-centroid proxy; values are\n"
                 "centroid distances, not certified divergences)\n\n")
        for r in reports:
            fh.write(f"target {r.target}\n")
            fh.write(f"  sources: {', '.join(r.sources)}\n")
            fh.write(f"  rho (max source-pair shift): {r.rho:.6f}\n")
            fh.write(f"  gamma (target to best source mixture): {r.gamma:.6f}\n")
            eta = ", ".join(f"{v:.4f}" for v in r.eta)
            fh.write(f"  eta*: [{eta}]\n")
            fh.write("  source pair distances:\n")
            for row in r.distance_matrix:
                fh.write("    " + "  ".join(f"{v:8.4f}" for v in row) + "\n")
            fh.write("\n")
