"""Model-based camera pair selection.

Every ordered pair (i, j) is scored on the initial mesh by four terms, each
in [-1, 0] with -1 best:

* parallax: mean angle at the surface between the two viewing rays,
  rewarded near a reference angle;
* overlap: fraction of image i where j sees the same surface;
* symmetry: mean oriented angle difference of the two rays w.r.t. the
  surface normal, rewarded near zero;
* resolution: mean normalised difference of the focal-scaled distances.

Each camera first takes its best-scoring partner.  Partners are then swapped
one camera at a time when the swap raises the mean facet coverage, lowers
its spread, and keeps the summed pair energy within a budget of the initial
total.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._parallel import parallel_map
from .errors import InvalidParams
from .geometry import CameraView, TriMesh
from .raster import ReprojectionField, facet_visibility, render_depth, reproject

logger = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    ref_parallax: float = 50.0
    sigma_p: float = 45.0
    sigma_s: float = 45.0
    sigma_r: float = 0.25
    weights: tuple = (0.25, 0.25, 0.5, 0.25)   # parallax, overlap, symmetry, resolution
    energy_budget: float = 0.10
    visibility_min_fraction: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_s, self.sigma_r) <= 0:
            raise InvalidParams("sigmas must be positive")
        if len(self.weights) != 4 or min(self.weights) < 0:
            raise InvalidParams("weights must be four non-negative numbers")
        if not 0.0 <= self.energy_budget < 1.0:
            raise InvalidParams("energy_budget must lie in [0, 1)")


@dataclass
class PairEnergy:
    e_parallax: float = 0.0
    e_overlap: float = 0.0
    e_symmetry: float = 0.0
    e_resolution: float = 0.0
    e_total: float = 0.0
    parallax_deg: float = float("nan")
    oad_deg: float = float("nan")
    resdisc: float = float("nan")
    overlap: float = 0.0
    empty: bool = False


def gaussian_energy(value, target, sigma):
    return -float(np.exp(-((value - target) ** 2) / (2.0 * sigma**2)))


def _angle_deg(a, b):
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    c = np.einsum("...k,...k->...", a, b) / (na * nb)
    return np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))


def _focal(cam: CameraView) -> float:
    return 0.5 * (cam.fx + cam.fy)


def parallax_angles(points, c_i, c_j):
    """Angle at each point between the rays towards the two camera centres (degrees)."""
    return _angle_deg(c_i - points, c_j - points)


def parallax_energy(mesh, cam_i, cam_j, depth_i, omega: ReprojectionField,
                    config: SelectionConfig | None = None):
    """Mean parallax over the domain and its energy; ``(nan, 0.0)`` when empty."""
    config = config or SelectionConfig()
    x = omega.surface_point[omega.domain_mask]
    if len(x) == 0:
        return float("nan"), 0.0
    P = float(parallax_angles(x, cam_i.center, cam_j.center).mean())
    return P, gaussian_energy(P, config.ref_parallax, config.sigma_p)


def resolution_discrepancy(points, cam_i, cam_j):
    li = np.linalg.norm(points - cam_i.center, axis=-1)
    lj = np.linalg.norm(points - cam_j.center, axis=-1)
    rho_i = li / _focal(cam_i)
    rho_j = lj / _focal(cam_j)
    return np.abs(rho_i - rho_j) / li


def resolution_energy(mesh, cam_i, cam_j, omega: ReprojectionField,
                      config: SelectionConfig | None = None):
    config = config or SelectionConfig()
    x = omega.surface_point[omega.domain_mask]
    if len(x) == 0:
        return float("nan"), 0.0
    R = float(resolution_discrepancy(x, cam_i, cam_j).mean())
    return R, gaussian_energy(R, 0.0, config.sigma_r)


def overlap_energy(omega: ReprojectionField, cam_i: CameraView) -> float:
    return -omega.area / float(cam_i.width * cam_i.height)


def oriented_angle_difference(points, normals, c_i, c_j):
    """Signed half-difference of the ray/normal angles (degrees).

    The sign is +1 when both rays lie on the same side of the plane through
    the point that contains the normal (judged by their tangential parts),
    -1 otherwise.
    """
    vi = c_i - points
    vj = c_j - points
    ai = _angle_deg(vi, normals)
    aj = _angle_deg(vj, normals)
    ti = vi - np.einsum("...k,...k->...", vi, normals)[..., None] * normals
    tj = vj - np.einsum("...k,...k->...", vj, normals)[..., None] * normals
    sign = np.where(np.einsum("...k,...k->...", ti, tj) >= 0.0, 1.0, -1.0)
    return sign * 0.5 * (ai - aj)


def symmetry_energy(mesh, cam_i, cam_j, omega: ReprojectionField,
                    config: SelectionConfig | None = None):
    config = config or SelectionConfig()
    m = omega.domain_mask
    x = omega.surface_point[m]
    if len(x) == 0:
        return float("nan"), 0.0
    n = mesh.face_normals[omega.face_id[m]]
    S = float(oriented_angle_difference(x, n, cam_i.center, cam_j.center).mean())
    return S, gaussian_energy(S, 0.0, config.sigma_s)


def combine(e_p, e_o, e_s, e_r, weights=(0.25, 0.25, 0.5, 0.25)) -> float:
    m1, m2, m3, m4 = weights
    return m1 * e_p + m2 * e_o + m3 * e_s + m4 * e_r


def pair_energy(mesh: TriMesh, cam_i: CameraView, cam_j: CameraView, depth_i, depth_j,
                config: SelectionConfig | None = None, omega=None) -> PairEnergy:
    config = config or SelectionConfig()
    if omega is None:
        omega = reproject(mesh, cam_i, cam_j, depth_i, depth_j)
    if omega.area == 0:
        return PairEnergy(empty=True)
    P, e_p = parallax_energy(mesh, cam_i, cam_j, depth_i, omega, config)
    R, e_r = resolution_energy(mesh, cam_i, cam_j, omega, config)
    S, e_s = symmetry_energy(mesh, cam_i, cam_j, omega, config)
    e_o = overlap_energy(omega, cam_i)
    return PairEnergy(e_p, e_o, e_s, e_r, combine(e_p, e_o, e_s, e_r, config.weights),
                      P, S, R, -e_o)


# ---------------------------------------------------------------------------
# coverage and Algorithm-1 style perturbation
# ---------------------------------------------------------------------------

def coverage_counts(visibility, pairs) -> np.ndarray:
    """Per-facet count of selected pairs that see the facet from both cameras."""
    vis = np.asarray(visibility, bool)
    V = np.zeros(vis.shape[1], dtype=np.int64)
    for i, j in pairs:
        V += vis[i] & vis[j]
    return V


def coverage_stats(visibility, pairs):
    """Mean and population standard deviation of facet coverage."""
    V = coverage_counts(visibility, pairs)
    if len(V) == 0:
        return 0.0, 0.0
    return float(V.mean()), float(V.std())


def _exact_moments(V):
    # integer sums so that swap comparisons are free of rounding
    n = len(V)
    s = int(V.sum())
    return s, n * int((V * V).sum()) - s * s


@dataclass
class SwapRecord:
    ref: int
    old_partner: int
    new_partner: int
    mu_before: float
    mu_after: float
    sigma_before: float
    sigma_after: float
    energy_after: float
    within_budget: bool
    accepted: bool


@dataclass
class PairSet:
    pairs: list
    energies: list
    coverage_mu: float
    coverage_sigma: float
    init_pairs: list = field(default_factory=list)
    init_mu: float = 0.0
    init_sigma: float = 0.0
    init_energy: float = 0.0
    total_energy: float = 0.0
    swap_log: list = field(default_factory=list)
    flagged: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)

    @property
    def budget_used(self) -> float:
        """Fraction of the initial total energy magnitude given up."""
        if self.init_energy == 0:
            return 0.0
        return 1.0 - abs(self.total_energy) / abs(self.init_energy)

    def to_dict(self) -> dict:
        rows = []
        for (i, j), e in zip(self.pairs, self.energies):
            rows.append({
                "ref": int(i), "partner": int(j), "e_total": e.e_total,
                "e_p": e.e_parallax, "e_o": e.e_overlap, "e_s": e.e_symmetry,
                "e_r": e.e_resolution, "parallax_deg": _num(e.parallax_deg),
                "overlap": e.overlap, "oad_deg": _num(e.oad_deg), "resdisc": _num(e.resdisc),
            })
        return {
            "pairs": rows,
            "coverage": {"mu": self.coverage_mu, "sigma": self.coverage_sigma},
            "initial": {"pairs": [[int(i), int(j)] for i, j in self.init_pairs],
                        "mu": self.init_mu, "sigma": self.init_sigma,
                        "energy": self.init_energy},
            "total_energy": self.total_energy,
            "swap_log": [asdict(s) for s in self.swap_log],
            "flagged": [int(i) for i in self.flagged],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d) -> "PairSet":
        pairs, energies = [], []
        for row in d["pairs"]:
            pairs.append((int(row["ref"]), int(row["partner"])))
            energies.append(PairEnergy(row.get("e_p", 0.0), row.get("e_o", 0.0),
                                       row.get("e_s", 0.0), row.get("e_r", 0.0),
                                       row.get("e_total", 0.0),
                                       _denum(row.get("parallax_deg")), _denum(row.get("oad_deg")),
                                       _denum(row.get("resdisc")), row.get("overlap", 0.0)))
        cov = d.get("coverage", {})
        init = d.get("initial", {})
        return cls(pairs, energies, cov.get("mu", 0.0), cov.get("sigma", 0.0),
                   [tuple(p) for p in init.get("pairs", [])], init.get("mu", 0.0),
                   init.get("sigma", 0.0), init.get("energy", 0.0),
                   d.get("total_energy", 0.0),
                   [SwapRecord(**s) for s in d.get("swap_log", [])],
                   d.get("flagged", []))


def _num(x):
    return None if x is None or not np.isfinite(x) else float(x)


def _denum(x):
    return float("nan") if x is None else float(x)


def _best(E, i, exclude):
    best = None
    for j in range(E.shape[1]):
        if j == i or j in exclude:
            continue
        if best is None or E[i, j] < E[i, best]:
            best = j
    return best


def perturb_pairs(energy, visibility, budget: float = 0.10):
    """Greedy initial pairing followed by coverage-improving swaps.

    ``energy[i, j]`` is the pair energy (diagonal ignored) and
    ``visibility[c]`` the per-facet visibility of camera ``c``.  Returns
    ``(initial_partners, final_partners, swap_log)``.
    """
    E = np.asarray(energy, float)
    vis = np.asarray(visibility, bool)
    N = E.shape[0]
    if N < 2:
        raise InvalidParams("need at least two cameras")
    init = [_best(E, i, ()) for i in range(N)]
    cur = list(init)
    e_init = sum(E[i, cur[i]] for i in range(N))
    e_tot = e_init
    floor_mag = (1.0 - budget) * abs(e_init)
    used = [set() for _ in range(N)]
    V = coverage_counts(vis, enumerate(cur))
    s, var = _exact_moments(V)
    nf = max(len(V), 1)
    log = []
    changed = True
    while changed:
        changed = False
        for i in range(N):
            j_old = cur[i]
            j_new = _best(E, i, used[i] | {j_old})
            if j_new is None:
                continue
            Vt = V - (vis[i] & vis[j_old]) + (vis[i] & vis[j_new])
            st, vart = _exact_moments(Vt)
            e_t = e_tot - E[i, j_old] + E[i, j_new]
            within = abs(e_t) >= floor_mag
            ok = st > s and vart < var and within
            log.append(SwapRecord(i, j_old, j_new, s / nf, st / nf,
                                  float(np.sqrt(max(var, 0))) / nf,
                                  float(np.sqrt(max(vart, 0))) / nf,
                                  float(e_t), bool(within), bool(ok)))
            if ok:
                cur[i] = j_new
                used[i].add(j_new)
                V, s, var, e_tot = Vt, st, vart, e_t
                changed = True
    return init, cur, log


def select_pairs(mesh: TriMesh, cameras, config: SelectionConfig | None = None,
                 depths=None) -> PairSet:
    """Choose one partner camera per reference camera."""
    config = config or SelectionConfig()
    N = len(cameras)
    if N < 2:
        raise InvalidParams("pair selection needs at least two cameras")
    if depths is None:
        depths = [render_depth(mesh, c) for c in cameras]
    vis = np.stack([facet_visibility(mesh, c, d, config.visibility_min_fraction)
                    for c, d in zip(cameras, depths)])
    for i in np.flatnonzero(~vis.any(axis=1)):
        logger.warning("camera %d sees no facet of the mesh", i)

    jobs = [(i, j) for i in range(N) for j in range(N) if i != j]
    res = parallel_map(lambda p: pair_energy(mesh, cameras[p[0]], cameras[p[1]],
                                     depths[p[0]], depths[p[1]], config),
               jobs, config.threads)
    table = {p: r for p, r in zip(jobs, res)}
    E = np.zeros((N, N))
    for (i, j), r in table.items():
        E[i, j] = r.e_total

    flagged = [i for i in range(N) if all(table[(i, j)].empty for j in range(N) if j != i)]
    for i in flagged:
        logger.warning("camera %d has no visible overlap with any other camera", i)

    init, final, log = perturb_pairs(E, vis, config.energy_budget)
    init_pairs = list(enumerate(init))
    pairs = list(enumerate(final))
    mu0, s0 = coverage_stats(vis, init_pairs)
    mu, s = coverage_stats(vis, pairs)
    return PairSet(pairs, [table[p] for p in pairs], mu, s, init_pairs, mu0, s0,
                   float(sum(E[i, j] for i, j in init_pairs)),
                   float(sum(E[i, j] for i, j in pairs)), log, flagged)
