"""Truncated linearized operator T_N(theta, phi) = D(theta, phi) + delta^{2p} H.

Sites are the points of ``[-N, N]^4 x {+, -}`` minus the resonant set,
ordered lexicographically on (sector, n1, n2, j1, j2); the plus sector comes
first.  H is a 2x2 block convolution operator whose kernels depend only on
the state, so T is stored as divisors on the box plus four sparse kernels and
applied matrix-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .divisors import SECTORS, ParamPoint, divisor_grid, resonant_mask
from .errors import NearResonance, NoConvergence, PlusBlockSingular
from .lattice import CoeffField, SectorField, convolve, power

RESONANCE_FLOOR = 1e-12
DENSE_CAP = 6000
SOLVE_TOL = 1e-10

# (row sector, column sector) pairs in block order
BLOCKS = (("+", "+"), ("+", "-"), ("-", "+"), ("-", "-"))


def kernels_for(state: SectorField, p: int) -> dict:
    """The four block kernels of H, without the delta^{2p} factor."""
    u, v = state.plus, state.minus
    uv = convolve(u, v)
    w = power(uv, p)
    lower = power(uv, p - 1)
    return {
        ("+", "+"): w.scale(p + 1),
        ("+", "-"): convolve(convolve(lower, u), u).scale(p),
        ("-", "+"): convolve(convolve(lower, v), v).scale(p),
        ("-", "-"): w.scale(p + 1),
    }


@dataclass
class LinearizedOp:
    N: int
    pt: ParamPoint
    theta: float
    phi: float
    delta2p: float
    kernels: dict
    diag_grid: np.ndarray = field(repr=False)
    site_flat: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def G(self) -> int:
        return 2 * self.N + 1

    @property
    def dim(self) -> int:
        return int(self.site_flat.size)

    @property
    def diag(self) -> np.ndarray:
        if "diag" not in self._cache:
            self._cache["diag"] = self.diag_grid.ravel()[self.site_flat]
        return self._cache["diag"]

    @property
    def sites(self) -> np.ndarray:
        """(dim, 5) integer array: sector index (0 plus, 1 minus), n1, n2, j1, j2."""
        if "sites" not in self._cache:
            self._cache["sites"] = self.sites_of(np.arange(self.dim))
        return self._cache["sites"]

    def sites_of(self, idx) -> np.ndarray:
        flat = self.site_flat[np.asarray(idx, dtype=np.int64)]
        sector, rest = np.divmod(flat, self.G**4)
        coords = np.stack(np.unravel_index(rest, (self.G,) * 4), axis=1) - self.N
        return np.column_stack([sector, coords]).astype(np.int64)

    def site_label(self, i: int) -> tuple:
        s = self.sites_of([i])[0]
        return SECTORS[s[0]], tuple(int(c) for c in s[1:])

    def index_of(self, sector_idx, keys) -> np.ndarray:
        """Site indices of (sector, k) pairs; -1 where outside the box or resonant."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 4)
        sector_idx = np.broadcast_to(np.asarray(sector_idx, dtype=np.int64), (keys.shape[0],))
        inside = np.all(np.abs(keys) <= self.N, axis=1)
        shifted = np.where(inside[:, None], keys + self.N, 0)
        flat = sector_idx * self.G**4 + np.ravel_multi_index(shifted.T, (self.G,) * 4)
        pos = np.searchsorted(self.site_flat, flat)
        pos = np.minimum(pos, self.dim - 1)
        hit = inside & (self.site_flat[pos] == flat)
        return np.where(hit, pos, -1)

    def with_kernels(self, kernels: dict) -> "LinearizedOp":
        return replace(self, kernels=dict(kernels), _cache={})

    # -- application -------------------------------------------------------

    def _couplings(self, cols: np.ndarray):
        """COO triplets (rows, cols, values) of delta^{2p} H restricted to ``cols``."""
        rows_out, cols_out, vals_out = [], [], []
        if self.delta2p == 0.0 or cols.size == 0:
            return (np.zeros(0, np.int64),) * 2 + (np.zeros(0),)
        col_sites = self.sites_of(cols)
        for (rs, cs), kern in self.kernels.items():
            if not len(kern):
                continue
            ri, ci = SECTORS.index(rs), SECTORS.index(cs)
            sel = col_sites[:, 0] == ci
            if not sel.any():
                continue
            src = col_sites[sel, 1:]
            src_idx = cols[sel]
            for d, w in zip(kern.keys, kern.values):
                tgt = self.index_of(ri, src + d)
                ok = tgt >= 0
                rows_out.append(tgt[ok])
                cols_out.append(src_idx[ok])
                vals_out.append(np.full(int(ok.sum()), self.delta2p * w))
        if not rows_out:
            return (np.zeros(0, np.int64),) * 2 + (np.zeros(0),)
        return np.concatenate(rows_out), np.concatenate(cols_out), np.concatenate(vals_out)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """T x, touching only the nonzero entries of x."""
        x = np.asarray(x, dtype=float)
        out = self.diag * x
        nz = np.flatnonzero(x)
        rows, cols, vals = self._couplings(nz)
        if rows.size:
            out += np.bincount(rows, weights=vals * x[cols], minlength=self.dim)
        return out

    def to_sparse(self) -> sp.csr_matrix:
        if "sparse" not in self._cache:
            rows, cols, vals = self._couplings(np.arange(self.dim))
            idx = np.arange(self.dim)
            mat = sp.coo_matrix(
                (np.concatenate([self.diag, vals]), (np.concatenate([idx, rows]), np.concatenate([idx, cols]))),
                shape=(self.dim, self.dim),
            )
            self._cache["sparse"] = mat.tocsr()
        return self._cache["sparse"]

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def component(self, seed_idx: np.ndarray, limit: int) -> np.ndarray | None:
        """Sites coupled to ``seed_idx`` through H (closure), or None if it grows past ``limit``."""
        members = np.unique(np.asarray(seed_idx, dtype=np.int64))
        frontier = members
        while frontier.size:
            rows, _, _ = self._couplings(frontier)
            new = np.setdiff1d(np.unique(rows), members, assume_unique=True)
            members = np.union1d(members, new)
            if members.size > limit:
                return None
            frontier = new
        return members


def assemble(
    N: int,
    pt: ParamPoint,
    state: SectorField,
    theta: float = 0.0,
    phi: float = 0.0,
    *,
    kernels: dict | None = None,
) -> LinearizedOp:
    """Build T_N(theta, phi) evaluated at ``state`` on [-N, N]^4 minus the resonant set."""
    if not state.is_conjugate():
        raise ValueError("state violates the conjugacy constraint minus(k) = plus(-k)")
    pt.require_omega()
    if kernels is None:
        kernels = kernels_for(state, pt.p)
    diag_grid = divisor_grid(N, pt, theta, phi)
    mask = resonant_mask(N, pt.h1, pt.h2)
    site_flat = np.flatnonzero(~mask.ravel())
    return LinearizedOp(
        N=int(N),
        pt=pt,
        theta=float(theta),
        phi=float(phi),
        delta2p=pt.delta2p,
        kernels=kernels,
        diag_grid=diag_grid,
        site_flat=site_flat,
    )


def field_to_vector(op: LinearizedOp, fields: SectorField) -> np.ndarray:
    """Restrict a sector pair to the operator's sites (entries off the box are dropped)."""
    out = np.zeros(op.dim)
    for si, f in enumerate((fields.plus, fields.minus)):
        if not len(f):
            continue
        idx = op.index_of(si, f.keys)
        ok = idx >= 0
        out[idx[ok]] = f.values[ok]
    return out


def vector_to_field(op: LinearizedOp, x: np.ndarray) -> SectorField:
    nz = np.flatnonzero(x)
    sites = op.sites_of(nz)
    parts = []
    for si in (0, 1):
        sel = sites[:, 0] == si
        parts.append(CoeffField(keys=sites[sel, 1:], values=x[nz[sel]]))
    return SectorField(*parts)


def _check_floor(op: LinearizedOp, floor: float):
    if op.dim == 0:
        return
    i = int(np.argmin(np.abs(op.diag)))
    if abs(op.diag[i]) < floor:
        raise NearResonance(op.site_label(i), float(op.diag[i]), floor)


def _direct_solve(op: LinearizedOp, rhs: np.ndarray) -> np.ndarray:
    # T is very sparse (the kernels have a handful of entries), so a sparse LU beats dense
    if "lu" not in op._cache:
        op._cache["lu"] = spla.splu(op.to_sparse().tocsc())
    return op._cache["lu"].solve(rhs)


def _component_solve(op: LinearizedOp, rhs: np.ndarray, dense_cap: int) -> np.ndarray | None:
    comp = op.component(np.flatnonzero(rhs), dense_cap)
    if comp is None:
        return None
    rows, cols, vals = op._couplings(comp)
    pos = np.searchsorted(comp, rows)
    keep = (pos < comp.size) & (comp[np.minimum(pos, comp.size - 1)] == rows)
    sub = np.diag(op.diag[comp])
    np.add.at(sub, (pos[keep], np.searchsorted(comp, cols[keep])), vals[keep])
    x = np.zeros(op.dim)
    x[comp] = np.linalg.solve(sub, rhs[comp])
    return x


def solve(
    op: LinearizedOp,
    rhs: np.ndarray,
    *,
    floor: float = RESONANCE_FLOOR,
    dense_cap: int = DENSE_CAP,
    tol: float = SOLVE_TOL,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve T x = rhs to relative residual ``tol``.

    Operators up to ``dense_cap`` sites are factorized directly (sparse LU).  Larger ones use a Jacobi
    residual-correction iteration with matrix-free kernel application; if it
    stalls, the system is solved densely on the H-coupled component of the
    right-hand side, which T leaves invariant.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (op.dim,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({op.dim},)")
    _check_floor(op, floor)
    rnorm = np.linalg.norm(rhs)
    if rnorm == 0.0:
        return np.zeros(op.dim)

    if op.dim <= dense_cap:
        x = _direct_solve(op, rhs)
    else:
        x = rhs / op.diag
        best = np.inf
        slow = 0
        for _ in range(max_iter):
            r = rhs - op.matvec(x)
            res = np.linalg.norm(r)
            if res <= tol * rnorm:
                return x
            slow = slow + 1 if res > 0.5 * best else 0
            best = min(best, res)
            if slow >= 3 or not np.isfinite(res):
                break
            x = x + r / op.diag
        x = _component_solve(op, rhs, dense_cap)
        if x is None:
            raise NoConvergence(
                f"residual-correction iteration stalled and the coupled component exceeds {dense_cap} sites"
            )
    res = np.linalg.norm(rhs - op.matvec(x))
    if not res <= tol * rnorm:
        raise NoConvergence(f"linear solve reached only relative residual {res / rnorm:.2e}")
    return x


class GreenDecay(NamedTuple):
    beta: float
    opnorm_inv: float
    fit_residual: float


def green_decay(op: LinearizedOp, *, dense_cap: int = DENSE_CAP, max_columns: int = 400, **solve_kw) -> GreenDecay:
    """Exponential off-diagonal decay rate of T_N^{-1} and its operator norm.

    The per-distance envelope max |T^{-1}(k, k')| over |k - k'|_inf = d is
    fitted as exp(c - beta d) for d > N/10.  ``fit_residual`` is the RMS
    deviation of the fit relative to the RMS of log-envelope values.
    """
    if op.dim <= dense_cap:
        dense = op.to_dense()
        inv = np.linalg.inv(dense)
        eig = np.linalg.eigvalsh(0.5 * (dense + dense.T))
        opnorm = float(1.0 / np.abs(eig).min())
        cols = np.arange(op.dim)
    else:
        rng = np.random.default_rng(0)
        cols = np.sort(rng.choice(op.dim, size=min(max_columns, op.dim), replace=False))
        inv_cols = []
        for c in cols:
            e = np.zeros(op.dim)
            e[c] = 1.0
            inv_cols.append(solve(op, e, dense_cap=dense_cap, **solve_kw))
        inv = np.column_stack(inv_cols)
        opnorm = float(np.abs(inv).sum(axis=0).max())
    lattice = op.sites[:, 1:]
    dist = np.abs(lattice[:, None, :] - lattice[None, cols, :]).max(axis=2)
    mag = np.abs(inv)
    far = dist > op.N / 10.0
    envelope = {}
    for d in np.unique(dist[far]):
        sel = (dist == d) & (mag > 0)
        if sel.any():
            envelope[int(d)] = float(mag[sel].max())
    if len(envelope) < 2:
        return GreenDecay(np.inf, opnorm, 0.0)
    d = np.array(sorted(envelope), dtype=float)
    y = np.log([envelope[int(k)] for k in d])
    slope, intercept = np.polyfit(d, y, 1)
    res = y - (intercept + slope * d)
    fit_residual = float(np.sqrt(np.mean(res**2)) / np.sqrt(np.mean(y**2)))
    return GreenDecay(float(-slope), opnorm, fit_residual)


def schur_effective(op: LinearizedOp, *, floor: float = RESONANCE_FLOOR) -> np.ndarray:
    """Effective minus-sector matrix T_mm - T_mp T_pp^{-1} T_pm."""
    dense = op.to_dense()
    plus = op.sites[:, 0] == 0
    minus = ~plus
    t_pp = dense[np.ix_(plus, plus)]
    t_pm = dense[np.ix_(plus, minus)]
    t_mp = dense[np.ix_(minus, plus)]
    t_mm = dense[np.ix_(minus, minus)]
    if t_pp.size:
        eig = np.linalg.eigvalsh(0.5 * (t_pp + t_pp.T))
        if np.abs(eig).min() < floor:
            raise PlusBlockSingular(f"plus block has eigenvalue {np.abs(eig).min():.2e} below {floor:.1e}")
    if not np.any(t_mp) or not np.any(t_pm):
        return t_mm.copy()
    return t_mm - t_mp @ np.linalg.solve(t_pp, t_pm)


def dump_triplets(op: LinearizedOp, path) -> None:
    """Write the operator as 'row col value' lines (0-based site indices)."""
    mat = op.to_sparse().tocoo()
    order = np.lexsort((mat.col, mat.row))
    with open(path, "w") as fh:
        fh.write(f"# dim={op.dim} N={op.N} site order: (sector, n1, n2, j1, j2) lexicographic\n")
        for r, c, v in zip(mat.row[order], mat.col[order], mat.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")
