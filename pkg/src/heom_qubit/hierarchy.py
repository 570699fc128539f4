"""Hierarchy index sets and the sparse HEOM generator.

The hierarchy state is stored slot-major as an ``(n_slots, 2, 2)`` complex
array; slot 0 is the physical density matrix. Flattened, slot ``s`` occupies
entries ``4*s .. 4*s+3`` in row-major order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import ContractViolation, ResourceError
from .model import CouplingTable, ModelParams, build_coupling_table

N_DIRECTIONS = 5
DEFAULT_MAX_SLOTS = 3_000_000

try:  # y += A @ x without temporaries
    from scipy.sparse._sparsetools import csr_matvec as _csr_matvec
except ImportError:  # pragma: no cover
    _csr_matvec = None


def count_slots(depth: int, n_active: int = N_DIRECTIONS, truncation: str = "total") -> int:
    """Number of retained indices without enumerating them."""
    if truncation == "total":
        return math.comb(depth + n_active, n_active)
    if truncation == "per_direction":
        return (depth + 1) ** n_active
    raise ValueError(f"unknown truncation {truncation!r}")


def _compositions(total: int, n: int):
    """All n-tuples of non-negative ints summing to ``total``, lexicographic order."""
    if n == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, n - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class HierarchyLayout:
    """Ordered set of retained hierarchy indices.

    Attributes
    ----------
    depth : int
        Truncation depth ``L``.
    indices : ndarray of int, shape (n_slots, 5)
        Multi-indices in graded lexicographic order (slot 0 is the zero index).
    active : tuple of bool
        Directions that may carry a non-zero component.
    truncation : str
        ``"total"`` (sum of components <= L) or ``"per_direction"``
        (every component <= L).
    """

    depth: int
    indices: np.ndarray
    active: tuple
    truncation: str = "total"
    _keys: np.ndarray = field(repr=False, default=None)
    _order: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return self.indices.shape[0]

    @property
    def n_slots(self) -> int:
        return self.indices.shape[0]

    @property
    def levels(self) -> np.ndarray:
        return self.indices.sum(axis=1)

    def _encode(self, idx: np.ndarray) -> np.ndarray:
        base = self.depth + 2
        key = np.zeros(idx.shape[0], dtype=np.int64)
        for k in range(N_DIRECTIONS):
            key = key * base + idx[:, k]
        return key

    def lookup(self, idx) -> np.ndarray:
        """Slot numbers of the rows of ``idx`` (-1 where not retained)."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        out = np.full(idx.shape[0], -1, dtype=np.int64)
        valid = np.all(idx >= 0, axis=1) & np.all(idx <= self.depth, axis=1)
        if not np.any(valid):
            return out
        keys = self._encode(idx[valid])
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        hit = self._keys[pos] == keys
        slots = np.where(hit, self._order[pos], -1)
        out[valid] = slots
        return out

    def position(self, index) -> int:
        """Slot of a single multi-index; raises KeyError if absent."""
        slot = int(self.lookup(np.asarray(index)[None, :])[0])
        if slot < 0:
            raise KeyError(tuple(index))
        return slot

    def neighbours(self, k: int, step: int) -> np.ndarray:
        """Slot of ``m + step*e_k`` for every slot ``m`` (-1 if not retained)."""
        shifted = self.indices.copy()
        shifted[:, k] += step
        return self.lookup(shifted)

    def same_as(self, other: "HierarchyLayout") -> bool:
        return self is other or (
            self.indices.shape == other.indices.shape and np.array_equal(self.indices, other.indices)
        )


def enumerate_indices(
    depth: int,
    *,
    active=None,
    truncation: str = "total",
    max_slots: int = DEFAULT_MAX_SLOTS,
) -> HierarchyLayout:
    """Enumerate the truncated index set.

    Parameters
    ----------
    depth : int
        Truncation depth ``L >= 0``.
    active : sequence of bool, optional
        Directions allowed to be non-zero; inactive components stay 0.
        Defaults to all five directions.
    truncation : {"total", "per_direction"}
    max_slots : int
        Memory budget; exceeding it raises :class:`ResourceError`.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    active = tuple(bool(a) for a in (active if active is not None else (True,) * N_DIRECTIONS))
    if len(active) != N_DIRECTIONS:
        raise ValueError("active must have five entries")
    n_active = sum(active)
    predicted = count_slots(depth, n_active, truncation)
    if predicted > max_slots:
        raise ResourceError(
            f"depth {depth} needs {predicted} slots ({n_active} active directions), budget is {max_slots}",
            predicted,
        )
    act_pos = [k for k in range(N_DIRECTIONS) if active[k]]
    rows = []
    if n_active == 0:
        rows.append((0,) * N_DIRECTIONS)
    else:
        max_level = depth if truncation == "total" else depth * n_active
        for level in range(max_level + 1):
            for comp in _compositions(level, n_active):
                if truncation == "per_direction" and max(comp) > depth:
                    continue
                full = [0] * N_DIRECTIONS
                for k, c in zip(act_pos, comp):
                    full[k] = c
                rows.append(tuple(full))
    indices = np.array(rows, dtype=np.int64).reshape(-1, N_DIRECTIONS)
    layout = HierarchyLayout(depth, indices, active, truncation)
    keys = layout._encode(indices)
    order = np.argsort(keys, kind="stable")
    object.__setattr__(layout, "_keys", keys[order])
    object.__setattr__(layout, "_order", order)
    return layout


@dataclass(eq=False)
class HierarchyState:
    """Stacked auxiliary density matrices for one layout."""

    layout: HierarchyLayout
    data: np.ndarray  # (n_slots, 2, 2) complex

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex).reshape(len(self.layout), 2, 2)

    @classmethod
    def zeros(cls, layout: HierarchyLayout) -> "HierarchyState":
        return cls(layout, np.zeros((len(layout), 2, 2), dtype=complex))

    @property
    def physical(self) -> np.ndarray:
        return self.data[0]

    def vector(self) -> np.ndarray:
        return self.data.reshape(-1)

    def copy(self) -> "HierarchyState":
        return HierarchyState(self.layout, self.data.copy())

    def remap(self, layout: HierarchyLayout) -> "HierarchyState":
        """Same ADMs expressed on another layout; missing slots are zero."""
        if layout.same_as(self.layout):
            return HierarchyState(layout, self.data.copy())
        out = HierarchyState.zeros(layout)
        slots = self.layout.lookup(layout.indices)
        hit = slots >= 0
        out.data[hit] = self.data[slots[hit]]
        return out


@dataclass(frozen=True)
class BlockList:
    """Off-diagonal coupling blocks, one row per (target, source) pair."""

    targets: np.ndarray
    sources: np.ndarray
    directions: np.ndarray
    kinds: np.ndarray  # 0 = lift (source is m + e_k), 1 = drop (source is m - e_k)
    scales: np.ndarray  # 1 for lift, m_k for drop

    def __len__(self):
        return len(self.targets)


@dataclass(frozen=True, eq=False)
class Generator:
    """Sparse linear operator ``dS/dt = G S`` on a hierarchy layout.

    ``matrix`` acts on the flattened state; ``blocks`` and ``diagonal`` keep the
    block structure for inspection. ADMs are bare: drop blocks carry the factor
    ``m_k`` itself, so ADM magnitudes grow like ``sqrt(prod_k m_k!)`` with depth.
    :attr:`scaled_matrix` gives the equivalent operator on ``rho_m / slot_scale``,
    which integrators use to keep every slot O(1).
    """

    layout: HierarchyLayout
    table: CouplingTable
    params: ModelParams
    matrix: sp.csr_matrix
    blocks: BlockList
    diagonal: np.ndarray  # sum_k m_k alpha_k per slot
    @cached_property
    def direction_balance(self) -> np.ndarray:
        """Per-direction factor ``r_k = sqrt(|Phi1_k| / |Phi0_k|)`` (1 if either vanishes).

        Rescaling ADMs by ``r_k**m_k`` gives lift and drop blocks of equal
        norm, which keeps the Gershgorin bound on the spectrum tight.
        """
        r = np.ones(N_DIRECTIONS)
        for k, d in enumerate(self.table.directions):
            lift, drop = np.linalg.norm(d.lift.matrix(), 2), np.linalg.norm(d.drop.matrix(), 2)
            if lift > 0 and drop > 0:
                r[k] = np.sqrt(drop / lift)
        return r

    @cached_property
    def slot_scale(self) -> np.ndarray:
        """``prod_k sqrt(m_k!) r_k**m_k`` per slot; 1 for the physical slot."""
        idx = self.layout.indices
        return np.exp(0.5 * gammaln(idx + 1.0).sum(axis=1) + idx @ np.log(self.direction_balance))

    @cached_property
    def scaled_matrix(self) -> sp.csr_matrix:
        """``D^-1 G D`` with ``D = diag(slot_scale)``: same spectrum, balanced entries.

        Lift blocks become ``r_k sqrt(m_k + 1) Phi0_k`` and drop blocks
        ``sqrt(m_k) Phi1_k / r_k``.
        """
        d = np.repeat(self.slot_scale, 4)
        return (sp.diags(1.0 / d) @ self.matrix @ sp.diags(d)).tocsr()

    @cached_property
    def scaled_norm_bound(self) -> float:
        """Largest absolute row sum of :attr:`scaled_matrix`, an upper bound on its spectral radius."""
        return float(abs(self.scaled_matrix).sum(axis=1).max())

    @property
    def depth(self) -> int:
        return self.layout.depth

    @property
    def shape(self):
        return self.matrix.shape

    def matvec(self, y: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            return self.matrix @ y
        out[:] = 0
        if _csr_matvec is None:  # pragma: no cover
            out += self.matrix @ y
        else:
            m = self.matrix
            _csr_matvec(m.shape[0], m.shape[1], m.indptr, m.indices, m.data, y, out)
        return out


def _coo_block(mat4: np.ndarray, targets, sources, scales):
    """COO entries of ``scale * mat4`` placed at (target, source) for every pair."""
    r, c = np.nonzero(mat4)
    if len(r) == 0 or len(targets) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0, dtype=complex)
    rows = (4 * targets[:, None] + r[None, :]).ravel()
    cols = (4 * sources[:, None] + c[None, :]).ravel()
    vals = (scales[:, None] * mat4[r, c][None, :]).ravel()
    return rows, cols, vals


def assemble_generator(
    params: ModelParams,
    depth: int,
    *,
    truncation: str = "total",
    prune: bool = True,
    max_slots: int = DEFAULT_MAX_SLOTS,
) -> Generator:
    """Assemble the truncated HEOM generator.

    For every slot ``m``: diagonal ``-i H^x + sum_k m_k alpha_k``, a lift block
    ``Phi0_k`` from ``m + e_k`` if that index is retained, and a drop block
    ``m_k Phi1_k`` from ``m - e_k`` if ``m_k > 0``. Indices beyond the
    truncation are treated as zero.

    With ``prune=True`` directions whose superoperators vanish are left out of
    the layout; their ADMs are identically zero so the result is unchanged.
    """
    table = build_coupling_table(params)
    active = tuple(d.active for d in table.directions) if prune else (True,) * N_DIRECTIONS
    layout = enumerate_indices(depth, active=active, truncation=truncation, max_slots=max_slots)
    n = len(layout)
    idx = layout.indices

    H = table.hamiltonian
    free = -1j * (np.kron(H, np.eye(2)) - np.kron(np.eye(2), H.T))
    diagonal = idx.astype(complex) @ table.alphas

    all_rows, all_cols, all_vals = [], [], []
    slots = np.arange(n, dtype=np.int64)
    # free commutator (4x4 per slot) plus the scalar decay on the diagonal
    rows, cols, vals = _coo_block(free, slots, slots, np.ones(n, dtype=complex))
    all_rows.append(rows), all_cols.append(cols), all_vals.append(vals)
    all_rows.append(4 * slots[:, None] + np.arange(4)[None, :])
    all_cols.append(all_rows[-1])
    all_vals.append(np.repeat(diagonal, 4).reshape(n, 4))

    b_t, b_s, b_d, b_k, b_sc = [], [], [], [], []
    for k, direction in enumerate(table.directions):
        if not layout.active[k]:
            continue
        lift = direction.lift.matrix()
        drop = direction.drop.matrix()
        if np.any(lift):
            up = layout.neighbours(k, +1)
            tgt = slots[up >= 0]
            src = up[up >= 0]
            sc = np.ones(len(tgt), dtype=complex)
            rows, cols, vals = _coo_block(lift, tgt, src, sc)
            all_rows.append(rows), all_cols.append(cols), all_vals.append(vals)
            b_t.append(tgt), b_s.append(src), b_d.append(np.full(len(tgt), k)), b_k.append(np.zeros(len(tgt), int))
            b_sc.append(sc)
        if np.any(drop):
            down = layout.neighbours(k, -1)
            tgt = slots[down >= 0]
            src = down[down >= 0]
            sc = idx[tgt, k].astype(complex)
            rows, cols, vals = _coo_block(drop, tgt, src, sc)
            all_rows.append(rows), all_cols.append(cols), all_vals.append(vals)
            b_t.append(tgt), b_s.append(src), b_d.append(np.full(len(tgt), k)), b_k.append(np.ones(len(tgt), int))
            b_sc.append(sc)

    rows = np.concatenate([np.ravel(a) for a in all_rows])
    cols = np.concatenate([np.ravel(a) for a in all_cols])
    vals = np.concatenate([np.ravel(a) for a in all_vals])
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(4 * n, 4 * n))
    matrix.sum_duplicates()
    matrix.eliminate_zeros()

    def _cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    blocks = BlockList(
        _cat(b_t, np.int64), _cat(b_s, np.int64), _cat(b_d, np.int64), _cat(b_k, np.int64), _cat(b_sc, complex)
    )
    return Generator(layout, table, params, matrix, blocks, diagonal)


def apply_generator(gen: Generator, state: HierarchyState, out: HierarchyState | None = None) -> HierarchyState:
    """Time derivative of every slot of ``state``."""
    if not gen.layout.same_as(state.layout):
        raise ContractViolation("state layout does not match the generator layout")
    if out is None:
        return HierarchyState(state.layout, gen.matvec(state.vector()))
    if not gen.layout.same_as(out.layout):
        raise ContractViolation("output layout does not match the generator layout")
    gen.matvec(state.vector(), out.data.reshape(-1))
    return out
