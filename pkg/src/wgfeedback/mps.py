"""Matrix-product state for a two-level system embedded in a chain of time bins.

Site tensors have axes (left bond, physical, right bond). The chain keeps an
orthogonality center so two-site updates truncate optimally, and it tracks
which physical object (system or labeled time bin) lives at every position,
since the feedback evolution permutes sites heavily.

The chain can optionally carry an excitation-number label on every bond
index (the step unitaries conserve the total excitation count). In that mode
gauge moves and SVD splits act per charge sector, which keeps the LAPACK
calls small; truncation decisions are still made on the globally sorted
spectrum, so the kept set matches the dense rule.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import InvariantError, TensorShapeError
from .tensor import Array, TruncationPolicy, EXACT, _svd_matrix, truncation_rank

SYSTEM = ("system",)

# Entries of a gate smaller than this (relative to its largest) count as
# structural zeros when checking excitation conservation.
GATE_ZERO_TOL = 1e-12


def bin_label(index: int) -> tuple:
    return ("bin", index)


def _system_tensor(c_g: complex, c_e: complex) -> Array:
    t = np.zeros((1, 2, 1), dtype=complex)
    t[0, 0, 0] = c_g
    t[0, 1, 0] = c_e
    return t


def _vacuum_tensor(p: int) -> Array:
    t = np.zeros((1, p, 1), dtype=complex)
    t[0, 0, 0] = 1.0
    return t


class MpsChain:
    """Open-boundary MPS with labeled sites and an orthogonality center."""

    def __init__(
        self,
        tensors: list,
        labels: list,
        site_charges: Optional[list] = None,
        bond_charges: Optional[list] = None,
        center: int = 0,
    ):
        if len(tensors) != len(labels):
            raise TensorShapeError("one label per site required")
        if not tensors:
            raise InvariantError("chain needs at least one site")
        for i, t in enumerate(tensors):
            if t.ndim != 3:
                raise TensorShapeError(f"site {i} tensor must have 3 axes, got {t.ndim}")
        if tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1:
            raise InvariantError("boundary bonds must have extent 1")
        for i in range(len(tensors) - 1):
            if tensors[i].shape[2] != tensors[i + 1].shape[0]:
                raise TensorShapeError(
                    f"bond mismatch between sites {i} and {i + 1}: "
                    f"{tensors[i].shape[2]} vs {tensors[i + 1].shape[0]}"
                )
        if (site_charges is None) != (bond_charges is None):
            raise InvariantError("charged mode needs both site and bond charge labels")
        self.tensors = tensors
        self.labels = list(labels)
        self.site_charges = site_charges
        self.bond_charges = bond_charges
        self.center = center
        self.discarded_total = 0.0
        self._rebuild_index()

    # -- bookkeeping ----------------------------------------------------

    def _rebuild_index(self):
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self._index) != len(self.labels):
            raise InvariantError("site labels must be unique")

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    @property
    def charged(self) -> bool:
        return self.bond_charges is not None

    @property
    def logical_order(self) -> list:
        """Labels in chain order (position -> physical identity)."""
        return list(self.labels)

    def position_of(self, label) -> int:
        return self._index[label]

    def bond_profile(self) -> list:
        """Bond extents in chain order, boundaries included."""
        return [self.tensors[0].shape[0]] + [t.shape[2] for t in self.tensors]

    def max_bond(self) -> int:
        return max(self.bond_profile())

    def norm_sq(self) -> float:
        t = self.tensors[self.center]
        return float(np.vdot(t, t).real)

    def copy(self) -> "MpsChain":
        ch = MpsChain.__new__(MpsChain)
        ch.tensors = [t.copy() for t in self.tensors]
        ch.labels = list(self.labels)
        ch.site_charges = None if self.site_charges is None else [q.copy() for q in self.site_charges]
        ch.bond_charges = None if self.bond_charges is None else [q.copy() for q in self.bond_charges]
        ch.center = self.center
        ch.discarded_total = self.discarded_total
        ch._rebuild_index()
        return ch

    # -- gauge ----------------------------------------------------------

    def _qr_right(self, pos: int):
        """Make site pos left-isometric, pushing weight into pos + 1."""
        t = self.tensors[pos]
        dl, d, dr = t.shape
        mat = t.reshape(dl * d, dr)
        if not self.charged:
            q, r = np.linalg.qr(mat)
            new = q.shape[1]
        else:
            rows = (self.bond_charges[pos][:, None] + self.site_charges[pos][None, :]).reshape(-1)
            cols = self.bond_charges[pos + 1]
            q, r, new_charges = _blocked_qr(mat, rows, cols)
            self.bond_charges[pos + 1] = new_charges
            new = q.shape[1]
        self.tensors[pos] = q.reshape(dl, d, new)
        self.tensors[pos + 1] = np.tensordot(r, self.tensors[pos + 1], axes=(1, 0))

    def _qr_left(self, pos: int):
        """Make site pos right-isometric, pushing weight into pos - 1."""
        t = self.tensors[pos]
        dl, d, dr = t.shape
        mat = t.reshape(dl, d * dr)
        if not self.charged:
            qh, rh = np.linalg.qr(mat.conj().T)
            l_fac = rh.conj().T
            q = qh.conj().T
            new = q.shape[0]
        else:
            rows = self.bond_charges[pos]
            cols = (self.bond_charges[pos + 1][None, :] - self.site_charges[pos][:, None]).reshape(-1)
            qt, rt, new_charges = _blocked_qr(mat.conj().T, cols, rows)
            l_fac = rt.conj().T
            q = qt.conj().T
            self.bond_charges[pos] = new_charges
            new = q.shape[0]
        self.tensors[pos] = q.reshape(new, d, dr)
        self.tensors[pos - 1] = np.tensordot(self.tensors[pos - 1], l_fac, axes=(2, 0))

    def move_center_to(self, pos: int):
        if not 0 <= pos < self.n_sites:
            raise InvariantError(f"center target {pos} outside chain of {self.n_sites} sites")
        while self.center < pos:
            self._qr_right(self.center)
            self.center += 1
        while self.center > pos:
            self._qr_left(self.center)
            self.center -= 1

    def check_gauge(self, tol: float = 1e-10) -> float:
        """Largest deviation from the isometry conditions away from the center."""
        worst = 0.0
        for i, t in enumerate(self.tensors):
            dl, d, dr = t.shape
            if i < self.center:
                mat = t.reshape(dl * d, dr)
                dev = np.abs(mat.conj().T @ mat - np.eye(dr)).max()
            elif i > self.center:
                mat = t.reshape(dl, d * dr)
                dev = np.abs(mat @ mat.conj().T - np.eye(dl)).max()
            else:
                continue
            worst = max(worst, float(dev))
        if worst > tol:
            raise InvariantError(f"gauge audit failed: deviation {worst:.3e} exceeds {tol:.1e}")
        return worst

    def check_charges(self, tol: float = 0.0) -> float:
        """Largest tensor entry living outside its charge sector."""
        if not self.charged:
            return 0.0
        worst = 0.0
        for pos, t in enumerate(self.tensors):
            valid = (
                self.bond_charges[pos][:, None, None]
                + self.site_charges[pos][None, :, None]
                == self.bond_charges[pos + 1][None, None, :]
            )
            off = np.abs(np.where(valid, 0.0, t)).max() if t.size else 0.0
            worst = max(worst, float(off))
        if worst > tol:
            raise InvariantError(f"charge labels violated: off-sector weight {worst:.3e}")
        return worst

    # -- two-site updates -------------------------------------------------

    def _theta(self, pos: int) -> Array:
        if not 0 <= pos < self.n_sites - 1:
            raise InvariantError(f"no site pair at position {pos}")
        if self.center < pos:
            self.move_center_to(pos)
        elif self.center > pos + 1:
            self.move_center_to(pos + 1)
        t1 = self.tensors[pos]
        t2 = self.tensors[pos + 1]
        dl, d1, k = t1.shape
        d2, dr = t2.shape[1], t2.shape[2]
        # reshape + matmul; tensordot's axis bookkeeping dominates at bond
        # dimensions this small
        return (t1.reshape(dl * d1, k) @ t2.reshape(k, d2 * dr)).reshape(dl, d1, d2, dr)

    def _set_pair(self, pos, theta, d1, d2, q1, q2, policy, center_side) -> float:
        """Split a two-site block and write it back; returns discarded weight."""
        dl, dr = theta.shape[0], theta.shape[3]
        mat = theta.reshape(dl * d1, d2 * dr)
        if not self.charged:
            u, s, vh, discarded = _truncated_svd(mat, policy)
        else:
            rows = (self.bond_charges[pos][:, None] + q1[None, :]).reshape(-1)
            cols = (self.bond_charges[pos + 2][None, :] - q2[:, None]).reshape(-1)
            u, s, vh, discarded, new_charges = _blocked_svd(mat, rows, cols, policy)
            self.bond_charges[pos + 1] = new_charges
        if center_side == "right":
            left = u
            right = (s[:, None] * vh)
            self.center = pos + 1
        elif center_side == "left":
            left = u * s[None, :]
            right = vh
            self.center = pos
        else:
            raise InvariantError(f"center_side must be 'left' or 'right', got {center_side!r}")
        k = s.shape[0]
        self.tensors[pos] = left.reshape(dl, d1, k)
        self.tensors[pos + 1] = right.reshape(k, d2, dr)
        self.discarded_total += discarded
        return discarded

    def apply_two_site(self, pos: int, gate: Array, policy: TruncationPolicy = EXACT,
                       center_side: str = "right") -> float:
        """Apply a unitary on sites (pos, pos + 1) and re-split with truncation.

        The gate is a (d1*d2, d1*d2) matrix in the product basis of the two
        local spaces (left site index slow). Returns the discarded weight.
        """
        d1 = self.tensors[pos].shape[1]
        d2 = self.tensors[pos + 1].shape[1]
        gate = np.asarray(gate)
        if gate.shape != (d1 * d2, d1 * d2):
            raise TensorShapeError(
                f"gate shape {gate.shape} does not match local dims ({d1}, {d2})"
            )
        dev = np.abs(gate.conj().T @ gate - np.eye(d1 * d2)).max()
        if dev > 1e-10:
            raise InvariantError(f"gate is not unitary: max |U^dag U - 1| = {dev:.3e}")
        if self.charged:
            _check_gate_charge(gate, self.site_charges[pos], self.site_charges[pos + 1])
        theta = self._theta(pos)
        g4 = gate.reshape(d1, d2, d1, d2)
        theta = np.tensordot(theta, g4, axes=((1, 2), (2, 3))).transpose(0, 2, 3, 1)
        q1 = self.site_charges[pos] if self.charged else None
        q2 = self.site_charges[pos + 1] if self.charged else None
        return self._set_pair(pos, theta, d1, d2, q1, q2, policy, center_side)

    def apply_three_site(self, pos: int, gate: Array, policy: TruncationPolicy = EXACT,
                         center_side: str = "middle") -> float:
        """Apply a unitary on sites (pos, pos+1, pos+2) and re-split in place.

        The gate is a square matrix in the product basis of the three local
        spaces (leftmost index slowest). Both internal bonds are re-split
        with truncation; center_side picks which of the three sites ends up
        holding the center ("left", "middle" or "right"). Returns the total
        discarded weight.

        Equivalent to fuse/apply/split but without restructuring the chain,
        which matters because the stepper funnels every gate through here.
        """
        if not 0 <= pos < self.n_sites - 2:
            raise InvariantError(f"no site triple at position {pos}")
        d1 = self.tensors[pos].shape[1]
        d2 = self.tensors[pos + 1].shape[1]
        d3 = self.tensors[pos + 2].shape[1]
        dd = d1 * d2 * d3
        gate = np.asarray(gate)
        if gate.shape != (dd, dd):
            raise TensorShapeError(
                f"gate shape {gate.shape} does not match local dims ({d1}, {d2}, {d3})"
            )
        dev = np.abs(gate.conj().T @ gate - np.eye(dd)).max()
        if dev > 1e-10:
            raise InvariantError(f"gate is not unitary: max |U^dag U - 1| = {dev:.3e}")
        if self.charged:
            q12 = (self.site_charges[pos][:, None] + self.site_charges[pos + 1][None, :]).reshape(-1)
            _check_gate_charge(gate, q12, self.site_charges[pos + 2])
        if self.center < pos:
            self.move_center_to(pos)
        elif self.center > pos + 2:
            self.move_center_to(pos + 2)
        t1 = self.tensors[pos]
        t2 = self.tensors[pos + 1]
        t3 = self.tensors[pos + 2]
        dl = t1.shape[0]
        dr = t3.shape[2]
        theta = (t1.reshape(dl * d1, -1) @ t2.reshape(t2.shape[0], -1)).reshape(dl * d1 * d2, -1)
        theta = (theta @ t3.reshape(t3.shape[0], -1)).reshape(dl, dd, dr)
        theta = np.matmul(gate, theta)  # batched over the left bond
        if center_side == "left":
            return self._split_triple_leftward(pos, theta, d1, d2, d3, dl, dr, policy)
        if center_side not in ("middle", "right"):
            raise InvariantError(
                f"center_side must be 'left', 'middle' or 'right', got {center_side!r}"
            )
        q = self.site_charges
        if not self.charged:
            u, s, vh, disc1 = _truncated_svd(theta.reshape(dl * d1, d2 * d3 * dr), policy)
        else:
            rows = (self.bond_charges[pos][:, None] + q[pos][None, :]).reshape(-1)
            q23 = (q[pos + 1][:, None] + q[pos + 2][None, :]).reshape(-1)
            cols = (self.bond_charges[pos + 3][None, :] - q23[:, None]).reshape(-1)
            u, s, vh, disc1, new_q = _blocked_svd(
                theta.reshape(dl * d1, d2 * d3 * dr), rows, cols, policy
            )
            self.bond_charges[pos + 1] = new_q
        k1 = s.shape[0]
        self.tensors[pos] = u.reshape(dl, d1, k1)
        rest = (s[:, None] * vh).reshape(k1 * d2, d3 * dr)
        if not self.charged:
            u2, s2, vh2, disc2 = _truncated_svd(rest, policy)
        else:
            rows2 = (self.bond_charges[pos + 1][:, None] + q[pos + 1][None, :]).reshape(-1)
            cols2 = (self.bond_charges[pos + 3][None, :] - q[pos + 2][:, None]).reshape(-1)
            u2, s2, vh2, disc2, new_q2 = _blocked_svd(rest, rows2, cols2, policy)
            self.bond_charges[pos + 2] = new_q2
        k2 = s2.shape[0]
        if center_side == "right":
            self.tensors[pos + 1] = u2.reshape(k1, d2, k2)
            self.tensors[pos + 2] = (s2[:, None] * vh2).reshape(k2, d3, dr)
            self.center = pos + 2
        else:
            self.tensors[pos + 1] = (u2 * s2[None, :]).reshape(k1, d2, k2)
            self.tensors[pos + 2] = vh2.reshape(k2, d3, dr)
            self.center = pos + 1
        self.discarded_total += disc1 + disc2
        return disc1 + disc2

    def _split_triple_leftward(self, pos, theta, d1, d2, d3, dl, dr, policy) -> float:
        """Right-to-left splitting order so the center can land on site pos."""
        q = self.site_charges
        if not self.charged:
            u, s, vh, disc1 = _truncated_svd(theta.reshape(dl * d1 * d2, d3 * dr), policy)
        else:
            q12 = (self.bond_charges[pos][:, None] + q[pos][None, :]).reshape(-1)
            rows = (q12[:, None] + q[pos + 1][None, :]).reshape(-1)
            cols = (self.bond_charges[pos + 3][None, :] - q[pos + 2][:, None]).reshape(-1)
            u, s, vh, disc1, new_q = _blocked_svd(
                theta.reshape(dl * d1 * d2, d3 * dr), rows, cols, policy
            )
            self.bond_charges[pos + 2] = new_q
        k2 = s.shape[0]
        self.tensors[pos + 2] = vh.reshape(k2, d3, dr)
        rest = (u * s[None, :]).reshape(dl * d1, d2 * k2)
        if not self.charged:
            u2, s2, vh2, disc2 = _truncated_svd(rest, policy)
        else:
            rows2 = (self.bond_charges[pos][:, None] + q[pos][None, :]).reshape(-1)
            cols2 = (self.bond_charges[pos + 2][None, :] - q[pos + 1][:, None]).reshape(-1)
            u2, s2, vh2, disc2, new_q2 = _blocked_svd(rest, rows2, cols2, policy)
            self.bond_charges[pos + 1] = new_q2
        k1 = s2.shape[0]
        self.tensors[pos] = (u2 * s2[None, :]).reshape(dl, d1, k1)
        self.tensors[pos + 1] = vh2.reshape(k1, d2, k2)
        self.center = pos
        self.discarded_total += disc1 + disc2
        return disc1 + disc2

    def swap_sites(self, pos: int, policy: TruncationPolicy = EXACT,
                   center_side: str = "right") -> float:
        """Exchange the physical contents of sites pos and pos + 1.

        Realized as the permutation gate on the pair followed by the usual
        truncated split. Returns the discarded weight.
        """
        theta = self._theta(pos).transpose(0, 2, 1, 3)
        d1 = self.tensors[pos].shape[1]
        d2 = self.tensors[pos + 1].shape[1]
        self.labels[pos], self.labels[pos + 1] = self.labels[pos + 1], self.labels[pos]
        self._index[self.labels[pos]] = pos
        self._index[self.labels[pos + 1]] = pos + 1
        if self.charged:
            sc = self.site_charges
            sc[pos], sc[pos + 1] = sc[pos + 1], sc[pos]
            q1, q2 = sc[pos], sc[pos + 1]
        else:
            q1 = q2 = None
        return self._set_pair(pos, theta, d2, d1, q1, q2, policy, center_side)

    def fuse_pair(self, pos: int, label=None):
        """Merge sites pos and pos + 1 into one composite site (no truncation)."""
        theta = self._theta(pos)
        dl, d1, d2, dr = theta.shape
        lab = label if label is not None else ("pair", self.labels[pos], self.labels[pos + 1])
        self.tensors[pos : pos + 2] = [theta.reshape(dl, d1 * d2, dr)]
        self.labels[pos : pos + 2] = [lab]
        if self.charged:
            q1 = self.site_charges[pos]
            q2 = self.site_charges[pos + 1]
            self.site_charges[pos : pos + 2] = [(q1[:, None] + q2[None, :]).reshape(-1)]
            del self.bond_charges[pos + 1]
        if self.center > pos:
            self.center -= 1
        self._rebuild_index()

    def split_site(self, pos: int, dims: tuple, labels: tuple,
                   site_charges: Optional[tuple] = None,
                   policy: TruncationPolicy = EXACT, center_side: str = "right") -> float:
        """Split a composite site back into two; inverse of fuse_pair."""
        d1, d2 = dims
        t = self.tensors[pos]
        if t.shape[1] != d1 * d2:
            raise TensorShapeError(f"cannot split local dim {t.shape[1]} into {dims}")
        self.move_center_to(pos)
        dl, _, dr = t.shape
        theta = self.tensors[pos].reshape(dl, d1, d2, dr)
        self.tensors[pos : pos + 1] = [None, None]
        self.labels[pos : pos + 1] = list(labels)
        if self.charged:
            if site_charges is None:
                raise InvariantError("charged chain needs site charges for both split outputs")
            q1, q2 = site_charges
            self.site_charges[pos : pos + 1] = [q1, q2]
            self.bond_charges.insert(pos + 1, None)
        else:
            q1 = q2 = None
        if self.center > pos:
            self.center += 1
        discarded = self._set_pair(pos, theta, d1, d2, q1, q2, policy, center_side)
        self._rebuild_index()
        return discarded

    def insert_vacuum_site(self, pos: int, label, p: int):
        """Insert a fresh vacuum bin at position pos without touching the state.

        The inserted tensor is the identity on the crossing bond tensored
        with the empty Fock state, which is an exact isometry from either
        side, so the gauge and the represented state are unchanged.
        """
        d = self.tensors[pos - 1].shape[2] if pos > 0 else self.tensors[0].shape[0]
        t = np.zeros((d, p, d), dtype=complex)
        t[:, 0, :] = np.eye(d)
        self.tensors.insert(pos, t)
        self.labels.insert(pos, label)
        if self.charged:
            self.site_charges.insert(pos, np.arange(p))
            self.bond_charges.insert(pos, self.bond_charges[pos].copy())
        if pos <= self.center:
            self.center += 1
        self._rebuild_index()

    # -- observables ------------------------------------------------------

    def local_expectation(self, pos: int, op: Array) -> complex:
        """<psi| op at site pos |psi>, gauge moved internally."""
        op = np.asarray(op)
        d = self.tensors[pos].shape[1]
        if op.shape != (d, d):
            raise TensorShapeError(f"operator shape {op.shape} does not match local dim {d}")
        self.move_center_to(pos)
        t = self.tensors[pos]
        return complex(np.einsum("aib,ij,ajb->", t.conj(), op, t))


# -- charge-sector linear algebra ------------------------------------------


def _sector_slices(charges: Array):
    order = np.argsort(charges, kind="stable")
    sorted_c = charges[order]
    breaks = np.flatnonzero(np.diff(sorted_c)) + 1
    groups = np.split(order, breaks)
    values = sorted_c[np.concatenate([[0], breaks])] if len(sorted_c) else []
    return {int(v): g for v, g in zip(values, groups)}


def _blocked_qr(mat: Array, row_charges: Array, col_charges: Array):
    """QR of a charge-block matrix, sector by sector.

    Returns (q, r, new_bond_charges) with q column-isometric. Columns whose
    charge has no matching rows are structurally zero and are dropped.
    """
    rows = _sector_slices(row_charges)
    cols = _sector_slices(col_charges)
    qs, rs, charges = [], [], []
    for c in sorted(set(rows) & set(cols)):
        ri, ci = rows[c], cols[c]
        q_blk, r_blk = np.linalg.qr(mat[np.ix_(ri, ci)])
        k = q_blk.shape[1]
        q_full = np.zeros((mat.shape[0], k), dtype=mat.dtype)
        q_full[ri] = q_blk
        r_full = np.zeros((k, mat.shape[1]), dtype=mat.dtype)
        r_full[:, ci] = r_blk
        qs.append(q_full)
        rs.append(r_full)
        charges.append(np.full(k, c, dtype=int))
    if not qs:
        # Fully structurally zero matrix; keep a single null direction.
        q = np.zeros((mat.shape[0], 1), dtype=mat.dtype)
        r = np.zeros((1, mat.shape[1]), dtype=mat.dtype)
        return q, r, np.zeros(1, dtype=int)
    return np.hstack(qs), np.vstack(rs), np.concatenate(charges)


def _truncated_svd(mat: Array, policy: TruncationPolicy):
    u, s, vh = _svd_matrix(mat)
    rank = truncation_rank(s, policy)
    if rank == s.shape[0]:
        return u, s, vh, 0.0
    discarded = 0.0
    for v in s[rank:].tolist():
        discarded += v * v
    return u[:, :rank], s[:rank], vh[:rank], discarded


def _blocked_svd(mat: Array, row_charges: Array, col_charges: Array, policy: TruncationPolicy):
    """Truncated SVD of a charge-block matrix.

    Each sector is decomposed independently; the kept set is chosen on the
    union spectrum with the same rule as the dense path, so results agree
    with a dense SVD up to round-off. Entries outside valid sectors are
    structural zeros (or round-off dust from exponentiated gates) and are
    projected away.
    """
    rows = _sector_slices(row_charges)
    cols = _sector_slices(col_charges)
    sectors = sorted(set(rows) & set(cols))
    pieces = []
    for c in sectors:
        ri, ci = rows[c], cols[c]
        u, s, vh = _svd_matrix(mat[np.ix_(ri, ci)])
        pieces.append((c, ri, ci, u, s, vh))
    if not pieces:
        u = np.zeros((mat.shape[0], 1), dtype=mat.dtype)
        vh = np.zeros((1, mat.shape[1]), dtype=mat.dtype)
        return u, np.zeros(1), vh, 0.0, np.zeros(1, dtype=int)
    all_s = np.concatenate([p[4] for p in pieces])
    order = np.argsort(-all_s, kind="stable")
    spectrum = all_s[order]
    rank = truncation_rank(spectrum, policy)
    discarded = float(np.sum(spectrum[rank:] ** 2))
    keep_flat = np.zeros(len(all_s), dtype=bool)
    keep_flat[order[:rank]] = True
    u_parts, s_parts, vh_parts, charges = [], [], [], []
    offset = 0
    for c, ri, ci, u, s, vh in pieces:
        sel = keep_flat[offset : offset + len(s)]
        offset += len(s)
        k = int(sel.sum())
        if k == 0:
            continue
        u_full = np.zeros((mat.shape[0], k), dtype=mat.dtype)
        u_full[ri] = u[:, sel]
        vh_full = np.zeros((k, mat.shape[1]), dtype=mat.dtype)
        vh_full[:, ci] = vh[sel]
        u_parts.append(u_full)
        s_parts.append(s[sel])
        vh_parts.append(vh_full)
        charges.append(np.full(k, c, dtype=int))
    if not u_parts:
        # Everything truncated away; keep the largest value to hold the bond.
        c, ri, ci, u, s, vh = pieces[int(np.argmax([p[4][0] if len(p[4]) else -1.0 for p in pieces]))]
        u_full = np.zeros((mat.shape[0], 1), dtype=mat.dtype)
        u_full[ri] = u[:, :1]
        vh_full = np.zeros((1, mat.shape[1]), dtype=mat.dtype)
        vh_full[:, ci] = vh[:1]
        return u_full, s[:1], vh_full, float(np.sum(spectrum[1:] ** 2)), np.full(1, c, dtype=int)
    return (
        np.hstack(u_parts),
        np.concatenate(s_parts),
        np.vstack(vh_parts),
        discarded,
        np.concatenate(charges),
    )


def _check_gate_charge(gate: Array, q1: Array, q2: Array):
    qq = (q1[:, None] + q2[None, :]).reshape(-1)
    bad = qq[:, None] != qq[None, :]
    worst = np.abs(np.where(bad, gate, 0.0)).max()
    if worst > GATE_ZERO_TOL * max(1.0, np.abs(gate).max()):
        raise InvariantError(
            f"gate does not conserve the excitation number: off-sector weight {worst:.3e}"
        )


# -- construction ------------------------------------------------------------


def init_chain(n_bins: int, p: int, system_state: tuple, prepad: int = 0,
               charged: bool = False) -> MpsChain:
    """Product chain: optional vacuum bins, the system site, then n_bins vacuum bins.

    Bins left of the system get negative labels -prepad .. -1; they serve as
    the not-yet-returned part of the feedback channel. system_state is the
    (ground, excited) amplitude pair, normalized to 1 within 1e-12.
    """
    if n_bins < 1:
        raise InvariantError("need at least one time bin")
    if p < 2:
        raise InvariantError(f"bin dimension must be at least 2, got {p}")
    c_g, c_e = complex(system_state[0]), complex(system_state[1])
    norm = abs(c_g) ** 2 + abs(c_e) ** 2
    if abs(norm - 1.0) > 1e-12:
        raise InvariantError(f"system state not normalized: |c|^2 = {norm}")
    if charged and c_g != 0 and c_e != 0:
        raise InvariantError("charge labels need a definite-excitation initial system state")
    tensors, labels, site_q = [], [], []
    for k in range(-prepad, 0):
        tensors.append(_vacuum_tensor(p))
        labels.append(bin_label(k))
        site_q.append(np.arange(p))
    tensors.append(_system_tensor(c_g, c_e))
    labels.append(SYSTEM)
    site_q.append(np.array([0, 1]))
    for k in range(n_bins):
        tensors.append(_vacuum_tensor(p))
        labels.append(bin_label(k))
        site_q.append(np.arange(p))
    if charged:
        sys_q = 0 if c_e == 0 else 1
        bond_q = [np.zeros(1, dtype=int) for _ in range(prepad + 1)]
        bond_q += [np.full(1, sys_q, dtype=int) for _ in range(n_bins + 1)]
        return MpsChain(tensors, labels, site_q, bond_q, center=prepad)
    return MpsChain(tensors, labels, center=prepad)


def install_fragment(chain: MpsChain, first_label, tensors: Sequence[Array],
                     total_charge: int = 0):
    """Replace a run of product bins with an entangled fragment.

    The fragment's boundary bonds must have extent 1 and the target bins must
    currently be in a product state (all crossing bonds trivial). Used to put
    an n-photon wavepacket onto the bins it occupies.
    """
    start = chain.position_of(first_label)
    n = len(tensors)
    if tensors[0].shape[0] != 1 or tensors[-1].shape[2] != 1:
        raise InvariantError("fragment boundary bonds must have extent 1")
    if chain.max_bond() != 1:
        raise InvariantError("fragment installation needs a fully product chain")
    for off in range(n):
        if chain.tensors[start + off].shape[1] != tensors[off].shape[1]:
            raise TensorShapeError("fragment local dimension does not match the chain")
    for off, t in enumerate(tensors):
        chain.tensors[start + off] = np.asarray(t, dtype=complex)
    if chain.charged:
        for off in range(n):
            occ = chain.site_charges[start + off]
            # A fragment bond index tracks the photon count already placed in
            # earlier bins; recover the label from the tensor support.
            nxt = chain.tensors[start + off]
            charges = np.zeros(nxt.shape[2], dtype=int)
            left_q = chain.bond_charges[start + off]
            for b in range(nxt.shape[2]):
                idx = np.argwhere(np.abs(nxt[:, :, b]) > 0)
                if len(idx):
                    a, i = idx[0]
                    charges[b] = left_q[a] + occ[i]
                else:
                    charges[b] = left_q[0]
            chain.bond_charges[start + off + 1] = charges
        # Bins right of the fragment are vacuum products; their bond labels
        # shift by the total charge that was inserted.
        for b in range(start + n + 1, len(chain.bond_charges)):
            chain.bond_charges[b] = chain.bond_charges[b] + total_charge
    # The supplied tensors need not be isometric, so restore the canonical
    # form by sweeping the center through the fragment and back.
    old_center = chain.center
    chain.center = start
    chain.move_center_to(start + n - 1)
    chain.move_center_to(old_center)
