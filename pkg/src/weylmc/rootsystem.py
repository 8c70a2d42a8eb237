"""Finite root systems and their reflection groups, realized as explicit
coordinate vectors in R^r with the standard scalar product.

Conventions used everywhere downstream:
  - simple roots e_1..e_r are rows of ``simple_roots``; the longest root has
    squared norm 2,
  - coroot of a root a is a∨ = 2a/<a,a>,
  - fundamental weights w_i satisfy <w_i, e_j∨> = delta_ij, fundamental
    coweights w_i∨ satisfy <w_i∨, e_j> = delta_ij,
  - rho = half sum of positive roots (= sum of weights), rho∨ its dual.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

MATRIX_TOL = 1e-10

# Pinned planar realization of A2; every other type is built from its Gram
# matrix by Cholesky, this one is stored verbatim for reproducibility.
_A2_SIMPLE_ROOTS = np.array(
    [
        [-math.sqrt(3.0) / math.sqrt(2.0), 1.0 / math.sqrt(2.0)],
        [0.0, -math.sqrt(2.0)],
    ]
)


class RootSystemError(ValueError):
    """Invalid root-system input (bad Cartan matrix, wrong rank, ...)."""


@dataclass(frozen=True)
class WeylElement:
    """One element of the reflection group: orthogonal matrix + reduced word."""

    matrix: np.ndarray
    word: tuple[int, ...]  # indices of simple reflections, reduced

    @property
    def length(self) -> int:
        return len(self.word)

    @property
    def signature(self) -> int:
        return -1 if self.length % 2 else 1

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=float)

    def key(self, tol=MATRIX_TOL):
        return tuple(np.round(self.matrix / tol).astype(np.int64).ravel().tolist())

    def __repr__(self):
        w = "".join(f"s{i + 1}" for i in self.word) or "id"
        return f"WeylElement({w})"


@dataclass(frozen=True)
class RootSystem:
    kind: str
    rank: int
    simple_roots: np.ndarray  # (r, r), rows
    cartan: np.ndarray  # <e_i∨, e_j>
    coroots: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)  # fundamental weights, rows
    coweights: np.ndarray = field(init=False)  # fundamental coweights, rows
    positive_roots: np.ndarray = field(init=False)
    weyl_vector: np.ndarray = field(init=False)
    dual_weyl_vector: np.ndarray = field(init=False)

    def __post_init__(self):
        e = np.asarray(self.simple_roots, dtype=float)
        if e.shape != (self.rank, self.rank):
            raise RootSystemError(f"simple roots must be a {self.rank}x{self.rank} matrix")
        norms2 = np.einsum("ij,ij->i", e, e)
        if abs(np.max(norms2) - 2.0) > 1e-9:
            raise RootSystemError("longest simple root must have squared norm 2")
        coroots = 2.0 * e / norms2[:, None]
        cart = coroots @ e.T
        if not np.allclose(cart, self.cartan, atol=1e-9):
            raise RootSystemError("realization does not reproduce the Cartan matrix")
        object.__setattr__(self, "coroots", coroots)
        # <w_i, e_j∨> = delta_ij  <=>  coroots @ weights.T = I
        object.__setattr__(self, "weights", np.linalg.inv(coroots).T)
        object.__setattr__(self, "coweights", np.linalg.inv(e).T)
        pos = _positive_roots(e)
        object.__setattr__(self, "positive_roots", pos)
        rho = 0.5 * pos.sum(axis=0)
        pos_co = 2.0 * pos / np.einsum("ij,ij->i", pos, pos)[:, None]
        object.__setattr__(self, "weyl_vector", rho)
        object.__setattr__(self, "dual_weyl_vector", 0.5 * pos_co.sum(axis=0))

    # -- elementwise helpers -------------------------------------------------

    def reflection_matrix(self, i: int) -> np.ndarray:
        e = self.simple_roots[i]
        return np.eye(self.rank) - 2.0 * np.outer(e, e) / (e @ e)

    def reflect(self, i: int, x):
        """Reflection across the wall {<x, e_i> = 0}."""
        x = np.asarray(x, dtype=float)
        e = self.simple_roots[i]
        return x - 2.0 * (x @ e) / (e @ e) * e

    def chamber_coords(self, x):
        """Pairings <x, e_i> for all simple roots ("wall distances")."""
        return self.simple_roots @ np.asarray(x, dtype=float)

    def in_chamber(self, x, strict=True):
        c = self.chamber_coords(x)
        return bool(np.all(c > 0)) if strict else bool(np.all(c >= -1e-12))

    def dual(self) -> "RootSystem":
        """Root system whose simple roots are the coroots, renormalized so the
        longest root again has squared norm 2.  The reflection group is the
        same set of orthogonal maps."""
        co = self.coroots
        norms2 = np.einsum("ij,ij->i", co, co)
        scale = math.sqrt(2.0 / np.max(norms2))
        e_dual = co * scale
        cart = (2.0 * e_dual / np.einsum("ij,ij->i", e_dual, e_dual)[:, None]) @ e_dual.T
        return RootSystem(kind=self.kind + "_dual", rank=self.rank,
                          simple_roots=e_dual, cartan=cart)

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "rank": self.rank,
                "simple_roots": self.simple_roots.tolist(),
                "cartan": self.cartan.tolist(),
            }
        )


def _positive_roots(simple: np.ndarray) -> np.ndarray:
    """Orbit of the simple roots, filtered to nonnegative combinations."""
    r = simple.shape[0]
    refl = [np.eye(r) - 2.0 * np.outer(e, e) / (e @ e) for e in simple]
    seen = {}
    frontier = [simple[i] for i in range(r)]
    guard = 0
    while frontier:
        guard += 1
        if guard > 100000:
            raise RootSystemError("root orbit did not close; input is not finite type")
        nxt = []
        for v in frontier:
            k = tuple(np.round(v / MATRIX_TOL).astype(np.int64).tolist())
            if k in seen:
                continue
            seen[k] = v
            nxt.extend(m @ v for m in refl)
        frontier = nxt
    roots = np.array(list(seen.values()))
    coeffs = roots @ np.linalg.inv(simple)  # expansion in the simple-root basis
    pos = roots[np.all(coeffs > -1e-9, axis=1)]
    # deterministic order: by height, then lexicographic
    heights = (pos @ np.linalg.inv(simple)).sum(axis=1)
    return pos[np.lexsort((*pos.T[::-1], np.round(heights, 9)))]


def _gram_to_simple_roots(gram: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise RootSystemError("Gram matrix is not positive definite") from exc
    return chol  # rows have the prescribed pairwise products


def _validate_cartan(a: np.ndarray):
    a = np.asarray(a, dtype=float)
    r = a.shape[0]
    if a.shape != (r, r) or r < 1 or r > 3:
        raise RootSystemError("Cartan matrix must be square with rank <= 3")
    if not np.allclose(np.diag(a), 2.0):
        raise RootSystemError("Cartan diagonal must be 2")
    off = a[~np.eye(r, dtype=bool)]
    if np.any(off > 1e-12):
        raise RootSystemError("off-diagonal Cartan entries must be <= 0")
    if not np.allclose(a, np.round(a), atol=1e-9):
        raise RootSystemError("Cartan entries must be integers")
    for i, j in itertools.combinations(range(r), 2):
        if (abs(a[i, j]) < 1e-12) != (abs(a[j, i]) < 1e-12):
            raise RootSystemError("Cartan zero pattern must be symmetric")
        if a[i, j] * a[j, i] > 3 + 1e-9:
            raise RootSystemError("A_ij * A_ji > 3: not finite type")
    return np.round(a).astype(int)


def _cartan_to_gram(a: np.ndarray) -> np.ndarray:
    """Squared lengths from A_ij L_i = A_ji L_j, longest normalized to 2."""
    r = a.shape[0]
    lengths = np.full(r, np.nan)
    lengths[0] = 1.0
    changed = True
    while changed:
        changed = False
        for i in range(r):
            for j in range(r):
                if i == j or abs(a[i, j]) < 1e-12:
                    continue
                if not math.isnan(lengths[i]) and math.isnan(lengths[j]):
                    lengths[j] = lengths[i] * a[i, j] / a[j, i]
                    changed = True
    if np.any(np.isnan(lengths)):  # disconnected diagram: remaining blocks free
        lengths[np.isnan(lengths)] = 1.0
    lengths *= 2.0 / np.max(lengths)
    gram = np.empty((r, r))
    for i in range(r):
        for j in range(r):
            gram[i, j] = a[i, j] * lengths[i] / 2.0 if i != j else lengths[i]
    gram = (gram + gram.T) / 2.0
    if np.min(np.linalg.eigvalsh(gram)) <= 1e-12:
        raise RootSystemError("Cartan matrix is not of finite type (Gram not positive definite)")
    return gram


def build_root_system(kind, n: int | None = None, cartan=None) -> RootSystem:
    """Construct a root system.

    kind: one of "A1", "A2", "A1xA1", "B2", "G2", "dihedral" (with n),
    or "cartan" (with an explicit Cartan matrix, rank <= 3).
    """
    kind = str(kind)
    if kind == "A1":
        return RootSystem("A1", 1, np.array([[math.sqrt(2.0)]]), np.array([[2.0]]))
    if kind == "A2":
        return RootSystem("A2", 2, _A2_SIMPLE_ROOTS.copy(),
                          np.array([[2.0, -1.0], [-1.0, 2.0]]))
    if kind in ("A1xA1", "A1×A1"):
        e = math.sqrt(2.0) * np.eye(2)
        return RootSystem("A1xA1", 2, e, np.array([[2.0, 0.0], [0.0, 2.0]]))
    if kind == "B2":
        gram = np.array([[2.0, -1.0], [-1.0, 1.0]])
        e = _gram_to_simple_roots(gram)
        return RootSystem("B2", 2, e, np.array([[2.0, -1.0], [-2.0, 2.0]]))
    if kind == "G2":
        gram = np.array([[2.0, -1.0], [-1.0, 2.0 / 3.0]])
        e = _gram_to_simple_roots(gram)
        return RootSystem("G2", 2, e, np.array([[2.0, -1.0], [-3.0, 2.0]]))
    if kind == "dihedral":
        if n is None or n < 2:
            raise RootSystemError("dihedral kind needs n >= 2")
        c = -2.0 * math.cos(math.pi / n)
        gram = np.array([[2.0, c], [c, 2.0]])
        e = _gram_to_simple_roots(gram)
        return RootSystem(f"dihedral({n})", 2, e, e @ e.T)  # Cartan = Gram here
    if kind == "cartan":
        a = _validate_cartan(np.asarray(cartan))
        gram = _cartan_to_gram(a)
        e = _gram_to_simple_roots(gram)
        return RootSystem("cartan", a.shape[0], e, a.astype(float))
    raise RootSystemError(f"unknown root system kind {kind!r}")


def generate_weyl_group(rs: RootSystem, order_cap: int = 10000) -> list[WeylElement]:
    """Enumerate the full reflection group by breadth-first closure.

    Words are grown one simple reflection at a time, so the first word that
    reaches an element is reduced.  Elements are deduplicated by matrix.
    """
    gens = [rs.reflection_matrix(i) for i in range(rs.rank)]
    identity = WeylElement(np.eye(rs.rank), ())
    seen = {identity.key(): identity}
    frontier = [identity]
    while frontier:
        nxt = []
        for el in frontier:
            for i, g in enumerate(gens):
                cand = WeylElement(el.matrix @ g, el.word + (i,))
                k = cand.key()
                if k not in seen:
                    seen[k] = cand
                    nxt.append(cand)
        if len(seen) > order_cap:
            raise RootSystemError(f"group order exceeded cap {order_cap}; not finite?")
        frontier = nxt
    out = sorted(seen.values(), key=lambda s: (s.length, s.word))
    for el in out:  # cheap structural self-checks, once per generation
        if abs(np.linalg.det(el.matrix) - el.signature) > 1e-9:
            raise RootSystemError("signature/determinant mismatch")
    return out


def weyl_subset(rs: RootSystem, group: list[WeylElement], indices) -> list[WeylElement]:
    """Elements whose reduced expressions must involve every s_i, i in indices.

    Criterion: s is in the subset iff s^{-1} w_i∨ != w_i∨ for all i in the set
    (a simple reflection s_j fixes every coweight but the j-th).
    """
    idx = sorted(set(int(i) for i in indices))
    out = []
    for s in group:
        inv = s.matrix.T  # orthogonal
        if all(np.linalg.norm(inv @ rs.coweights[i] - rs.coweights[i]) > 1e-9 for i in idx):
            out.append(s)
    return out


def all_reduced_words(rs: RootSystem, group: list[WeylElement], s: WeylElement):
    """Brute-force enumeration of every reduced word of s (rank <= 2 scales)."""
    gens = [rs.reflection_matrix(i) for i in range(rs.rank)]
    target = s.key()
    words = []

    def rec(mat, word):
        if len(word) == s.length:
            if WeylElement(mat, tuple(word)).key() == target:
                words.append(tuple(word))
            return
        for i, g in enumerate(gens):
            rec(mat @ g, word + [i])

    rec(np.eye(rs.rank), [])
    return words


def hat_action(rs: RootSystem, s: WeylElement, alpha, q):
    """Affine action fixing q: alpha -> q + s(alpha - q)."""
    alpha = np.asarray(alpha, dtype=float)
    q = np.asarray(q, dtype=float)
    return q + s.matrix @ (alpha - q)


def chamber_query(rs: RootSystem, x, tol: float = 1e-12):
    """Locate x relative to the fundamental chamber.

    Returns a dict with 'status' in {"inside", "wall", "outside"},
    'walls' (indices with <x,e_i> ~ 0) and 'distances' (<x,e_i> for all i).
    """
    c = rs.chamber_coords(x)
    on = [i for i in range(rs.rank) if abs(c[i]) <= tol]
    if np.any(c < -tol):
        status = "outside"
    elif on:
        status = "wall"
    else:
        status = "inside"
    return {"status": status, "walls": on, "distances": c}
