"""Tensor-product Hilbert-space bookkeeping.

Operators carry their support (an ordered tuple of sites) and act on the
tensor product of those sites' local spaces.  Basis indexing is row-major in
site order: the first site of the support contributes the most significant
digit, radix = its local dimension.  Dense storage below total dimension
DENSE_CAP, scipy sparse above.

The localizing maps here are the normalized partial trace Pi_X and the local
decompositions Delta_{x,n;m} built from differences of Pi on growing balls.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import ball

__all__ = [
    "SiteSpace",
    "Operator",
    "identity",
    "embed",
    "normalized_partial_trace",
    "localize",
    "local_decomposition",
    "operator_norm",
    "commutator",
    "commutator_norm",
    "random_hermitian",
    "export_matrix",
    "import_matrix",
]

DENSE_CAP = 4096
HERMITIAN_RTOL = 1e-12


class SiteSpace:
    """Local dimensions of the volume's sites (uniform or per-site)."""

    def __init__(self, vol, local_dim=2, per_site=None):
        self.vol = vol
        if per_site is None:
            self.dims = {s: int(local_dim) for s in vol.sites}
        else:
            self.dims = {s: int(per_site[s]) for s in vol.sites}
        if any(d < 1 for d in self.dims.values()):
            raise ValueError("local dimensions must be positive")

    def dim_of(self, sites) -> int:
        out = 1
        for s in sites:
            out *= self.dims[s]
        return out

    def total_dim(self) -> int:
        return self.dim_of(self.vol.sites)


def _strides(dims):
    strides = np.ones(len(dims), dtype=np.int64)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    return strides


class Operator:
    """A (usually Hermitian) operator on the tensor product over `sites`.

    `sites` is sorted in volume order.  `data` is a dense complex ndarray or
    a scipy sparse matrix of shape (dim, dim).
    """

    def __init__(self, data, sites, space: SiteSpace, hermitian=None):
        self.sites = tuple(sorted(sites))
        self.space = space
        dim = space.dim_of(self.sites)
        if data.shape != (dim, dim):
            raise ValueError(f"shape {data.shape} does not match sites dim {dim}")
        self.data = data
        if hermitian is None:
            hermitian = _is_hermitian(data)
        self.hermitian = hermitian

    @property
    def dim(self):
        return self.data.shape[0]

    @property
    def is_sparse(self):
        return sp.issparse(self.data)

    def dense(self):
        return self.data.toarray() if self.is_sparse else self.data

    def copy(self):
        return Operator(self.data.copy(), self.sites, self.space, self.hermitian)

    def dagger(self):
        if self.is_sparse:
            return Operator(self.data.conj().T.tocsr(), self.sites, self.space)
        return Operator(self.data.conj().T, self.sites, self.space)

    def symmetrized(self):
        """Hermitian part, with a warning when the defect exceeds tolerance."""
        defect = _hermitian_defect(self.data)
        if defect > HERMITIAN_RTOL * max(operator_norm(self), 1e-300):
            import warnings
            warnings.warn(f"symmetrizing operator with Hermiticity defect {defect:g}")
        h = 0.5 * (self.data + (self.data.conj().T))
        return Operator(h, self.sites, self.space, hermitian=True)

    def __add__(self, other):
        _check_compatible(self, other)
        return Operator(self.data + other.data, self.sites, self.space)

    def __sub__(self, other):
        _check_compatible(self, other)
        return Operator(self.data - other.data, self.sites, self.space)

    def __mul__(self, scalar):
        return Operator(self.data * scalar, self.sites, self.space)

    __rmul__ = __mul__

    def __matmul__(self, other):
        _check_compatible(self, other)
        return Operator(self.data @ other.data, self.sites, self.space)

    def apply(self, vec):
        return self.data @ vec


def _check_compatible(a, b):
    if a.sites != b.sites:
        raise ValueError(f"operator supports differ: {a.sites} vs {b.sites}")


def _is_hermitian(data):
    return _hermitian_defect(data) <= HERMITIAN_RTOL * max(_rough_norm(data), 1e-300)


def _hermitian_defect(data):
    if sp.issparse(data):
        d = data - data.conj().T
        return spla.norm(d) if d.nnz else 0.0
    return float(np.linalg.norm(data - data.conj().T))


def _rough_norm(data):
    if sp.issparse(data):
        return spla.norm(data) if data.nnz else 0.0
    return float(np.linalg.norm(data))


def identity(sites, space, sparse=None):
    dim = space.dim_of(sites)
    if sparse is None:
        sparse = dim > DENSE_CAP
    data = sp.identity(dim, format="csr", dtype=complex) if sparse \
        else np.eye(dim, dtype=complex)
    return Operator(data, sites, space, hermitian=True)


def _digit_tables(space, target_sites, sub_sites):
    """Index composition tables for embedding/tracing sub_sites inside target."""
    target = tuple(sorted(target_sites))
    sub = tuple(sorted(sub_sites))
    rest = tuple(s for s in target if s not in set(sub))
    dims = np.array([space.dims[s] for s in target], dtype=np.int64)
    strides = _strides(dims)
    pos = {s: i for i, s in enumerate(target)}

    def compose_table(group):
        gdims = [space.dims[s] for s in group]
        gdim = int(np.prod(gdims)) if group else 1
        table = np.zeros(gdim, dtype=np.int64)
        if not group:
            return table
        gstrides = _strides(np.array(gdims, dtype=np.int64))
        for k, s in enumerate(group):
            digits = (np.arange(gdim) // gstrides[k]) % gdims[k]
            table += digits * strides[pos[s]]
        return table

    return sub, rest, compose_table(sub), compose_table(rest)


def embed(op: Operator, target_sites, sparse=None) -> Operator:
    """Embed A on X into A (x) identity on target_sites (X subset of target)."""
    target = tuple(sorted(target_sites))
    if not set(op.sites).issubset(target):
        raise ValueError(f"support {op.sites} not inside target {target}")
    if op.sites == target:
        return op
    space = op.space
    sub, rest, comp_sub, comp_rest = _digit_tables(space, target, op.sites)
    dim = space.dim_of(target)
    d_rest = len(comp_rest)
    if sparse is None:
        sparse = dim > DENSE_CAP
    a = op.data.tocoo() if op.is_sparse else sp.coo_matrix(op.data)
    rows = (comp_sub[a.row][:, None] + comp_rest[None, :]).ravel()
    cols = (comp_sub[a.col][:, None] + comp_rest[None, :]).ravel()
    vals = np.repeat(a.data, d_rest)
    out = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    if not sparse:
        out = out.toarray()
    return Operator(out, target, space, hermitian=op.hermitian)


def normalized_partial_trace(op: Operator, keep_sites) -> Operator:
    """Pi_keep(A): normalized trace over the complement, as operator on keep.

    Satisfies Pi(A (x) B) = (Tr B / dim_B) A; unital; norm-nonincreasing.
    The result lives on `keep_sites`; re-embed to recover the paper's map
    A -> Pi(A) (x) identity.
    """
    keep = tuple(sorted(keep_sites))
    if not set(keep).issubset(op.sites):
        raise ValueError("keep sites must lie inside the operator support")
    if keep == op.sites:
        return op
    space = op.space
    sub, rest, comp_sub, comp_rest = _digit_tables(space, op.sites, keep)
    d_keep, d_rest = len(comp_sub), len(comp_rest)
    if not op.is_sparse:
        n = len(op.sites)
        dims = [space.dims[s] for s in op.sites]
        t = op.data.reshape(dims + dims)
        posk = [i for i, s in enumerate(op.sites) if s in set(keep)]
        posr = [i for i, s in enumerate(op.sites) if s not in set(keep)]
        perm = posk + posr + [n + i for i in posk] + [n + i for i in posr]
        t = t.transpose(perm).reshape(d_keep, d_rest, d_keep, d_rest)
        out = np.einsum("arbr->ab", t) / d_rest
        return Operator(out, keep, space)
    # sparse path: keep entries whose rest digits agree on row and column
    rest_of = np.zeros(space.dim_of(op.sites), dtype=np.int64)
    sub_of = np.zeros_like(rest_of)
    # invert the composition: full = comp_sub[i] + comp_rest[j]
    full = (comp_sub[:, None] + comp_rest[None, :]).ravel()
    sub_of[full] = np.repeat(np.arange(d_keep), d_rest)
    rest_of[full] = np.tile(np.arange(d_rest), d_keep)
    a = op.data.tocoo()
    mask = rest_of[a.row] == rest_of[a.col]
    rows = sub_of[a.row[mask]]
    cols = sub_of[a.col[mask]]
    vals = a.data[mask] / d_rest
    out = sp.coo_matrix((vals, (rows, cols)), shape=(d_keep, d_keep)).tocsr()
    if d_keep <= DENSE_CAP:
        out = out.toarray()
    return Operator(out, keep, space)


def localize(op: Operator, keep_sites) -> Operator:
    """Pi_keep as a map into the original algebra: ptrace then re-embed."""
    return embed(normalized_partial_trace(op, keep_sites), op.sites,
                 sparse=op.is_sparse)


def local_decomposition(op: Operator, vol, x, n: int, m: int) -> Operator:
    """Delta_{x,n;m}(A) = Pi_{b(m)}(A) (m=n) or Pi_{b(m)}(A) - Pi_{b(m-1)}(A)."""
    if m < n:
        raise ValueError(f"local decomposition needs m >= n, got n={n}, m={m}")
    bm = [s for s in ball(vol, x, m) if s in set(op.sites)]
    if m == n:
        return localize(op, bm)
    bm1 = [s for s in ball(vol, x, m - 1) if s in set(op.sites)]
    return localize(op, bm) - localize(op, bm1)


def operator_norm(op, hermitian=None) -> float:
    """Spectral norm; exact (eigh/svd) on dense data, Lanczos on sparse."""
    if isinstance(op, Operator):
        data, herm = op.data, op.hermitian if hermitian is None else hermitian
    else:
        data, herm = op, hermitian
    if sp.issparse(data) or isinstance(data, spla.LinearOperator):
        if data.shape[0] <= 2:
            dense = data.toarray() if sp.issparse(data) else data @ np.eye(data.shape[0])
            return float(np.linalg.norm(dense, 2))
        if herm:
            val = spla.eigsh(data, k=1, which="LM", return_eigenvectors=False,
                             maxiter=5000, tol=1e-12)
            return float(abs(val[0]))
        return float(spla.svds(data, k=1, return_singular_vectors=False,
                               maxiter=5000, tol=1e-12)[0])
    if herm:
        return float(np.max(np.abs(np.linalg.eigvalsh(data)))) if data.size else 0.0
    return float(np.linalg.norm(data, 2)) if data.size else 0.0


def commutator(a: Operator, b: Operator) -> Operator:
    _check_compatible(a, b)
    return Operator(a.data @ b.data - b.data @ a.data, a.sites, a.space)


def commutator_norm(a: Operator, b: Operator) -> float:
    """||[A,B]|| without forming the product when both inputs are large.

    For Hermitian A, B the commutator is anti-Hermitian, so i[A,B] is
    Hermitian and Lanczos applies directly.
    """
    _check_compatible(a, b)
    if not a.is_sparse and a.dim <= DENSE_CAP and not isinstance(a.data, spla.LinearOperator):
        c = a.data @ b.data - b.data @ a.data
        return float(np.linalg.norm(c, 2))
    herm = a.hermitian and b.hermitian

    def mv(v):
        return 1j * (a.apply(b.apply(v)) - b.apply(a.apply(v)))

    lo = spla.LinearOperator(shape=(a.dim, a.dim), matvec=mv, dtype=complex)
    if herm:
        val = spla.eigsh(lo, k=1, which="LM", return_eigenvectors=False,
                         maxiter=5000, tol=1e-10)
        return float(abs(val[0]))
    return float(spla.svds(lo, k=1, return_singular_vectors=False)[0])


def random_hermitian(dim, rng, scale=1.0):
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (g + g.conj().T) * scale / np.sqrt(dim)
    return h


def export_matrix(op: Operator, path):
    """Portable matrix file: header naming dims/support, then row col re im."""
    import json
    coo = op.data.tocoo() if op.is_sparse else sp.coo_matrix(op.data)
    with open(path, "w") as fh:
        fh.write(f"# dim {op.dim}\n")
        fh.write(f"# support {json.dumps([list(s) for s in op.sites])}\n")
        fh.write(f"# dims {json.dumps([op.space.dims[s] for s in op.sites])}\n")
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            v = complex(coo.data[k])
            fh.write(f"{coo.row[k]} {coo.col[k]} {v.real!r} {v.imag!r}\n")


def import_matrix(path, space: SiteSpace):
    """Inverse of export_matrix, reconstructed on the given site space."""
    import json
    rows, cols, vals = [], [], []
    dim, sites = None, None
    with open(path) as fh:
        for line in fh:
            if line.startswith("# dim "):
                dim = int(line.split()[2])
            elif line.startswith("# support "):
                sites = tuple(tuple(s) for s in json.loads(line[len("# support "):]))
            elif line.startswith("#"):
                continue
            else:
                r, c, re, im = line.split()
                rows.append(int(r))
                cols.append(int(c))
                vals.append(float(re) + 1j * float(im))
    if dim is None or sites is None:
        raise ValueError("matrix file missing dim/support header")
    data = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
    if dim <= DENSE_CAP:
        data = data.toarray()
    return Operator(data, sites, space)
