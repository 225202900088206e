"""Uniform quadrilateral meshes of the unit square and overlapping subdomains."""
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# local edge order inside an element: bottom, right, top, left
BOTTOM, RIGHT, TOP, LEFT = range(4)
# outward normal of each local edge relative to the global edge normal (+y, +x, +y, +x)
LOCAL_EDGE_SIGNS = np.array([-1.0, 1.0, 1.0, -1.0])
# outward unit normals of the local edges
LOCAL_EDGE_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


class MeshError(ValueError):
    pass


def _as_fraction(value):
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        return parse_dyadic(value)
    return Fraction(value).limit_denominator(1 << 20)


def parse_dyadic(text):
    """Parse ``"1/4"``, ``"0.25"``, ``"2^-2"`` or ``"2**-2"`` into a Fraction."""
    text = text.strip().replace("**", "^")
    if "^" in text:
        base, exp = text.split("^")
        return Fraction(int(base)) ** int(exp)
    return Fraction(text)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform ``n x n`` grid of squares on (0,1)^2.

    Vertices, elements and edges are numbered row-major (y, then x).
    Horizontal edges come first (``n (n+1)`` of them), then vertical ones.
    Horizontal edges carry the global normal +y, vertical edges +x.
    """

    n: int
    vertices: np.ndarray        # (nv, 2) coordinates i/n
    edges: np.ndarray           # (ne, 2) vertex ids, ordered along +x / +y
    edge_normals: np.ndarray    # (ne, 2)
    elements: np.ndarray        # (nel, 4) vertex ids: (0,0), (1,0), (0,1), (1,1)
    element_edges: np.ndarray   # (nel, 4) edge ids: bottom, right, top, left
    element_edge_signs: np.ndarray  # (nel, 4) +-1

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def num_elements(self):
        return len(self.elements)

    def vertex_id(self, ix, iy):
        return iy * (self.n + 1) + ix

    def element_id(self, ix, iy):
        return iy * self.n + ix

    def horizontal_edge_id(self, ix, iy):
        return iy * self.n + ix

    def vertical_edge_id(self, ix, iy):
        return self.n * (self.n + 1) + iy * (self.n + 1) + ix

    def element_origin(self, e):
        """Lower-left corner of element(s) ``e``."""
        return self.vertices[self.elements[e, 0]]

    def element_index(self, e):
        """(ix, iy) grid position of element(s) ``e``."""
        e = np.asarray(e)
        return e % self.n, e // self.n

    def boundary_vertices(self):
        iv = np.arange(self.num_vertices)
        ix, iy = iv % (self.n + 1), iv // (self.n + 1)
        return (ix == 0) | (iy == 0) | (ix == self.n) | (iy == self.n)

    def boundary_edges(self):
        mids = self.vertices[self.edges].mean(axis=1)
        return np.any((mids == 0.0) | (mids == 1.0), axis=1)

    def edge_elements(self):
        """(ne, 2) adjacent elements per edge, -1 where the edge is on the boundary."""
        adj = -np.ones((self.num_edges, 2), dtype=np.int64)
        for e in range(self.num_elements):
            for le in range(4):
                g = self.element_edges[e, le]
                slot = 0 if adj[g, 0] < 0 else 1
                adj[g, slot] = e
        return adj


def build_mesh(n):
    """Uniform mesh with ``n`` elements per side."""
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    iy, ix = np.divmod(np.arange((n + 1) ** 2), n + 1)
    vertices = np.column_stack([ix / n, iy / n])

    def vid(i, j):
        return j * (n + 1) + i

    hy, hx = np.divmod(np.arange(n * (n + 1)), n)
    horizontal = np.column_stack([vid(hx, hy), vid(hx + 1, hy)])
    vy, vx = np.divmod(np.arange(n * (n + 1)), n + 1)
    vertical = np.column_stack([vid(vx, vy), vid(vx, vy + 1)])
    edges = np.vstack([horizontal, vertical])
    normals = np.vstack([np.tile([0.0, 1.0], (n * (n + 1), 1)), np.tile([1.0, 0.0], (n * (n + 1), 1))])

    ey, ex = np.divmod(np.arange(n * n), n)
    elements = np.column_stack([vid(ex, ey), vid(ex + 1, ey), vid(ex, ey + 1), vid(ex + 1, ey + 1)])
    hid = lambda i, j: j * n + i  # noqa: E731
    vedge = lambda i, j: n * (n + 1) + j * (n + 1) + i  # noqa: E731
    element_edges = np.column_stack([hid(ex, ey), vedge(ex + 1, ey), hid(ex, ey + 1), vedge(ex, ey)])
    signs = np.tile(LOCAL_EDGE_SIGNS, (n * n, 1))
    for arr in (vertices, edges, normals, elements, element_edges, signs):
        arr.setflags(write=False)
    return Mesh(n, vertices, edges, normals, elements, element_edges, signs)


CONVENTIONS = ("element", "nodal")


@dataclass(frozen=True, eq=False)
class SubdomainLayout:
    """Overlapping square subdomains built from a tiling by squares of side ``H``.

    Subdomain ``j = b * (1/H) + a`` grows the base square
    ``[aH,(a+1)H] x [bH,(b+1)H]``. Two conventions for the overlap ``delta``:

    ``"element"``
        grow by ``delta`` on every side (clipped to the unit square); a dof
        belongs to the subdomain when every element touching it is inside.
        Neighbouring subdomains then overlap by ``2 delta``.
    ``"nodal"``
        grow by ``delta / 2`` on every side; a dof belongs to the subdomain
        when its node lies strictly inside. Neighbours overlap by ``delta``,
        and ``delta = h`` is allowed even though ``h/2`` is not mesh aligned.
    """

    mesh: Mesh
    H: Fraction
    delta: Fraction
    convention: str
    member_elements: tuple      # sorted element ids whose closure lies in the grown square
    regions: np.ndarray         # (J, 4) grown squares [x0, x1, y0, y1] in physical coordinates
    base_regions: np.ndarray    # (J, 4) base squares

    @property
    def J(self):
        return len(self.member_elements)

    @property
    def blocks_per_side(self):
        return int(1 / self.H)

    def element_mask(self, j):
        mask = np.zeros(self.mesh.num_elements, dtype=bool)
        mask[self.member_elements[j]] = True
        return mask

    def multiplicity(self):
        """Number of subdomains containing each element."""
        counts = np.zeros(self.mesh.num_elements, dtype=np.int64)
        for members in self.member_elements:
            counts[members] += 1
        return counts

    def strictly_inside(self, j, points, tol=1e-12):
        x0, x1, y0, y1 = self.regions[j]
        x, y = points[:, 0], points[:, 1]
        return (x > x0 + tol) & (x < x1 - tol) & (y > y0 + tol) & (y < y1 - tol)


def build_subdomains(mesh, H, delta, convention="element"):
    if convention not in CONVENTIONS:
        raise MeshError(f"unknown overlap convention {convention!r}; expected one of {CONVENTIONS}")
    H = _as_fraction(H)
    delta = _as_fraction(delta)
    n = mesh.n
    if H <= 0 or H > 1 or (1 / H).denominator != 1:
        raise MeshError(f"H={H} does not divide 1")
    if (H * n).denominator != 1:
        raise MeshError(f"H={H} is not a multiple of h=1/{n}")
    if (delta * n).denominator != 1 or delta <= 0:
        raise MeshError(f"delta={delta} is not a positive multiple of h=1/{n}")
    if delta > H:
        raise MeshError(f"delta={delta} exceeds H={H}")
    grow = float(delta) if convention == "element" else float(delta) / 2
    nb = int(1 / H)
    Hf = float(H)
    ey, ex = np.divmod(np.arange(n * n), n)
    tol = 1e-9 / n
    members, regions, base = [], [], []
    for b in range(nb):
        for a in range(nb):
            bx = (a * Hf, (a + 1) * Hf, b * Hf, (b + 1) * Hf)
            reg = (bx[0] - grow, bx[1] + grow, bx[2] - grow, bx[3] + grow)
            if convention == "element":
                reg = (max(0.0, reg[0]), min(1.0, reg[1]), max(0.0, reg[2]), min(1.0, reg[3]))
            inside = ((ex / n >= reg[0] - tol) & ((ex + 1) / n <= reg[1] + tol)
                      & (ey / n >= reg[2] - tol) & ((ey + 1) / n <= reg[3] + tol))
            ids = np.flatnonzero(inside)
            ids.setflags(write=False)
            members.append(ids)
            regions.append(reg)
            base.append(bx)
    return SubdomainLayout(mesh, H, delta, convention, tuple(members), np.array(regions), np.array(base))


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Partition of unity subordinate to a layout.

    ``theta`` holds vertex values (J, nv). Evaluation at other points uses the
    underlying functions: the bilinear interpolant of the vertex values for the
    ``"element"`` convention, exact tensor-product tents for ``"nodal"``.
    """

    layout: SubdomainLayout
    theta: np.ndarray

    def __call__(self, points):
        points = np.atleast_2d(points)
        if self.layout.convention == "nodal":
            return _nodal_tents(self.layout, points)[0]
        return _bilinear_interpolate(self.layout.mesh, self.theta, points)

    def gradient_max(self):
        """Largest gradient magnitude of each theta_j, from exact derivatives."""
        mesh = self.layout.mesh
        if self.layout.convention == "nodal":
            # tents are piecewise linear per coordinate with kinks on a h/2 grid;
            # the gradient is constant on each cell of the 1/(4n) grid
            m = 4 * mesh.n
            c = (np.arange(m) + 0.5) / m
            X, Y = np.meshgrid(c, c)
            _, gx, gy = _nodal_tents(self.layout, np.column_stack([X.ravel(), Y.ravel()]))
            return np.max(np.hypot(gx, gy), axis=1)
        vals = self.theta[:, mesh.elements]  # (J, nel, 4)
        h = mesh.h
        # gradient of a bilinear is extremal at the corners
        gx_bot = (vals[..., 1] - vals[..., 0]) / h
        gx_top = (vals[..., 3] - vals[..., 2]) / h
        gy_left = (vals[..., 2] - vals[..., 0]) / h
        gy_right = (vals[..., 3] - vals[..., 1]) / h
        corners = [
            np.hypot(gx_bot, gy_left), np.hypot(gx_bot, gy_right),
            np.hypot(gx_top, gy_left), np.hypot(gx_top, gy_right),
        ]
        return np.max(np.stack(corners), axis=(0, 2))


def _bilinear_interpolate(mesh, vertex_values, points):
    n = mesh.n
    x, y = points[:, 0], points[:, 1]
    ix = np.clip(np.floor(x * n).astype(np.int64), 0, n - 1)
    iy = np.clip(np.floor(y * n).astype(np.int64), 0, n - 1)
    s, t = x * n - ix, y * n - iy
    corners = mesh.elements[iy * n + ix]
    v = vertex_values[:, corners]  # (J, npts, 4)
    return (v[..., 0] * (1 - s) * (1 - t) + v[..., 1] * s * (1 - t)
            + v[..., 2] * (1 - s) * t + v[..., 3] * s * t)


def _tent_1d(coord, lo, hi, width, ramp_lo, ramp_hi):
    """1 on [lo, hi] shrunk by width/2, linear over width centred on lo and hi."""
    val = np.ones_like(coord)
    der = np.zeros_like(coord)
    if ramp_lo:
        r = (coord - (lo - width / 2)) / width
        val = np.where(r < 1, np.clip(r, 0, 1), val)
        der = np.where((r > 0) & (r < 1), 1 / width, der)
    if ramp_hi:
        r = ((hi + width / 2) - coord) / width
        active = r < 1
        der = np.where(active & (r > 0), -1 / width, der)
        val = np.where(active, np.minimum(val, np.clip(r, 0, 1)), val)
    return val, der


def _nodal_tents(layout, points):
    w = float(layout.delta)
    x, y = points[:, 0], points[:, 1]
    nb = layout.blocks_per_side
    vals, gxs, gys = [], [], []
    for j, (x0, x1, y0, y1) in enumerate(layout.base_regions):
        a, b = j % nb, j // nb
        fx, dfx = _tent_1d(x, x0, x1, w, a > 0, a < nb - 1)
        fy, dfy = _tent_1d(y, y0, y1, w, b > 0, b < nb - 1)
        vals.append(fx * fy)
        gxs.append(dfx * fy)
        gys.append(fx * dfy)
    return np.array(vals), np.array(gxs), np.array(gys)


def _ramp(coord, lo, hi, width):
    up = np.clip((coord - (lo - width)) / width, 0.0, 1.0)
    down = np.clip(((hi + width) - coord) / width, 0.0, 1.0)
    return up * down


def build_partition_of_unity(layout):
    """Partition of unity for a layout (see :class:`PartitionOfUnity`).

    ``"element"``: tents equal to 1 on the base square and decaying linearly
    over ``delta``, normalized by their pointwise sum at the vertices.
    ``"nodal"``: tents whose ramps of width ``delta`` are centred on the
    interfaces between base squares; these already sum to one.
    """
    mesh = layout.mesh
    if layout.convention == "nodal":
        theta = _nodal_tents(layout, mesh.vertices)[0]
    else:
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        w = float(layout.delta)
        raw = np.empty((layout.J, mesh.num_vertices))
        for j, (x0, x1, y0, y1) in enumerate(layout.base_regions):
            raw[j] = _ramp(x, x0, x1, w) * _ramp(y, y0, y1, w)
        theta = raw / raw.sum(axis=0)
    theta.setflags(write=False)
    return PartitionOfUnity(layout, theta)
