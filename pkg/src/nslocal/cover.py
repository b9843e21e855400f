"""Dyadic shell decomposition of a centered box into axis-aligned cubes.

The box ``[-2^(n+1), 2^(n+1)]^3`` is split into a core region (64 unit
cubes filling ``[-2, 2]^3``) and concentric dyadic shells: shell ``n >= 1``
is the closed region between ``[-2^n, 2^n]^3`` and ``[-2^(n+1), 2^(n+1)]^3``
and is tiled by 56 cubes of side ``2^n`` (a 4x4x4 block of that side minus
the inner 2x2x2 block).  A refined cover at level ``n`` replaces every cube
of side smaller than ``2^n`` by the single centered cube of side ``2^(n+1)``.

All cover-member geometry lives on an integer lattice: cube corners are
integers and centers are half-integers, both exactly representable in
binary64, so face and overlap tests below are exact, never tolerance-based.
Dilations by 4/3 and 5/3 are handled on a six-fold scaled integer lattice
for the same reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NotFound, OutOfDomain

# Dilation factors: the "star" cube Q* and "double star" Q** concentric
# with Q.  Chosen so that 1 < 4/3 < 5/3 < 2 keeps Q** of a cube inside the
# union of its neighbors of comparable size.
STAR = "star"
DOUBLE_STAR = "double_star"
_DILATION_NUM = {None: 3, STAR: 4, DOUBLE_STAR: 5}  # half-side x6 = num * side


@dataclass(frozen=True)
class Cube:
    """Axis-aligned cube given by its center and side length.

    Cover members always have an integer side (a power of two) and
    half-integer center coordinates; synthetic cubes (e.g. dilations)
    may have arbitrary positive side.
    """

    center: tuple[float, float, float]
    side: float
    shell: int | None = None

    @property
    def volume(self) -> float:
        return self.side ** 3

    @property
    def half(self) -> float:
        return self.side / 2.0

    def bounds(self) -> np.ndarray:
        """(3, 2) array of [lo, hi] per axis; exact for cover members."""
        c = np.asarray(self.center, dtype=float)
        h = self.half
        return np.stack([c - h, c + h], axis=1)

    def contains(self, x, closed: bool = True) -> bool:
        b = self.bounds()
        x = np.asarray(x, dtype=float)
        if closed:
            return bool(np.all(x >= b[:, 0]) and np.all(x <= b[:, 1]))
        return bool(np.all(x >= b[:, 0]) and np.all(x < b[:, 1]))

    def key(self) -> tuple:
        """Exact identity key on the doubled (integer) lattice."""
        return (
            int(round(2 * self.center[0])),
            int(round(2 * self.center[1])),
            int(round(2 * self.center[2])),
            int(round(2 * self.side)),
        )


def dilate(q: Cube, which: str) -> Cube:
    """Concentric enlargement of ``q``: side 4/3 ('star') or 5/3 ('double_star')."""
    if which not in (STAR, DOUBLE_STAR):
        raise InvalidArgument(f"unknown dilation {which!r}")
    factor = 4.0 / 3.0 if which == STAR else 5.0 / 3.0
    return Cube(center=q.center, side=q.side * factor, shell=None)


def _bounds6(centers2: np.ndarray, sides: np.ndarray, which: str | None) -> np.ndarray:
    """Exact integer bounds, coordinates scaled by 6, for optionally dilated cubes.

    ``centers2`` holds doubled centers (integers); ``sides`` integer sides.
    Half-side x6 is ``3*side`` for the cube itself, ``4*side`` for Q*,
    ``5*side`` for Q**: all integers, so the interval tests are exact.
    """
    num = _DILATION_NUM[which]
    c6 = 3 * centers2  # 6 * center
    h6 = (num * sides)[:, None]
    return np.stack([c6 - h6, c6 + h6], axis=2)  # (M, 3, 2)


def _shell_cubes(n: int) -> list[Cube]:
    """The cubes tiling shell ``n`` in lexicographic center order."""
    out = []
    if n == 0:
        # 64 unit cubes filling [-2, 2]^3.
        offsets = [-1.5, -0.5, 0.5, 1.5]
        for cx in offsets:
            for cy in offsets:
                for cz in offsets:
                    out.append(Cube((cx, cy, cz), 1.0, shell=0))
        return out
    side = float(2 ** n)
    offsets = [-1.5 * side, -0.5 * side, 0.5 * side, 1.5 * side]
    for cx in offsets:
        for cy in offsets:
            for cz in offsets:
                # Drop the inner 2x2x2 block: it is the box covered by
                # the previous shells.
                if max(abs(cx), abs(cy), abs(cz)) < side:
                    continue
                out.append(Cube((cx, cy, cz), side, shell=n))
    return out


@dataclass(frozen=True)
class CubeCover:
    """The full cover of ``[-2^(n_max+1), 2^(n_max+1)]^3`` or a refinement of it.

    ``kind`` is ``"full"`` or ``"refined"``; a refined cover at level ``n``
    consists of the single centered cube of side ``2^(n+1)`` plus all shells
    with index >= ``n``.
    """

    cubes: tuple[Cube, ...]
    kind: str
    n_max: int
    refine_level: int | None = None
    _index: dict = field(default=None, repr=False, compare=False)
    _centers2: np.ndarray = field(default=None, repr=False, compare=False)
    _sides: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        centers2 = np.array(
            [[int(round(2 * c)) for c in q.center] for q in self.cubes], dtype=np.int64
        )
        sides = np.array([int(round(q.side)) for q in self.cubes], dtype=np.int64)
        index = {q.key(): i for i, q in enumerate(self.cubes)}
        object.__setattr__(self, "_centers2", centers2)
        object.__setattr__(self, "_sides", sides)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    @property
    def box_half(self) -> float:
        """Half-length of the covered box."""
        return float(2 ** (self.n_max + 1))

    def index_of(self, q: Cube) -> int:
        try:
            return self._index[q.key()]
        except KeyError:
            raise NotFound(f"cube {q} is not a member of this cover") from None

    def bounds6(self, which: str | None = None) -> np.ndarray:
        """(len, 3, 2) exact integer bounds (x6), optionally dilated."""
        return _bounds6(self._centers2, self._sides, which)


def build_cover(n_max: int) -> CubeCover:
    """Full cover with shells 0..n_max: 64 + 56*n_max cubes."""
    if not isinstance(n_max, (int, np.integer)) or n_max < 1:
        raise InvalidArgument(f"n_max must be an integer >= 1, got {n_max!r}")
    cubes: list[Cube] = []
    for n in range(int(n_max) + 1):
        cubes.extend(_shell_cubes(n))
    return CubeCover(cubes=tuple(cubes), kind="full", n_max=int(n_max))


def build_refined_cover(cover: CubeCover, n: int) -> CubeCover:
    """Refinement at level ``n``: one cube of side ``2^(n+1)`` plus shells >= n."""
    if cover.kind != "full":
        raise InvalidArgument("refinement starts from a full cover")
    if not isinstance(n, (int, np.integer)) or not (1 <= n <= cover.n_max):
        raise InvalidArgument(
            f"refinement level must satisfy 1 <= n <= {cover.n_max}, got {n!r}"
        )
    n = int(n)
    big = Cube((0.0, 0.0, 0.0), float(2 ** (n + 1)), shell=None)
    kept = tuple(q for q in cover.cubes if q.shell is not None and q.shell >= n)
    return CubeCover(
        cubes=(big,) + kept, kind="refined", n_max=cover.n_max, refine_level=n
    )


def neighbors(cover: CubeCover, q: Cube) -> list[Cube]:
    """All cover cubes whose intersection with Q** has positive volume."""
    i = cover.index_of(q)
    mine = _bounds6(
        cover._centers2[i : i + 1], cover._sides[i : i + 1], DOUBLE_STAR
    )[0]
    others = cover.bounds6(None)
    lo = np.maximum(others[:, :, 0], mine[None, :, 0])
    hi = np.minimum(others[:, :, 1], mine[None, :, 1])
    mask = np.all(lo < hi, axis=1)  # strict: positive volume
    return [cover.cubes[j] for j in np.nonzero(mask)[0]]


def containing_cube(cover: CubeCover, x) -> Cube:
    """The cover cube owning point ``x``.

    Ownership is by closure membership; points on shared faces go to the
    cube with lexicographically smallest center, which makes the result
    unique and deterministic.
    """
    x = np.asarray(x, dtype=float)
    half = cover.box_half
    if np.any(np.abs(x) > half):
        raise OutOfDomain(f"point {x.tolist()} outside the covered box [+-{half}]^3")
    b6 = cover.bounds6(None)
    # Cover-cube faces sit at integers, and integer/2 centers: the float
    # bounds are exact, so compare in unscaled coordinates.
    lo = b6[:, :, 0] / 6.0
    hi = b6[:, :, 1] / 6.0
    mask = np.all((x >= lo) & (x <= hi), axis=1)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:  # pragma: no cover - excluded by the box check
        raise OutOfDomain(f"point {x.tolist()} not covered")
    best = min(idx, key=lambda j: cover.cubes[j].center)
    return cover.cubes[best]


@dataclass(frozen=True)
class PropertyReport:
    """Measured geometric constants of a full cover.

    Ratio ranges are (min, max) over the tested cubes or pairs; see
    ``verify_cover_properties`` for the definitions.
    """

    side_over_dist: tuple[float, float]
    adjacent_volume_ratio: tuple[float, float]
    center_dist_over_scale: tuple[float, float]
    smaller_count_per_shell: dict[int, int]
    smaller_count_log_slope: float
    cumulative_counts: list[int]
    shell_sizes: dict[int, int]
    neighbor_count_max: int
    passed: bool

    def as_dict(self) -> dict:
        return {
            "side_over_dist": list(self.side_over_dist),
            "adjacent_volume_ratio": list(self.adjacent_volume_ratio),
            "center_dist_over_scale": list(self.center_dist_over_scale),
            "smaller_count_per_shell": {
                str(k): v for k, v in self.smaller_count_per_shell.items()
            },
            "smaller_count_log_slope": self.smaller_count_log_slope,
            "cumulative_counts": list(self.cumulative_counts),
            "shell_sizes": {str(k): v for k, v in self.shell_sizes.items()},
            "neighbor_count_max": self.neighbor_count_max,
            "passed": self.passed,
        }


def verify_cover_properties(cover: CubeCover) -> PropertyReport:
    """Measure the structural constants of a full cover.

    (i)   side / |center| lies in a fixed interval for every cube outside
          the core region (the ratio is scale-free across shells);
    (ii)  volumes of cubes with touching closures differ by at most 8x;
    (iii) for pairs with |Q'| < |Q|, center distance over side(Q) is
          bounded below and above;
    (iv)  the number of strictly smaller cubes grows affinely per shell,
          hence is O(log |Q|).
    """
    if cover.kind != "full":
        raise InvalidArgument("property verification expects a full cover")
    centers = cover._centers2 / 2.0
    sides = cover._sides.astype(float)
    shells = np.array([q.shell for q in cover.cubes])

    # (i) side vs distance from origin, cubes outside the core shell.
    outer = shells >= 1
    dists = np.linalg.norm(centers[outer], axis=1)
    r1 = sides[outer] / dists
    side_over_dist = (float(r1.min()), float(r1.max()))

    # (ii) adjacency = closures intersect (face, edge or corner contact).
    b6 = cover.bounds6(None)
    lo = np.maximum(b6[:, None, :, 0], b6[None, :, :, 0])
    hi = np.minimum(b6[:, None, :, 1], b6[None, :, :, 1])
    touch = np.all(lo <= hi, axis=2)
    np.fill_diagonal(touch, False)
    ii, jj = np.nonzero(touch)
    vr = (sides[ii] / sides[jj]) ** 3
    adjacent_volume_ratio = (float(vr.min()), float(vr.max()))

    # (iii) center distances for strictly smaller partners.
    smaller = (sides[None, :] < sides[:, None])
    pi, pj = np.nonzero(smaller)
    d = np.linalg.norm(centers[pi] - centers[pj], axis=1) / sides[pi]
    center_dist_over_scale = (float(d.min()), float(d.max()))

    # (iv) strictly-smaller counts per shell and the log fit.
    shell_sizes = {int(n): int(np.sum(shells == n)) for n in range(cover.n_max + 1)}
    smaller_counts = {}
    slope = 0.0
    for n in range(1, cover.n_max + 1):
        side_n = float(2 ** n)
        count = int(np.sum(sides < side_n))
        smaller_counts[n] = count
        log_vol = 3 * n * np.log(2.0)
        slope = max(slope, count / log_vol)
    cumulative = [64 + 56 * n for n in range(cover.n_max + 1)]

    ncmax = max(len(neighbors(cover, q)) for q in cover.cubes)

    passed = (
        shell_sizes[0] == 64
        and all(shell_sizes[n] == 56 for n in range(1, cover.n_max + 1))
        and len(cover) == cumulative[-1]
        and adjacent_volume_ratio[1] == 8.0
        and adjacent_volume_ratio[0] == 0.125
        and all(
            smaller_counts[n] == 64 + 56 * (n - 1)
            for n in range(1, cover.n_max + 1)
        )
    )
    return PropertyReport(
        side_over_dist=side_over_dist,
        adjacent_volume_ratio=adjacent_volume_ratio,
        center_dist_over_scale=center_dist_over_scale,
        smaller_count_per_shell=smaller_counts,
        smaller_count_log_slope=float(slope),
        cumulative_counts=cumulative,
        shell_sizes=shell_sizes,
        neighbor_count_max=int(ncmax),
        passed=bool(passed),
    )


def total_volume(cover: CubeCover) -> int:
    """Exact integer sum of cube volumes."""
    return int(sum(int(s) ** 3 for s in cover._sides))


def write_cover(cover: CubeCover, path) -> None:
    """Line format: ``shell c2x c2y c2z side`` with doubled (integer) centers.

    Centers are half-integers on the unit lattice, so doubling makes every
    column an exact integer.  Refined covers write shell -1 for the big
    centered cube.
    """
    lines = ["# nslocal cover v1: shell c2x c2y c2z side (centers doubled)"]
    lines.append(
        f"# kind={cover.kind} n_max={cover.n_max} "
        f"refine={cover.refine_level if cover.refine_level is not None else -1}"
    )
    for q in cover.cubes:
        c2 = [int(round(2 * c)) for c in q.center]
        sh = q.shell if q.shell is not None else -1
        lines.append(f"{sh} {c2[0]} {c2[1]} {c2[2]} {int(round(q.side))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_cover(path) -> CubeCover:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    meta = {}
    for ln in lines:
        if ln.startswith("# kind="):
            for part in ln[2:].split():
                k, v = part.split("=")
                meta[k] = v
    cubes = []
    for ln in lines:
        if ln.startswith("#"):
            continue
        sh, cx, cy, cz, side = (int(tok) for tok in ln.split())
        cubes.append(
            Cube(
                (cx / 2.0, cy / 2.0, cz / 2.0),
                float(side),
                shell=None if sh < 0 else sh,
            )
        )
    kind = meta.get("kind", "full")
    n_max = int(meta.get("n_max", 1))
    refine = int(meta.get("refine", -1))
    return CubeCover(
        cubes=tuple(cubes),
        kind=kind,
        n_max=n_max,
        refine_level=None if refine < 0 else refine,
    )
