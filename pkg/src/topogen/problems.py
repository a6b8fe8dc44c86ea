"""Constraint sampling: boundary-condition catalog, random problem draws,
and the two negative-sample recipes (extra-load perturbation, detached-blob
augmentation).

The catalog provides 47 numbered support scenarios on the rectangular
domain: ids 0..41 form the training pool, ids 42..46 are reserved as a
structurally distinct held-out pool.  `docs/bc_catalog.md` ships the full
id -> description table; `catalog_table()` regenerates it.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fea import BoundaryCondition, GridDomain
from .metrics import BINARIZATION_THRESHOLD, connected_components

TRAIN_BC_IDS = tuple(range(42))
TEST_BC_IDS = tuple(range(42, 47))

# Volume fractions 0.30 .. 0.50 in steps of 0.02 (11 values).
VOLUME_GRID = tuple(round(0.30 + 0.02 * k, 2) for k in range(11))

# Load directions 0 .. pi in steps of pi/6; components snapped so axis-aligned
# directions carry exact zeros.
def _direction(k: int):
    theta = k * np.pi / 6.0
    fx, fy = np.cos(theta), np.sin(theta)
    if abs(fx) < 1e-12:
        fx = 0.0
    if abs(fy) < 1e-12:
        fy = 0.0
    return fx, fy


DIRECTION_GRID = tuple(_direction(k) for k in range(7))


class NoSpaceError(RuntimeError):
    """Raised when no detached blob can be placed in the void region."""


class UnknownScenarioError(KeyError):
    """Raised for boundary-condition ids outside the catalog."""


@dataclass(frozen=True)
class ConstraintConfig:
    volume_grid: tuple = VOLUME_GRID
    directions: tuple = DIRECTION_GRID
    train_ids: tuple = TRAIN_BC_IDS
    test_ids: tuple = TEST_BC_IDS


@dataclass(frozen=True)
class ProblemSpec:
    """One generation task: grid, volume budget, supports, point loads."""

    domain: GridDomain
    volume_fraction: float
    bc: BoundaryCondition
    loads: tuple  # ((node, fx, fy), ...)

    @property
    def bc_id(self) -> int:
        return self.bc.scenario_id


# --------------------------------------------------------------------------
# Catalog construction helpers.  All node sets are expressed on the
# (nx+1) x (ny+1) node lattice; "half" edges include the midpoint node.

def _edge(which: str, nx: int, ny: int, part: str = "full"):
    if which in ("left", "right"):
        ix = 0 if which == "left" else nx
        idx = np.arange(ny + 1)
        if part == "low":
            idx = idx[: ny // 2 + 1]
        elif part == "high":
            idx = idx[ny // 2:]
        return [iy * (nx + 1) + ix for iy in idx]
    iy = 0 if which == "bottom" else ny
    idx = np.arange(nx + 1)
    if part == "low":
        idx = idx[: nx // 2 + 1]
    elif part == "high":
        idx = idx[nx // 2:]
    return [iy * (nx + 1) + ix for ix in idx]


def _corner(which: str, nx: int, ny: int) -> int:
    ix = 0 if "l" in which else nx
    iy = 0 if "b" in which else ny
    return iy * (nx + 1) + ix


def _pin(nodes, axes=(0, 1)):
    if isinstance(nodes, (int, np.integer)):
        nodes = [nodes]
    return [(int(n), a) for n in nodes for a in axes]


def _scenarios(nx: int, ny: int):
    """Ordered (description, fixed-dof list) pairs; index = scenario id."""
    e = lambda which, part="full": _edge(which, nx, ny, part)
    c = lambda which: _corner(which, nx, ny)
    s = []
    add = lambda desc, dofs: s.append((desc, dofs))

    # 0-4: full-edge clamps and the canonical simply supported beam
    add("left edge clamped (cantilever)", _pin(e("left")))
    add("bottom-left corner pinned, bottom-right corner pinned in y",
        _pin(c("bl")) + _pin(c("br"), (1,)))
    add("right edge clamped", _pin(e("right")))
    add("bottom edge clamped", _pin(e("bottom")))
    add("top edge clamped", _pin(e("top")))
    # 5-12: half-edge clamps
    add("lower half of left edge clamped", _pin(e("left", "low")))
    add("upper half of left edge clamped", _pin(e("left", "high")))
    add("lower half of right edge clamped", _pin(e("right", "low")))
    add("upper half of right edge clamped", _pin(e("right", "high")))
    add("left half of bottom edge clamped", _pin(e("bottom", "low")))
    add("right half of bottom edge clamped", _pin(e("bottom", "high")))
    add("left half of top edge clamped", _pin(e("top", "low")))
    add("right half of top edge clamped", _pin(e("top", "high")))
    # 13-16: adjacent corner pairs pinned in both axes
    add("bottom-left and bottom-right corners pinned",
        _pin(c("bl")) + _pin(c("br")))
    add("top-left and top-right corners pinned", _pin(c("tl")) + _pin(c("tr")))
    add("bottom-left and top-left corners pinned", _pin(c("bl")) + _pin(c("tl")))
    add("bottom-right and top-right corners pinned",
        _pin(c("br")) + _pin(c("tr")))
    # 17-20: pin + perpendicular single-axis support on the facing corner
    add("top-left corner pinned, top-right corner pinned in y",
        _pin(c("tl")) + _pin(c("tr"), (1,)))
    add("bottom-left corner pinned, top-left corner pinned in x",
        _pin(c("bl")) + _pin(c("tl"), (0,)))
    add("bottom-right corner pinned, top-right corner pinned in x",
        _pin(c("br")) + _pin(c("tr"), (0,)))
    add("bottom-right corner pinned, bottom-left corner pinned in y",
        _pin(c("br")) + _pin(c("bl"), (1,)))
    # 21-28: full-edge roller plus an opposite corner pin
    add("left edge on x rollers, bottom-right corner pinned",
        _pin(e("left"), (0,)) + _pin(c("br")))
    add("left edge on x rollers, top-right corner pinned",
        _pin(e("left"), (0,)) + _pin(c("tr")))
    add("right edge on x rollers, bottom-left corner pinned",
        _pin(e("right"), (0,)) + _pin(c("bl")))
    add("right edge on x rollers, top-left corner pinned",
        _pin(e("right"), (0,)) + _pin(c("tl")))
    add("bottom edge on y rollers, top-left corner pinned",
        _pin(e("bottom"), (1,)) + _pin(c("tl")))
    add("bottom edge on y rollers, top-right corner pinned",
        _pin(e("bottom"), (1,)) + _pin(c("tr")))
    add("top edge on y rollers, bottom-left corner pinned",
        _pin(e("top"), (1,)) + _pin(c("bl")))
    add("top edge on y rollers, bottom-right corner pinned",
        _pin(e("top"), (1,)) + _pin(c("br")))
    # 29-32: L-shaped clamps around one corner
    add("corner clamp: lower left edge half + left bottom edge half",
        _pin(sorted(set(e("left", "low") + e("bottom", "low")))))
    add("corner clamp: lower right edge half + right bottom edge half",
        _pin(sorted(set(e("right", "low") + e("bottom", "high")))))
    add("corner clamp: upper left edge half + left top edge half",
        _pin(sorted(set(e("left", "high") + e("top", "low")))))
    add("corner clamp: upper right edge half + right top edge half",
        _pin(sorted(set(e("right", "high") + e("top", "high")))))
    # 33-36: matching half-edge clamps on opposite edges
    add("lower halves of left and right edges clamped",
        _pin(e("left", "low") + e("right", "low")))
    add("upper halves of left and right edges clamped",
        _pin(e("left", "high") + e("right", "high")))
    add("left halves of bottom and top edges clamped",
        _pin(e("bottom", "low") + e("top", "low")))
    add("right halves of bottom and top edges clamped",
        _pin(e("bottom", "high") + e("top", "high")))
    # 37-41: full-edge clamp plus a far corner pin
    add("left edge clamped, bottom-right corner pinned",
        _pin(e("left")) + _pin(c("br")))
    add("left edge clamped, top-right corner pinned",
        _pin(e("left")) + _pin(c("tr")))
    add("right edge clamped, bottom-left corner pinned",
        _pin(e("right")) + _pin(c("bl")))
    add("bottom edge clamped, top-left corner pinned",
        _pin(e("bottom")) + _pin(c("tl")))
    add("top edge clamped, bottom-left corner pinned",
        _pin(e("top")) + _pin(c("bl")))
    # 42-46: held-out pool, structurally distinct from the training ids
    add("diagonal corners pinned: bottom-left and top-right",
        _pin(c("bl")) + _pin(c("tr")))
    add("diagonal corners pinned: bottom-right and top-left",
        _pin(c("br")) + _pin(c("tl")))
    add("all four corners pinned",
        _pin(c("bl")) + _pin(c("br")) + _pin(c("tl")) + _pin(c("tr")))
    add("left and right edges on y rollers, bottom-left corner pinned in x",
        _pin(e("left"), (1,)) + _pin(e("right"), (1,)) + _pin(c("bl"), (0,)))
    add("left and right edges clamped",
        _pin(e("left") + e("right")))
    return s


def catalog_size() -> int:
    return len(_scenarios(2, 2))


def catalog_table(nx: int = 64, ny: int = 64):
    """(id, description, fixed dof count) rows for the documented catalog."""
    return [(i, desc, len(set(dofs)))
            for i, (desc, dofs) in enumerate(_scenarios(nx, ny))]


def bc_catalog(scenario_id: int, nx: int, ny: int) -> BoundaryCondition:
    """Boundary condition for a catalog id, instantiated on an nx x ny grid."""
    scenarios = _scenarios(nx, ny)
    if not 0 <= scenario_id < len(scenarios):
        raise UnknownScenarioError(
            f"scenario {scenario_id} outside catalog 0..{len(scenarios) - 1}")
    _, dofs = scenarios[scenario_id]
    return BoundaryCondition(scenario_id, np.asarray(dofs, dtype=np.int64))


def boundary_nodes(nx: int, ny: int) -> np.ndarray:
    """All node ids on the domain outline, sorted ascending."""
    ids = set(_edge("left", nx, ny)) | set(_edge("right", nx, ny)) \
        | set(_edge("bottom", nx, ny)) | set(_edge("top", nx, ny))
    return np.array(sorted(ids), dtype=np.int64)


def _valid_load(bc: BoundaryCondition, node: int, fx: float, fy: float) -> bool:
    if fx == 0.0 and fy == 0.0:
        return False
    if fx != 0.0 and bc.is_fixed(node, 0):
        return False
    if fy != 0.0 and bc.is_fixed(node, 1):
        return False
    return True


def _draw_load(rng, bc, candidates, directions, taken=()):
    while True:
        node = int(candidates[rng.integers(len(candidates))])
        fx, fy = directions[rng.integers(len(directions))]
        if node not in taken and _valid_load(bc, node, fx, fy):
            return node, fx, fy


def sample_problem(rng: np.random.Generator, config: ConstraintConfig,
                   domain: GridDomain, split: str = "train") -> ProblemSpec:
    """Draw one problem: volume fraction, scenario from the split, one unit
    load at an unconstrained boundary node with a grid direction."""
    ids = config.train_ids if split == "train" else config.test_ids
    vf = float(config.volume_grid[rng.integers(len(config.volume_grid))])
    bc = bc_catalog(int(ids[rng.integers(len(ids))]), domain.nx, domain.ny)
    candidates = boundary_nodes(domain.nx, domain.ny)
    node, fx, fy = _draw_load(rng, bc, candidates, config.directions)
    return ProblemSpec(domain=domain, volume_fraction=vf, bc=bc,
                       loads=((node, fx, fy),))


def fake_load_perturb(problem: ProblemSpec, rng: np.random.Generator,
                      config: ConstraintConfig | None = None) -> ProblemSpec:
    """Copy of the problem with one extra valid boundary load at a new node.

    Optimizing the perturbed problem yields structures that satisfy basic
    requirements of the original one but are (statistically) non-optimal
    for it.
    """
    config = config or ConstraintConfig()
    domain, bc = problem.domain, problem.bc
    taken = {int(n) for n, _, _ in problem.loads}
    candidates = boundary_nodes(domain.nx, domain.ny)
    node, fx, fy = _draw_load(rng, bc, candidates, config.directions, taken)
    return replace(problem, loads=problem.loads + ((node, fx, fy),))


# Blob shapes for the detached-material augmentation: 1-3 element rectangles.
_BLOB_SHAPES = ((1, 1), (1, 2), (2, 1), (1, 3), (3, 1))


def add_floating_material(densities: np.ndarray, rng: np.random.Generator,
                          forbidden: np.ndarray | None = None) -> np.ndarray:
    """Place one small solid rectangle detached from everything else.

    The blob must not touch existing material (8-connectivity) nor any
    element marked in `forbidden` (e.g. load/support pixels).  Raises
    NoSpaceError when no placement exists.
    """
    dens = np.asarray(densities, dtype=np.float64)
    solid = dens > BINARIZATION_THRESHOLD
    ny, nx = solid.shape
    blocked = solid.copy()
    if forbidden is not None:
        blocked |= np.asarray(forbidden, dtype=bool)
    # Any cell 8-adjacent to material is off limits for the blob itself.
    near = solid.copy()
    near[:-1, :] |= solid[1:, :]
    near[1:, :] |= solid[:-1, :]
    near[:, :-1] |= solid[:, 1:]
    near[:, 1:] |= solid[:, :-1]
    near[:-1, :-1] |= solid[1:, 1:]
    near[:-1, 1:] |= solid[1:, :-1]
    near[1:, :-1] |= solid[:-1, 1:]
    near[1:, 1:] |= solid[:-1, :-1]
    blocked |= near

    options = []
    cum = np.pad(blocked.astype(np.int64), ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    for h, w in _BLOB_SHAPES:
        if h > ny or w > nx:
            continue
        window = (cum[h:, w:] - cum[:-h, w:] - cum[h:, :-w] + cum[:-h, :-w])
        free_y, free_x = np.nonzero(window == 0)
        options.extend((int(y), int(x), h, w) for y, x in zip(free_y, free_x))
    if not options:
        raise NoSpaceError("void region cannot host a detached blob")
    y, x, h, w = options[rng.integers(len(options))]
    out = dens.copy()
    out[y:y + h, x:x + w] = 1.0
    return out


def has_single_component(densities: np.ndarray) -> bool:
    solid = np.asarray(densities) > BINARIZATION_THRESHOLD
    return solid.any() and connected_components(solid) == 1
