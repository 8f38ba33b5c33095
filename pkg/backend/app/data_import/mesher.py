"""
Structured Q8 meshes for the bundled benchmarks.

Geometry values follow published set-ups where the text gives them; the rest
(beam supports, tension-shear notches, dam outline and notch) are
reconstructions and can be changed through the generator parameters.
Lengths are in m.
"""
import logging
import math
from typing import Callable, Dict, Iterable, Optional, Sequence, Set, Tuple

import numpy as np

from app.models import Mesh

logger = logging.getLogger(__name__)

Mapping = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


def graded_coordinates(breaks: Sequence[float], size: float) -> np.ndarray:
    """Coordinates through every break point with spacing no larger than `size`."""
    coordinates = [float(breaks[0])]
    for a, b in zip(breaks, breaks[1:]):
        count = max(1, int(math.ceil((b - a) / size - 1e-9)))
        coordinates.extend(np.linspace(a, b, count + 1)[1:].tolist())
    return np.array(coordinates)


def _lattice(cells: np.ndarray) -> np.ndarray:
    points = np.empty(2 * len(cells) - 1)
    points[0::2] = cells
    points[1::2] = 0.5 * (cells[:-1] + cells[1:])
    return points


def structured_mesh(
    xs: np.ndarray,
    ys: np.ndarray,
    removed: Iterable[Tuple[int, int]] = (),
    thickness: float = 1.0,
    mapping: Optional[Mapping] = None,
) -> Mesh:
    """
    Q8 mesh of the cells of a tensor grid, minus the removed (column, row) cells.

    Args:
        xs, ys: Increasing cell boundary coordinates
        removed: Cells left out (notches)
        thickness: Out-of-plane thickness
        mapping: Optional map applied to the lattice coordinates

    Returns:
        Mesh with elements numbered row by row from the bottom
    """
    removed: Set[Tuple[int, int]] = set(removed)
    nx, ny = len(xs) - 1, len(ys) - 1
    px, py = _lattice(np.asarray(xs, dtype=float)), _lattice(np.asarray(ys, dtype=float))
    cells = [(i, j) for j in range(ny) for i in range(nx) if (i, j) not in removed]

    used = np.zeros((len(py), len(px)), dtype=bool)
    offsets = [(0, 0), (2, 0), (2, 2), (0, 2), (1, 0), (2, 1), (1, 2), (0, 1)]
    for i, j in cells:
        for di, dj in offsets:
            used[2 * j + dj, 2 * i + di] = True
    index = -np.ones(used.shape, dtype=int)
    index[used] = np.arange(used.sum())

    grid_x, grid_y = np.meshgrid(px, py)
    x, y = grid_x[used], grid_y[used]
    if mapping is not None:
        x, y = mapping(x, y)
    elements = np.array([[index[2 * j + dj, 2 * i + di] for di, dj in offsets] for i, j in cells])
    return Mesh(nodes=np.column_stack((x, y)), elements=elements, thickness=thickness)


def _nearest(mesh: Mesh, point: Sequence[float]) -> int:
    return int(np.argmin(np.linalg.norm(mesh.nodes - np.asarray(point), axis=1)))


# ============================================================================
# BENCHMARKS
# ============================================================================

def bending_beam(
    length: float = 0.84,
    height: float = 0.10,
    span: float = 0.80,
    notch_depth: float = 0.03,
    columns: int = 39,
    rows: int = 5,
    thickness: float = 0.10,
) -> Mesh:
    """
    Three-point bending beam with a one-column notch at mid-span.

    The two outer columns end at the supports; the odd number of inner columns
    centres one column, the notch, on the load line.
    """
    if columns < 3 or columns % 2 == 0:
        raise ValueError("the beam needs an odd column count of at least 3")
    overhang = 0.5 * (length - span)
    inner = columns - 2
    xs = np.concatenate(([0.0], overhang + span * np.arange(inner + 1) / inner, [length]))
    # Rows through the notch, rounding half up: 5 rows at 30 / 100 give 2.
    rows_below = min(max(1, int(math.floor(rows * notch_depth / height + 0.5 + 1e-9))), rows - 1)
    ys = np.concatenate((np.linspace(0.0, notch_depth, rows_below + 1),
                         np.linspace(notch_depth, height, rows - rows_below + 1)[1:]))
    notch_column = columns // 2
    removed = [(notch_column, j) for j in range(rows_below)]
    mesh = structured_mesh(xs, ys, removed, thickness)

    y = mesh.nodes[:, 1]
    tol = 1e-9 * length
    mid = 0.5 * length
    mesh.node_sets = {
        "load": np.array([_nearest(mesh, (mid, height))]),
        "support_left": np.array([_nearest(mesh, (overhang, 0.0))]),
        "support_right": np.array([_nearest(mesh, (length - overhang, 0.0))]),
        "mouth_left": np.array([_nearest(mesh, (xs[notch_column], 0.0))]),
        "mouth_right": np.array([_nearest(mesh, (xs[notch_column + 1], 0.0))]),
        "bottom": np.flatnonzero(np.abs(y) < tol),
        "top": np.flatnonzero(np.abs(y - height) < tol),
    }
    logger.info(f"Beam mesh {columns}x{rows}: {mesh.n_elements} elements, notch width "
                f"{(xs[notch_column + 1] - xs[notch_column]) * 1e3:.2f} mm")
    return mesh


def tension_shear_specimen(
    size: float = 0.20,
    notch_depth: float = 0.025,
    notch_width: float = 0.005,
    element_size: float = 0.01,
    thickness: float = 0.05,
) -> Mesh:
    """Square plate with two opposite edge notches at mid-height."""
    half = 0.5 * size
    xs = graded_coordinates([0.0, notch_depth, size - notch_depth, size], element_size)
    ys = graded_coordinates([0.0, half - 0.5 * notch_width, half + 0.5 * notch_width, size], element_size)
    band = [j for j in range(len(ys) - 1) if ys[j] >= half - 0.5 * notch_width - 1e-12 and ys[j + 1] <= half + 0.5 * notch_width + 1e-12]
    removed = [(i, j) for j in band for i in range(len(xs) - 1)
               if xs[i + 1] <= notch_depth + 1e-12 or xs[i] >= size - notch_depth - 1e-12]
    mesh = structured_mesh(xs, ys, removed, thickness)

    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    tol = 1e-9 * size
    mesh.node_sets = {
        "top": np.flatnonzero(np.abs(y - size) < tol),
        "bottom": np.flatnonzero(np.abs(y) < tol),
        "left_upper": np.flatnonzero((np.abs(x) < tol) & (y > half + 0.5 * notch_width + tol)),
        "right_lower": np.flatnonzero((np.abs(x - size) < tol) & (y < half - 0.5 * notch_width - tol)),
        "top_mid": np.array([_nearest(mesh, (half, size))]),
        "bottom_mid": np.array([_nearest(mesh, (half, 0.0))]),
    }
    logger.info(f"Tension-shear mesh: {mesh.n_elements} elements")
    return mesh


def gravity_dam(
    height: float = 2.40,
    base: float = 1.80,
    crest: float = 0.40,
    notch_height: float = 0.80,
    notch_depth: float = 0.15,
    notch_width: float = 0.05,
    element_size: float = 0.10,
    thickness: float = 0.30,
) -> Mesh:
    """
    Dam section with a vertical upstream face at x = 0 and a straight downstream face.

    Built on a unit-width grid mapped by x = xi * w(y); the notch on the upstream
    face ends at x = notch_depth on the notch axis.
    """
    def width(y: np.ndarray) -> np.ndarray:
        return base - (base - crest) * y / height

    xi_notch = notch_depth / float(width(np.asarray(notch_height)))
    xis = graded_coordinates([0.0, xi_notch, 1.0], element_size / base)
    lower, upper = notch_height - 0.5 * notch_width, notch_height + 0.5 * notch_width
    ys = graded_coordinates([0.0, lower, upper, height], element_size)
    band = [j for j in range(len(ys) - 1) if ys[j] >= lower - 1e-12 and ys[j + 1] <= upper + 1e-12]
    removed = [(i, j) for j in band for i in range(len(xis) - 1) if xis[i + 1] <= xi_notch + 1e-12]

    def mapping(xi: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return xi * width(y), y

    mesh = structured_mesh(xis, ys, removed, thickness, mapping)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    tol = 1e-9 * height
    mesh.node_sets = {
        "base": np.flatnonzero(np.abs(y) < tol),
        "upstream": np.flatnonzero(np.abs(x) < tol),
        "mouth_lower": np.array([_nearest(mesh, (0.0, lower))]),
        "mouth_upper": np.array([_nearest(mesh, (0.0, upper))]),
    }
    logger.info(f"Dam mesh: {mesh.n_elements} elements")
    return mesh


GENERATORS: Dict[str, Callable[..., Mesh]] = {
    "beam": bending_beam,
    "tension_shear": tension_shear_specimen,
    "dam": gravity_dam,
}

# Generator parameters given as counts rather than lengths.
COUNT_PARAMETERS = {"columns", "rows"}


def generate(name: str, **parameters) -> Mesh:
    if name not in GENERATORS:
        raise ValueError(f"unknown mesh generator '{name}' (known: {', '.join(sorted(GENERATORS))})")
    for key in COUNT_PARAMETERS & parameters.keys():
        parameters[key] = int(parameters[key])
    return GENERATORS[name](**parameters)
