"""
Plain-text Q8 mesh files.

    # comment
    NODES n
    id x y            (m)
    ELEMENTS m
    id n1 n2 n3 n4 n5 n6 n7 n8   (corners counterclockwise, then mid-edge nodes)
"""
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from app.core.errors import MeshFormatError
from app.models import Mesh
from app.services.fem_core import check_jacobians

logger = logging.getLogger(__name__)


def _content_lines(text: str) -> List[Tuple[int, List[str]]]:
    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            lines.append((number, content.split()))
    return lines


def _header(lines: List[Tuple[int, List[str]]], position: int, keyword: str) -> int:
    if position >= len(lines):
        raise MeshFormatError(f"missing '{keyword}' header")
    number, tokens = lines[position]
    if len(tokens) != 2 or tokens[0].upper() != keyword:
        raise MeshFormatError(f"expected '{keyword} <count>', got '{' '.join(tokens)}'", number)
    try:
        count = int(tokens[1])
    except ValueError:
        raise MeshFormatError(f"invalid {keyword.lower()} count '{tokens[1]}'", number)
    if count < 1:
        raise MeshFormatError(f"{keyword.lower()} count must be positive", number)
    return count


def parse_mesh(text: str, thickness: float = 1.0) -> Mesh:
    """
    Parse mesh text.

    Raises:
        MeshFormatError: malformed line (with its number), duplicate ids, unknown
            node references or elements with a non-positive Jacobian
    """
    lines = _content_lines(text)
    n_nodes = _header(lines, 0, "NODES")
    if len(lines) < 1 + n_nodes:
        raise MeshFormatError(f"expected {n_nodes} node lines, file ends early")

    node_index: Dict[int, int] = {}
    coordinates = np.empty((n_nodes, 2))
    for k in range(n_nodes):
        number, tokens = lines[1 + k]
        if len(tokens) != 3:
            raise MeshFormatError(f"node line needs 'id x y', got {len(tokens)} fields", number)
        try:
            node_id, x, y = int(tokens[0]), float(tokens[1]), float(tokens[2])
        except ValueError:
            raise MeshFormatError(f"invalid node line '{' '.join(tokens)}'", number)
        if node_id in node_index:
            raise MeshFormatError(f"duplicate node id {node_id}", number)
        node_index[node_id] = k
        coordinates[k] = (x, y)

    position = 1 + n_nodes
    n_elements = _header(lines, position, "ELEMENTS")
    if len(lines) < position + 1 + n_elements:
        raise MeshFormatError(f"expected {n_elements} element lines, file ends early")
    if len(lines) > position + 1 + n_elements:
        raise MeshFormatError("unexpected content after the element block", lines[position + 1 + n_elements][0])

    element_ids = np.empty(n_elements, dtype=int)
    connectivity = np.empty((n_elements, 8), dtype=int)
    seen = set()
    for k in range(n_elements):
        number, tokens = lines[position + 1 + k]
        if len(tokens) != 9:
            raise MeshFormatError(f"element line needs an id and 8 nodes, got {len(tokens)} fields", number)
        try:
            values = [int(token) for token in tokens]
        except ValueError:
            raise MeshFormatError(f"invalid element line '{' '.join(tokens)}'", number)
        if values[0] in seen:
            raise MeshFormatError(f"duplicate element id {values[0]}", number)
        seen.add(values[0])
        for node_id in values[1:]:
            if node_id not in node_index:
                raise MeshFormatError(f"element {values[0]} references unknown node {node_id}", number)
        element_ids[k] = values[0]
        connectivity[k] = [node_index[node_id] for node_id in values[1:]]

    mesh = Mesh(
        nodes=coordinates,
        elements=connectivity,
        thickness=thickness,
        node_ids=np.array(sorted(node_index, key=node_index.get)),
        element_ids=element_ids,
    )
    inverted = check_jacobians(mesh)
    if inverted:
        labels = ", ".join(str(mesh.element_ids[e]) for e in inverted)
        raise MeshFormatError(f"elements with non-positive Jacobian: {labels}")
    return mesh


def read_mesh(path: Union[str, Path], thickness: float = 1.0) -> Mesh:
    path = Path(path)
    if not path.is_file():
        raise MeshFormatError(f"mesh file not found: {path}")
    mesh = parse_mesh(path.read_text(), thickness)
    logger.info(f"Read mesh {path.name}: {mesh.n_nodes} nodes, {mesh.n_elements} elements")
    return mesh


def format_mesh(mesh: Mesh) -> str:
    lines = [f"NODES {mesh.n_nodes}"]
    for node_id, (x, y) in zip(mesh.node_ids, mesh.nodes):
        lines.append(f"{int(node_id)} {float(x)!r} {float(y)!r}")
    lines.append(f"ELEMENTS {mesh.n_elements}")
    for element_id, nodes in zip(mesh.element_ids, mesh.elements):
        labels = " ".join(str(int(mesh.node_ids[n])) for n in nodes)
        lines.append(f"{int(element_id)} {labels}")
    return "\n".join(lines) + "\n"


def write_mesh(mesh: Mesh, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_mesh(mesh))
    return path
