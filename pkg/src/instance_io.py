"""
Instance and tour file I/O.

Supported formats:
- JSON: {"n": int, "depot": int, "nodes": [[x, y], ...]}
- TSPLIB: NAME/TYPE/DIMENSION/EDGE_WEIGHT_TYPE/NODE_COORD_SECTION subset, EUC_2D only
- Tours: project format (header line with length, one index per line) or TSPLIB TOUR_SECTION
"""

from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union
import json
import logging

import numpy as np
from pydantic import BaseModel, ValidationError, field_validator

from .core import (
    InstanceFormatError,
    Tour,
    TspInstance,
    UnsupportedFormatError,
)
from .templates import render_tour, render_tsplib

logger = logging.getLogger(__name__)

InstanceFormat = Literal["tsplib", "json"]


class InstanceDocument(BaseModel):
    """JSON schema of an instance file."""

    n: int
    depot: int = 0
    nodes: List[Tuple[float, float]]
    name: str = ""

    @field_validator("n")
    @classmethod
    def _check_n(cls, value: int) -> int:
        if value < 2:
            raise ValueError("n must be at least 2")
        return value


def _to_text(data: Union[bytes, str]) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def detect_format(path: Union[str, Path]) -> InstanceFormat:
    """Guess the instance format from the file suffix."""
    suffix = Path(path).suffix.lower()
    if suffix == ".json":
        return "json"
    if suffix == ".tsp":
        return "tsplib"
    raise UnsupportedFormatError(f"cannot infer instance format from suffix '{suffix}'")


def read_instance(
    data: Union[bytes, str],
    format: InstanceFormat,
    depot: Optional[int] = None,
    name: str = "",
) -> TspInstance:
    """
    Parse an instance from raw file contents.

    Args:
        data: File contents
        format: "tsplib" or "json"
        depot: Override the depot index (TSPLIB files default to node 0)
        name: Fallback name when the file carries none

    Returns:
        Parsed instance

    Raises:
        UnsupportedFormatError: Unknown format or non-EUC_2D edge weights
        InstanceFormatError: Malformed contents
    """
    text = _to_text(data)
    if format == "json":
        return _read_json(text, depot, name)
    if format == "tsplib":
        return _read_tsplib(text, depot, name)
    raise UnsupportedFormatError(f"unknown instance format: {format}")


def _read_json(text: str, depot: Optional[int], name: str) -> TspInstance:
    try:
        doc = InstanceDocument.model_validate_json(text)
    except ValidationError as e:
        raise InstanceFormatError(f"invalid instance JSON: {e}") from e

    if len(doc.nodes) != doc.n:
        raise InstanceFormatError(f"n={doc.n} but {len(doc.nodes)} nodes listed")

    try:
        return TspInstance(
            nodes=np.asarray(doc.nodes, dtype=np.float64),
            depot=doc.depot if depot is None else depot,
            name=doc.name or name,
        )
    except ValueError as e:
        raise InstanceFormatError(str(e)) from e


def _read_tsplib(text: str, depot: Optional[int], name: str) -> TspInstance:
    header = {}
    coords = {}
    in_coords = False

    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line:
            continue
        upper = line.upper()
        if upper.startswith("EOF"):
            break
        if upper.startswith("NODE_COORD_SECTION"):
            in_coords = True
            continue
        if upper.endswith("_SECTION"):
            # Any other section ends the coordinates
            if in_coords:
                break
            raise UnsupportedFormatError(f"unsupported TSPLIB section: {line}")
        if in_coords:
            parts = line.split()
            if len(parts) < 3:
                raise InstanceFormatError(f"invalid coordinate line: {line}")
            try:
                coords[int(float(parts[0]))] = (float(parts[1]), float(parts[2]))
            except ValueError as e:
                raise InstanceFormatError(f"invalid coordinate line: {line}") from e
            continue
        if ":" in line:
            key, value = line.split(":", 1)
            header[key.strip().upper()] = value.strip()

    edge_type = header.get("EDGE_WEIGHT_TYPE", "")
    if edge_type.upper() != "EUC_2D":
        raise UnsupportedFormatError(
            f"only EUC_2D instances are supported, got EDGE_WEIGHT_TYPE '{edge_type}'"
        )
    if not coords:
        raise InstanceFormatError("no NODE_COORD_SECTION entries found")

    dimension = header.get("DIMENSION")
    if dimension is not None:
        try:
            dimension = int(dimension)
        except ValueError as e:
            raise InstanceFormatError(f"invalid DIMENSION: {dimension}") from e
    if dimension is not None and dimension != len(coords):
        raise InstanceFormatError(f"DIMENSION {dimension} but {len(coords)} coordinates")

    points = np.asarray([coords[i] for i in sorted(coords)], dtype=np.float64)
    nodes, scale, offset = rescale_to_unit(points)

    try:
        return TspInstance(
            nodes=nodes,
            depot=0 if depot is None else depot,
            name=header.get("NAME", name),
            scale=scale,
            offset=offset,
        )
    except ValueError as e:
        raise InstanceFormatError(str(e)) from e


def rescale_to_unit(points: np.ndarray) -> Tuple[np.ndarray, float, Tuple[float, float]]:
    """
    Map points into [0, 1]^2 by translation and one uniform scale (the max extent).

    Returns:
        (unit points, scale, offset) with original = unit * scale + offset
    """
    lo = points.min(axis=0)
    extent = float((points.max(axis=0) - lo).max())
    scale = extent if extent > 0 else 1.0
    unit = np.clip((points - lo) / scale, 0.0, 1.0)
    return unit, scale, (float(lo[0]), float(lo[1]))


def write_instance(instance: TspInstance, format: InstanceFormat = "json") -> str:
    """Serialize an instance to JSON or TSPLIB text."""
    if format == "json":
        doc = {
            "n": instance.n,
            "depot": instance.depot,
            "nodes": instance.nodes.tolist(),
        }
        if instance.name:
            doc["name"] = instance.name
        return json.dumps(doc)
    if format == "tsplib":
        return render_tsplib(
            name=instance.name,
            nodes=instance.nodes.tolist(),
            comment=f"depot {instance.depot}",
        )
    raise UnsupportedFormatError(f"unknown instance format: {format}")


def load_instance(path: Union[str, Path], depot: Optional[int] = None) -> TspInstance:
    """Read an instance file, inferring the format from its suffix."""
    path = Path(path)
    instance = read_instance(path.read_bytes(), detect_format(path), depot=depot, name=path.stem)
    logger.debug(f"Loaded instance {instance.name} (n={instance.n}) from {path}")
    return instance


def save_instance(instance: TspInstance, path: Union[str, Path]) -> Path:
    """Write an instance file in the format implied by its suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_instance(instance, detect_format(path)))
    return path


def write_tour(tour: Tour, length: float, name: str = "") -> str:
    """Serialize a tour: header line with the length, then one node index per line."""
    return render_tour(name, tour.order, length)


def read_tour(data: Union[bytes, str]) -> Tuple[Tour, Optional[float]]:
    """
    Parse a tour file.

    Accepts the project format (optional '#' header carrying 'length:') and TSPLIB
    tour files (1-based TOUR_SECTION terminated by -1 or EOF).

    Returns:
        (tour, length from the header or None)
    """
    text = _to_text(data)
    lines = [line.strip() for line in text.splitlines() if line.strip()]

    if any(line.upper().startswith("TOUR_SECTION") for line in lines):
        return _read_tsplib_tour(lines), None

    length = None
    order = []
    for line in lines:
        if line.startswith("#"):
            tokens = line.lstrip("#").split()
            for i, token in enumerate(tokens[:-1]):
                if token == "length:":
                    try:
                        length = float(tokens[i + 1])
                    except ValueError as e:
                        raise InstanceFormatError(f"invalid tour header: {line}") from e
            continue
        try:
            order.append(int(line))
        except ValueError as e:
            raise InstanceFormatError(f"invalid tour line: {line}") from e

    if not order:
        raise InstanceFormatError("tour file lists no nodes")
    return Tour.from_sequence(order), length


def _read_tsplib_tour(lines: List[str]) -> Tour:
    order = []
    in_section = False
    for line in lines:
        upper = line.upper()
        if upper.startswith("TOUR_SECTION"):
            in_section = True
            continue
        if not in_section:
            continue
        if line.startswith("-1") or upper.startswith("EOF"):
            break
        for token in line.split():
            try:
                order.append(int(token) - 1)
            except ValueError as e:
                raise InstanceFormatError(f"invalid TOUR_SECTION entry: {token}") from e
    if not order:
        raise InstanceFormatError("TOUR_SECTION is empty")
    return Tour.from_sequence(order)
