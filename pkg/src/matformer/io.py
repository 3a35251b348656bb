"""Crystal ingestion and artifact serialization.

Supports VASP-5 style POSCAR (species line, Direct or Cartesian, positive
scale, no selective dynamics), a lossless JSON form of crystals and graphs,
simple CSV tables for targets and predictions, and flat key=value run
configs.  All file writes go through a write-temp-then-rename path so
interrupted runs never leave torn artifacts.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .crystal import Crystal, crystal_from_frac, wrap_fractional
from .graphs import Edge, GraphMeta, CrystalGraph, LatticeImage

ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)

SYMBOL_TO_Z = {sym: z for z, sym in enumerate(ELEMENTS, start=1)}


class ParseError(ValueError):
    """Input file error, annotated with a 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    crystal: Crystal
    target: float

    def __post_init__(self):
        if not np.isfinite(self.target):
            raise ValueError(f"record {self.id!r} has a non-finite target")


# --- POSCAR -------------------------------------------------------------------


def parse_poscar(text: str) -> Crystal:
    """Parse VASP-5 POSCAR content into a canonically wrapped crystal."""
    lines = text.splitlines()

    def get(idx: int) -> str:
        if idx >= len(lines):
            raise ParseError(len(lines), "unexpected end of file")
        return lines[idx]

    def floats(idx: int, count: int) -> list[float]:
        fields = get(idx).split()
        if len(fields) < count:
            raise ParseError(idx + 1, f"expected {count} numeric fields")
        try:
            return [float(f) for f in fields[:count]]
        except ValueError as err:
            raise ParseError(idx + 1, f"non-numeric field: {err}") from None

    (scale,) = floats(1, 1)
    if scale <= 0:
        raise ParseError(2, "scale factor must be positive (volume convention unsupported)")
    lattice = np.array([floats(2 + i, 3) for i in range(3)]) * scale

    species_fields = get(5).split()
    if not species_fields or any(f[0].isdigit() for f in species_fields):
        raise ParseError(6, "species symbols line required (VASP-5 layout)")
    numbers = []
    for sym in species_fields:
        if sym not in SYMBOL_TO_Z:
            raise ParseError(6, f"unknown element symbol {sym!r}")
        numbers.append(SYMBOL_TO_Z[sym])

    count_fields = get(6).split()
    try:
        counts = [int(f) for f in count_fields]
    except ValueError:
        raise ParseError(7, "malformed species counts") from None
    if len(counts) != len(numbers) or any(c < 1 for c in counts):
        raise ParseError(7, "species counts do not match the symbols line")

    mode_line = get(7).strip()
    if not mode_line:
        raise ParseError(8, "coordinate mode keyword missing")
    mode = mode_line[0].lower()
    if mode == "s":
        raise ParseError(8, "selective dynamics is not supported")
    if mode == "d":
        cartesian = False
    elif mode in ("c", "k"):
        cartesian = True
    else:
        raise ParseError(8, f"unrecognized coordinate mode {mode_line!r}")

    n = sum(counts)
    coords = np.array([floats(8 + i, 3) for i in range(n)])
    atomic_numbers = np.repeat(numbers, counts)

    if cartesian:
        cart = coords * scale
        frac = cart @ np.linalg.inv(lattice)
    else:
        frac = coords
    return crystal_from_frac(atomic_numbers, wrap_fractional(frac), lattice)


def read_poscar(path: str) -> Crystal:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_poscar(fh.read())


# --- crystal JSON ---------------------------------------------------------------


def crystal_to_dict(crystal: Crystal) -> dict:
    return {
        "atomic_numbers": crystal.atomic_numbers.tolist(),
        "positions": crystal.positions.tolist(),
        "lattice": crystal.lattice.tolist(),
    }


def crystal_from_dict(data: dict) -> Crystal:
    for key in ("atomic_numbers", "positions", "lattice"):
        if key not in data:
            raise ValueError(f"crystal JSON missing field {key!r}")
    return Crystal(
        atomic_numbers=np.asarray(data["atomic_numbers"], dtype=int),
        positions=np.asarray(data["positions"], dtype=float),
        lattice=np.asarray(data["lattice"], dtype=float),
    )


def write_crystal_json(crystal: Crystal) -> str:
    return json.dumps(crystal_to_dict(crystal), indent=1)


def parse_crystal_json(text: str) -> Crystal:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValueError(f"invalid crystal JSON: {err}") from None
    return crystal_from_dict(data)


def read_crystal(path: str) -> Crystal:
    """Dispatch on extension: .json or POSCAR-style text."""
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            return parse_crystal_json(fh.read())
    return read_poscar(path)


# --- graph serialization --------------------------------------------------------


def graph_to_dict(graph: CrystalGraph) -> dict:
    meta = graph.meta
    return {
        "meta": {
            "method": meta.method,
            "neighbor_rank": meta.neighbor_rank,
            "t": meta.t,
            "radius": meta.radius,
            "node_radii": list(meta.node_radii) if meta.node_radii is not None else None,
            "self_edges": meta.self_edges,
        },
        "nodes": [{"index": i, "atomic_number": int(z)} for i, z in enumerate(graph.node_atomic_numbers)],
        "edges": [
            {
                "src": e.src,
                "dst": e.dst,
                "distance": e.distance,
                "image": list(e.image.k),
                "kind": e.kind,
            }
            for e in graph.edges
        ],
    }


def graph_from_dict(data: dict) -> CrystalGraph:
    meta = data["meta"]
    z = np.array([n["atomic_number"] for n in data["nodes"]], dtype=int)
    edges = tuple(
        Edge(
            src=int(e["src"]),
            dst=int(e["dst"]),
            distance=float(e["distance"]),
            image=LatticeImage(tuple(e["image"])),
            kind=e["kind"],
        )
        for e in data["edges"]
    )
    node_radii = meta.get("node_radii")
    return CrystalGraph(
        node_atomic_numbers=z,
        node_features=np.zeros((z.size, 0)),
        edges=edges,
        meta=GraphMeta(
            method=meta["method"],
            neighbor_rank=meta.get("neighbor_rank"),
            t=meta.get("t"),
            radius=meta.get("radius"),
            node_radii=tuple(node_radii) if node_radii is not None else None,
            self_edges=bool(meta.get("self_edges", False)),
        ),
    )


def graph_to_json(graph: CrystalGraph) -> str:
    return json.dumps(graph_to_dict(graph), indent=1)


def graph_to_text(graph: CrystalGraph) -> str:
    """Line-oriented form: a node line per atom, an edge line per edge."""
    out = _stdio.StringIO()
    out.write(f"graph method={graph.meta.method} nodes={graph.n_nodes} edges={len(graph.edges)}\n")
    for i, z in enumerate(graph.node_atomic_numbers):
        out.write(f"node {i} {int(z)}\n")
    for e in graph.edges:
        k1, k2, k3 = e.image.k
        out.write(f"edge {e.src} {e.dst} {e.distance!r} {k1} {k2} {k3} {e.kind}\n")
    return out.getvalue()


# --- CSV tables -----------------------------------------------------------------


def write_targets_csv(rows: list[tuple[str, float]]) -> str:
    out = _stdio.StringIO()
    writer = csv.writer(out)
    writer.writerow(["id", "target"])
    for rid, target in rows:
        writer.writerow([rid, repr(float(target))])
    return out.getvalue()


def parse_targets_csv(text: str) -> dict[str, float]:
    reader = csv.reader(_stdio.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:2]] != ["id", "target"]:
        raise ValueError("targets CSV must start with header 'id,target'")
    out: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < 2:
            raise ParseError(lineno, "expected 'id,target'")
        rid = row[0].strip()
        if rid in out:
            raise ParseError(lineno, f"duplicate id {rid!r}")
        try:
            out[rid] = float(row[1])
        except ValueError:
            raise ParseError(lineno, f"non-numeric target {row[1]!r}") from None
    return out


def write_predictions_csv(rows: list[tuple[str, float, float]]) -> str:
    out = _stdio.StringIO()
    writer = csv.writer(out)
    writer.writerow(["id", "prediction", "target", "abs_err"])
    for rid, pred, target in rows:
        writer.writerow([rid, repr(float(pred)), repr(float(target)), repr(abs(float(pred) - float(target)))])
    return out.getvalue()


def write_training_log_csv(log: list[dict]) -> str:
    out = _stdio.StringIO()
    writer = csv.writer(out)
    writer.writerow(["epoch", "lr", "train_loss", "val_mae", "ewt_0.01", "ewt_0.02"])
    for row in log:
        writer.writerow(
            [
                row["epoch"],
                repr(row["lr"]),
                repr(row["train_loss"]),
                repr(row["val_mae"]),
                repr(row["ewt_0.01"]),
                repr(row["ewt_0.02"]),
            ]
        )
    return out.getvalue()


# --- run config -----------------------------------------------------------------


def parse_run_config(text: str) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# --- atomic writes ----------------------------------------------------------------


def atomic_write(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
