import json
import os

import numpy as np
import pytest

from matformer import io
from matformer.crystal import frac_to_cart
from matformer.graphs import add_self_connecting_edges, build_radius_graph
from matformer.synthetic import random_corpus

MINIMAL_POSCAR = """hydrogen cube
1.0
1.0 0.0 0.0
0.0 1.0 0.0
0.0 0.0 1.0
H
1
Direct
0.0 0.0 0.0
"""

TWO_SPECIES_POSCAR = """rock salt fragment
2.0
1.0 0.0 0.0
0.0 1.0 0.0
0.0 0.0 1.0
Na Cl
1 1
Direct
0.0 0.0 0.0
0.5 0.5 0.5
"""


class TestParsePoscar:
    def test_minimal_cube(self):
        c = io.parse_poscar(MINIMAL_POSCAR)
        assert c.n_atoms == 1
        assert c.atomic_numbers[0] == 1
        assert np.allclose(c.lattice, np.eye(3))

    def test_scale_factor_scales_lattice_and_direct_positions(self):
        c = io.parse_poscar(TWO_SPECIES_POSCAR)
        assert np.allclose(c.lattice, 2.0 * np.eye(3))
        expected = frac_to_cart(np.array([[0, 0, 0], [0.5, 0.5, 0.5]]), c.lattice)
        assert np.allclose(c.positions, expected)
        assert list(c.atomic_numbers) == [11, 17]

    def test_cartesian_mode(self):
        lines = MINIMAL_POSCAR.splitlines()
        lines[7] = "Cartesian"
        lines[8] = "0.25 0.25 0.25"
        c = io.parse_poscar("\n".join(lines))
        assert np.allclose(c.positions[0], [0.25, 0.25, 0.25])

    def test_cartesian_mode_applies_scale(self):
        lines = TWO_SPECIES_POSCAR.splitlines()
        lines[7] = "Cartesian"
        lines[8] = "0.1 0.2 0.3"
        lines[9] = "1.0 1.0 1.0"
        c = io.parse_poscar("\n".join(lines))
        assert np.allclose(c.positions[0], [0.2, 0.4, 0.6])

    def test_negative_scale_rejected(self):
        bad = MINIMAL_POSCAR.replace("1.0\n1.0 0.0", "-1.0\n1.0 0.0")
        with pytest.raises(io.ParseError, match="line 2"):
            io.parse_poscar(bad)

    def test_selective_dynamics_rejected(self):
        lines = MINIMAL_POSCAR.splitlines()
        lines.insert(7, "Selective dynamics")
        with pytest.raises(io.ParseError, match="line 8"):
            io.parse_poscar("\n".join(lines))

    def test_unknown_element(self):
        with pytest.raises(io.ParseError, match="line 6"):
            io.parse_poscar(MINIMAL_POSCAR.replace("\nH\n", "\nXx\n"))

    def test_malformed_counts(self):
        with pytest.raises(io.ParseError, match="line 7"):
            io.parse_poscar(MINIMAL_POSCAR.replace("\n1\nDirect", "\none\nDirect"))

    def test_count_species_mismatch(self):
        with pytest.raises(io.ParseError, match="line 7"):
            io.parse_poscar(MINIMAL_POSCAR.replace("\n1\nDirect", "\n1 2\nDirect"))

    def test_missing_mode_keyword(self):
        with pytest.raises(io.ParseError, match="line 8"):
            io.parse_poscar(MINIMAL_POSCAR.replace("Direct", "w 0 0"))

    def test_non_numeric_coordinates(self):
        with pytest.raises(io.ParseError, match="line 9"):
            io.parse_poscar(MINIMAL_POSCAR.replace("0.0 0.0 0.0", "a b c"))

    def test_truncated_file(self):
        with pytest.raises(io.ParseError):
            io.parse_poscar("comment\n1.0\n1 0 0\n")

    def test_positions_wrapped(self):
        text = MINIMAL_POSCAR.replace("0.0 0.0 0.0", "1.25 -0.25 0.5")
        c = io.parse_poscar(text)
        assert np.allclose(c.wrapped_frac_coords[0], [0.25, 0.75, 0.5])


class TestCrystalJson:
    def test_round_trip_exact(self):
        for crystal in random_corpus(20, seed=30):
            text = io.write_crystal_json(crystal)
            back = io.parse_crystal_json(text)
            assert np.array_equal(back.positions, crystal.positions)
            assert np.array_equal(back.lattice, crystal.lattice)
            assert np.array_equal(back.atomic_numbers, crystal.atomic_numbers)

    def test_rejects_empty_atom_list(self):
        with pytest.raises(ValueError):
            io.parse_crystal_json(json.dumps({"atomic_numbers": [], "positions": [], "lattice": np.eye(3).tolist()}))

    def test_rejects_singular_lattice(self):
        payload = {
            "atomic_numbers": [1],
            "positions": [[0, 0, 0]],
            "lattice": [[1, 0, 0], [1, 0, 0], [0, 0, 1]],
        }
        with pytest.raises(ValueError, match="independent"):
            io.parse_crystal_json(json.dumps(payload))

    def test_rejects_missing_fields(self):
        with pytest.raises(ValueError, match="missing"):
            io.parse_crystal_json(json.dumps({"positions": []}))

    def test_rejects_malformed_json(self):
        with pytest.raises(ValueError, match="invalid"):
            io.parse_crystal_json("{not json")


class TestGraphSerialization:
    def _graph(self):
        c = io.parse_poscar(MINIMAL_POSCAR)
        return add_self_connecting_edges(build_radius_graph(c), c), c

    def test_json_round_trip(self):
        graph, _ = self._graph()
        back = io.graph_from_dict(json.loads(io.graph_to_json(graph)))
        assert back.n_nodes == graph.n_nodes
        assert len(back.edges) == len(graph.edges)
        for a, b in zip(graph.edges, back.edges):
            assert (a.src, a.dst, a.image.k, a.kind) == (b.src, b.dst, b.image.k, b.kind)
            assert a.distance == b.distance
        assert back.meta.method == "radius"
        assert back.meta.node_radii == graph.meta.node_radii

    def test_text_format_shape(self):
        graph, _ = self._graph()
        text = io.graph_to_text(graph)
        lines = text.strip().splitlines()
        assert lines[0].startswith("graph method=radius")
        assert len([l for l in lines if l.startswith("node ")]) == graph.n_nodes
        assert len([l for l in lines if l.startswith("edge ")]) == len(graph.edges)


class TestCsvTables:
    def test_targets_round_trip(self):
        rows = [("a", 1.25), ("b", -0.5)]
        parsed = io.parse_targets_csv(io.write_targets_csv(rows))
        assert parsed == {"a": 1.25, "b": -0.5}

    def test_duplicate_id_rejected(self):
        text = "id,target\nx,1.0\nx,2.0\n"
        with pytest.raises(io.ParseError, match="duplicate"):
            io.parse_targets_csv(text)

    def test_header_required(self):
        with pytest.raises(ValueError, match="header"):
            io.parse_targets_csv("a,1.0\n")

    def test_predictions_have_abs_err(self):
        text = io.write_predictions_csv([("a", 1.5, 1.0)])
        line = text.strip().splitlines()[1].split(",")
        assert float(line[3]) == 0.5

    def test_training_log_columns(self):
        row = {"epoch": 0, "lr": 1e-3, "train_loss": 0.5, "val_mae": 0.4, "ewt_0.01": 0.1, "ewt_0.02": 0.2}
        text = io.write_training_log_csv([row])
        assert text.splitlines()[0] == "epoch,lr,train_loss,val_mae,ewt_0.01,ewt_0.02"


class TestRunConfig:
    def test_parse_with_comments(self):
        text = "# run settings\ntrain.lr_max = 0.001\nmodel.d_model=64\n\n"
        assert io.parse_run_config(text) == {"train.lr_max": "0.001", "model.d_model": "64"}

    def test_rejects_bare_lines(self):
        with pytest.raises(io.ParseError, match="key=value"):
            io.parse_run_config("lr 0.001\n")


class TestAtomicWrite:
    def test_writes_and_leaves_no_temp(self, tmp_path):
        path = tmp_path / "out.json"
        io.atomic_write(str(path), "payload")
        assert path.read_text() == "payload"
        assert [p.name for p in tmp_path.iterdir()] == ["out.json"]

    def test_overwrites(self, tmp_path):
        path = tmp_path / "out.json"
        path.write_text("old")
        io.atomic_write(str(path), "new")
        assert path.read_text() == "new"


class TestDatasetRecord:
    def test_rejects_non_finite_target(self):
        c = io.parse_poscar(MINIMAL_POSCAR)
        with pytest.raises(ValueError, match="non-finite"):
            io.DatasetRecord(id="x", crystal=c, target=float("nan"))
