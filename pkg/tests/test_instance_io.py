"""
Tests for instance and tour file I/O.

Covers the JSON and TSPLIB readers, rescaling into the unit square,
writers, and both tour formats.
"""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from src.core import InstanceFormatError, Tour, UnsupportedFormatError, generate_uniform
from src.instance_io import (
    detect_format,
    load_instance,
    read_instance,
    read_tour,
    rescale_to_unit,
    save_instance,
    write_instance,
    write_tour,
)
from tests.helpers.test_utils import fixture_path, load_fixture


class TestJsonInstances:
    """Test the JSON instance format."""

    def test_load_square(self):
        """Test a well-formed file."""
        instance = load_instance(fixture_path("instances/square.json"))

        assert instance.n == 4
        assert instance.depot == 0
        assert instance.name == "square"
        np.testing.assert_array_equal(instance.nodes[2], [1.0, 1.0])

    def test_count_mismatch(self):
        """Test that n must match the listed nodes."""
        with pytest.raises(InstanceFormatError, match="n=5"):
            load_instance(fixture_path("instances/count_mismatch.json"))

    def test_out_of_range_coordinates(self):
        """Test that JSON coordinates must already lie in the unit square."""
        with pytest.raises(InstanceFormatError):
            load_instance(fixture_path("instances/out_of_range.json"))

    def test_invalid_json(self):
        """Test a document that does not match the schema."""
        with pytest.raises(InstanceFormatError):
            read_instance('{"n": "many"}', "json")

    def test_depot_override(self):
        """Test the depot argument wins over the file."""
        instance = load_instance(fixture_path("instances/square.json"), depot=2)
        assert instance.depot == 2

    def test_file_stem_is_fallback_name(self):
        """Test naming when the document has no name."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "unnamed_7.json"
            path.write_text(json.dumps({"n": 2, "nodes": [[0, 0], [1, 1]]}))
            assert load_instance(path).name == "unnamed_7"


class TestTsplibInstances:
    """Test the TSPLIB reader."""

    def test_euc_2d_is_rescaled(self):
        """Test translation plus one uniform scale."""
        instance = load_instance(fixture_path("instances/tiny5.tsp"))

        assert instance.n == 5
        assert instance.name == "tiny5"
        assert instance.scale == pytest.approx(100.0)
        np.testing.assert_allclose(instance.nodes[4], [0.5, 0.5])
        np.testing.assert_allclose(instance.nodes[2], [1.0, 1.0])

    def test_explicit_weights_unsupported(self):
        """Test EXPLICIT instances are refused."""
        with pytest.raises(UnsupportedFormatError):
            load_instance(fixture_path("instances/explicit.tsp"))

    def test_geo_unsupported(self):
        """Test non-EUC_2D coordinates are refused."""
        with pytest.raises(UnsupportedFormatError, match="EUC_2D"):
            load_instance(fixture_path("instances/geo.tsp"))

    def test_malformed_coordinates(self):
        """Test a coordinate line that is not numeric."""
        with pytest.raises(InstanceFormatError, match="coordinate"):
            load_instance(fixture_path("instances/malformed.tsp"))

    def test_dimension_mismatch(self):
        """Test DIMENSION must match the coordinate count."""
        with pytest.raises(InstanceFormatError, match="DIMENSION"):
            load_instance(fixture_path("instances/dimension_mismatch.tsp"))

    def test_non_integer_dimension(self):
        """Test a DIMENSION value that is not an integer."""
        text = load_fixture("instances/tiny5.tsp").replace("DIMENSION : 5", "DIMENSION : five")
        with pytest.raises(InstanceFormatError, match="DIMENSION"):
            read_instance(text, "tsplib")

    def test_bytes_input(self):
        """Test raw bytes are accepted."""
        data = load_fixture("instances/tiny5.tsp").encode()
        assert read_instance(data, "tsplib").n == 5

    def test_rescale_keeps_aspect_ratio(self):
        """Test that the larger extent maps to 1 and the other keeps proportion."""
        points = np.array([[10.0, 5.0], [30.0, 5.0], [20.0, 15.0]])
        unit, scale, offset = rescale_to_unit(points)

        assert scale == 20.0
        assert offset == (10.0, 5.0)
        np.testing.assert_allclose(unit, [[0.0, 0.0], [1.0, 0.0], [0.5, 0.5]])

    def test_rescale_single_point(self):
        """Test a zero extent does not divide by zero."""
        _, scale, _ = rescale_to_unit(np.array([[3.0, 3.0], [3.0, 3.0]]))
        assert scale == 1.0


class TestWriters:
    """Test instance writers."""

    @pytest.mark.parametrize("suffix", [".json", ".tsp"])
    def test_save_and_load_preserves_coordinates(self, suffix):
        """Test both formats keep full double precision."""
        instance = generate_uniform(25, seed=4, name="sample")
        with tempfile.TemporaryDirectory() as tmpdir:
            path = save_instance(instance, Path(tmpdir) / f"sample{suffix}")
            loaded = load_instance(path)

        if suffix == ".json":
            np.testing.assert_array_equal(loaded.nodes, instance.nodes)
        else:
            # TSPLIB reading rescales to the bounding box
            restored = loaded.nodes * loaded.scale + np.asarray(loaded.offset)
            np.testing.assert_allclose(restored, instance.nodes, atol=1e-12)
        assert loaded.name == "sample"

    def test_tsplib_header(self):
        """Test the TSPLIB header fields."""
        text = write_instance(generate_uniform(3, seed=0, name="t3"), "tsplib")
        assert "NAME : t3" in text
        assert "DIMENSION : 3" in text
        assert "EDGE_WEIGHT_TYPE : EUC_2D" in text
        assert text.rstrip().endswith("EOF")

    def test_unknown_suffix(self):
        """Test that the suffix decides the format."""
        assert detect_format("a.TSP") == "tsplib"
        with pytest.raises(UnsupportedFormatError):
            detect_format("a.txt")


class TestTours:
    """Test the tour formats."""

    def test_project_format_header(self):
        """Test header parsing and the node lines."""
        text = write_tour(Tour.from_sequence([2, 0, 1]), 3.5, name="abc")
        tour, length = read_tour(text)

        assert text.startswith("# name: abc n: 3 length: 3.5")
        assert tour.order == (2, 0, 1)
        assert length == 3.5

    def test_tsplib_tour_is_one_based(self):
        """Test TOUR_SECTION parsing."""
        tour, length = read_tour(load_fixture("instances/tiny5.tour"))
        assert tour.order == (0, 1, 4, 2, 3)
        assert length is None

    def test_headerless_tour(self):
        """Test a plain list of indices."""
        tour, length = read_tour("0\n2\n1\n")
        assert tour.order == (0, 2, 1)
        assert length is None

    def test_invalid_line(self):
        """Test a non-integer node line."""
        with pytest.raises(InstanceFormatError):
            read_tour("0\nx\n")

    def test_empty_tour(self):
        """Test a tour without nodes."""
        with pytest.raises(InstanceFormatError):
            read_tour("# name: x n: 0 length: 0\n")

    def test_non_integer_tour_section_entry(self):
        """Test a TOUR_SECTION token that is not a node number."""
        with pytest.raises(InstanceFormatError, match="TOUR_SECTION"):
            read_tour("TOUR_SECTION\n1\n2\nthree\n-1\nEOF\n")

    def test_non_numeric_length_header(self):
        """Test a header length that is not a number."""
        with pytest.raises(InstanceFormatError, match="header"):
            read_tour("# name: x n: 2 length: long\n0\n1\n")
