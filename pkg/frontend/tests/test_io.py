"""Data-extraction checks: parsed frames must equal the raw file contents."""

import json
from pathlib import Path

import pytest

from meta_oed_figures.artifacts import SchemaError, load_atlas, load_curves

FIXTURES = Path(__file__).parent / "fixtures"


def raw_rows(path):
    """Parse a fixture by hand: (config, columns, list-of-row-lists of strings)."""
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    config = json.loads(lines[0][2:])
    columns = lines[1].split(",")
    rows = [line.split(",") for line in lines[2:]]
    return config, columns, rows


class TestAtlasExtraction:
    def test_preference_atlas_matches_file(self):
        path = FIXTURES / "atlas_preference.csv"
        config, columns, rows = raw_rows(path)
        table = load_atlas(path)
        assert table.config == config
        assert list(table.frame.columns) == columns
        assert len(table.frame) == len(rows)
        for j, name in enumerate(columns):
            got = table.frame[name].tolist()
            if name == "level":
                assert got == [r[j] for r in rows]
            else:
                # float() and the round-trip CSV parser agree bit-for-bit
                assert got == [float(r[j]) for r in rows]

    def test_path_atlas_has_component_columns(self):
        table = load_atlas(FIXTURES / "atlas_path.csv")
        assert "psi" not in table.frame.columns
        for name in ("psi_1", "psi_2", "psi_3", "psi_avg"):
            assert name in table.frame.columns
        assert table.config["setting"] == "path"

    def test_path_atlas_values_match_file(self):
        path = FIXTURES / "atlas_path.csv"
        _, columns, rows = raw_rows(path)
        frame = load_atlas(path).frame
        j = columns.index("rt_at_xetig")
        assert frame["rt_at_xetig"].tolist() == [float(r[j]) for r in rows]


class TestCurvesExtraction:
    def test_bound_file_matches_contents(self):
        path = FIXTURES / "curves_bound.csv"
        config, columns, rows = raw_rows(path)
        table = load_curves(path)
        assert table.config == config
        assert columns == ["t", "mean", "q25", "q75", "bound_line"]
        for j, name in enumerate(columns):
            assert table.frame[name].tolist() == [float(r[j]) for r in rows]

    def test_plain_file_has_no_bound_column(self):
        table = load_curves(FIXTURES / "curves_plain.csv")
        assert list(table.frame.columns) == ["t", "mean", "q25", "q75"]
        assert table.config["level"] == "none"


class TestSchemaErrors:
    def test_empty_file(self):
        with pytest.raises(SchemaError, match="empty"):
            load_atlas(FIXTURES / "empty.csv")
        with pytest.raises(SchemaError, match="empty"):
            load_curves(FIXTURES / "empty.csv")

    def test_wrong_columns(self):
        with pytest.raises(SchemaError, match="missing required columns"):
            load_atlas(FIXTURES / "wrong_columns.csv")
        with pytest.raises(SchemaError, match="missing required columns"):
            load_curves(FIXTURES / "wrong_columns.csv")

    def test_missing_file(self):
        with pytest.raises(SchemaError):
            load_curves(FIXTURES / "does_not_exist.csv")

    def test_header_without_rows(self, tmp_path):
        stub = tmp_path / "stub.csv"
        stub.write_text("t,mean,q25,q75\n")
        with pytest.raises(SchemaError, match="no data rows"):
            load_curves(stub)

    def test_unknown_threat_level(self, tmp_path):
        stub = tmp_path / "stub.csv"
        stub.write_text(
            "theta,psi_avg,p_psi_given_theta,level,rt_at_xetig,max_rt\n"
            "0.1,0.2,0.5,catastrophic,-0.1,0.0\n"
        )
        with pytest.raises(SchemaError, match="unknown threat levels"):
            load_atlas(stub)

    def test_headerless_file_still_parses(self, tmp_path):
        stub = tmp_path / "stub.csv"
        stub.write_text("t,mean,q25,q75\n0,1.5,1.25,1.75\n")
        table = load_curves(stub)
        assert table.config == {}
        assert table.frame["mean"].tolist() == [1.5]
