import numpy as np
import pytest

from maxstable.errors import DataError
from maxstable.matrix_io import read_matrix, write_matrix


def test_read_matrix_with_and_without_header(tmp_path):
    path = tmp_path / "data.csv"
    write_matrix(str(path), np.array([[1.0, 2.5], [3.0, 4.0]]), columns=["a", "b"])
    values, header = read_matrix(str(path))
    assert header == ["a", "b"]
    np.testing.assert_array_equal(values, [[1.0, 2.5], [3.0, 4.0]])
    write_matrix(str(path), np.array([[1.0, 2.5]]))
    values, header = read_matrix(str(path))
    assert header is None
    assert values.shape == (1, 2)


def test_read_matrix_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DataError, match="empty"):
        read_matrix(str(path))


def test_read_matrix_ragged_rows(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("1,2\n3,4,5\n")
    with pytest.raises(DataError, match="well-formed"):
        read_matrix(str(path))


def test_read_matrix_missing_entries(tmp_path):
    path = tmp_path / "holes.csv"
    path.write_text("1,2\n3,x\n")
    with pytest.raises(DataError):
        read_matrix(str(path))
    with pytest.raises(FileNotFoundError):
        read_matrix(str(tmp_path / "nope.csv"))
