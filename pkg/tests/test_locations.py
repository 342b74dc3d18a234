import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geocover.locations import (
    LocationParseError,
    LocationSet,
    build_grid,
    distance,
    essential_pairs,
    load_locations,
    save_locations,
)


def write(tmp_path, text):
    p = tmp_path / "locs.csv"
    p.write_text(text)
    return p


def test_collinear_file(tmp_path):
    ls = load_locations(write(tmp_path, "id,x_km,y_km\n0,0,0\n1,1,0\n2,2,0\n"))
    assert distance(ls, 0, 2) == 2.0
    assert distance(ls, 1, 1) == 0.0


def test_grid_ids_and_spacing():
    ls = build_grid(5, 5)
    assert len(ls) == 25
    assert distance(ls, 0, 1) == pytest.approx(1.0)
    assert distance(ls, 0, 5) == pytest.approx(1.0)
    assert distance(ls, 0, 24) == pytest.approx(4 * np.sqrt(2))
    assert tuple(ls.coords[7]) == (2.5, 1.5)


@pytest.mark.parametrize("body,needle", [
    ("0,0,0\n0,1,1\n", ":3: duplicate id 0"),
    ("0,0,0\n1,1\n", ":3: expected 3 columns"),
    ("0,0,0\n1,nan,1\n", ":3: non-finite"),
    ("0,0,0\n1,inf,1\n", ":3: non-finite"),
    ("0,0,0\n1,abc,1\n", ":3:"),
    ("0,0,0\n1,0,0\n", ":3: coordinates duplicate"),
    ("0,0,0\n2,1,1\n", "dense"),
])
def test_parse_errors_name_the_line(tmp_path, body, needle):
    with pytest.raises(LocationParseError, match=needle.replace("(", r"\(")):
        load_locations(write(tmp_path, "id,x_km,y_km\n" + body))


def test_bad_header(tmp_path):
    with pytest.raises(LocationParseError, match=":1:"):
        load_locations(write(tmp_path, "id,x,y\n0,0,0\n"))


def test_roundtrip(tmp_path):
    ls = build_grid(3, 4, 0.7)
    save_locations(ls, tmp_path / "g.csv")
    back = load_locations(tmp_path / "g.csv")
    assert np.array_equal(back.coords, ls.coords)


def test_id_checks():
    ls = build_grid(2, 2)
    with pytest.raises(IndexError):
        distance(ls, 0, 4)
    with pytest.raises(TypeError):
        distance(ls, 0, 1.0)
    with pytest.raises(IndexError):
        distance(ls, -1, 0)


def test_distance_matrix_read_only():
    ls = build_grid(2, 2)
    with pytest.raises(ValueError):
        ls.dist[0, 1] = 5.0


def test_rejects_duplicates_and_bad_metric():
    with pytest.raises(ValueError):
        LocationSet(np.array([[0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        LocationSet(np.array([[0.0, 0.0]]), metric="haversine")


coords = st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=2, max_size=12, unique=True)


@given(coords)
def test_metric_axioms(pts):
    ls = LocationSet(np.array(pts, dtype=float))
    d = ls.dist
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    for a in range(len(ls)):
        assert np.all(d[a][:, None] <= d[a][None, :] + d + 1e-9)


@given(coords)
def test_essential_pairs_imply_all(pts):
    """Chaining the kept constraints reproduces every pairwise bound."""
    ls = LocationSet(np.array(pts, dtype=float))
    n = len(ls)
    pairs = essential_pairs(ls)
    # shortest path over essential edges equals the direct distance
    g = np.full((n, n), np.inf)
    np.fill_diagonal(g, 0.0)
    g[pairs[:, 0], pairs[:, 1]] = ls.dist[pairs[:, 0], pairs[:, 1]]
    for k in range(n):
        g = np.minimum(g, g[:, k:k + 1] + g[k:k + 1, :])
    assert np.allclose(g, ls.dist, rtol=1e-9, atol=1e-9)


def test_essential_pairs_grid_count():
    assert len(essential_pairs(build_grid(5, 5))) == 400
