import pytest

from filippov.classify import Label
from filippov.nonuniqueness import CellFlag, cell_status, estimate_saturation, replay_witness, seed_set, worker_count


def test_seed_sets(catalog):
    z1 = seed_set(catalog("z1"))
    assert [i.label for i in z1.intervals] == [Label.SLIDING]
    assert seed_set(catalog("foldfold_center")).empty
    e43 = seed_set(catalog("ex43"))
    assert {i.surface for i in e43.intervals} == {0}
    assert {i.label for i in e43.intervals} == {Label.SLIDING, Label.ESCAPING}
    # every tangency on the crossing surface has a unique continuation
    assert all(p.surface == 0 for p in e43.points)


def test_cell_status(catalog):
    s = catalog("ex43")
    flag, wit, err = cell_status(s, (0.3, 0.4), 20.0)
    assert flag is CellFlag.IN_SAT and err is None and wit.t > 0 or wit.direction == -1
    # the limit cycle y = 1 never meets y = 0
    assert cell_status(s, (0.3, 1.0), 20.0)[0] is CellFlag.NOT_IN_SAT


def test_small_grid_and_replay(catalog):
    s = catalog("ex42")
    g = estimate_saturation(s, 8, 8, 2.0)
    assert g.fraction == 1.0
    i, j = next(iter(g.witnesses))
    assert replay_witness(s, g, i, j) < 1e-9
    assert g.to_dict()["estimate"].startswith("grid estimate")


def test_parallel_grid_matches_serial(catalog):
    s = catalog("ex43")
    a = estimate_saturation(s, 6, 6, 5.0, workers=1)
    b = estimate_saturation(s, 6, 6, 5.0, workers=2)
    assert a.to_dict() == b.to_dict()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("FILIPPOV_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("FILIPPOV_THREADS", "zero")
    with pytest.raises(ValueError):
        worker_count()


def test_horizon_must_be_positive(catalog):
    with pytest.raises(ValueError):
        estimate_saturation(catalog("z1"), 4, 4, 0.0)
