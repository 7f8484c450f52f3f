import numpy as np
import pytest

from naturalist.taxonomy import Taxonomy


def random_taxonomy(rng: np.random.Generator, depth: int = 4, max_fan: int = 3) -> Taxonomy:
    """A random rank-consistent tree; every internal node has 1..max_fan children."""
    records = [{"id": "r", "parent_id": None, "rank": depth, "name": "root"}]
    frontier = ["r"]
    for rank in range(depth - 1, -1, -1):
        nxt = []
        for parent in frontier:
            for j in range(int(rng.integers(1, max_fan + 1))):
                tid = f"{parent}.{j}"
                records.append({"id": tid, "parent_id": parent, "rank": rank, "name": tid})
                nxt.append(tid)
        frontier = nxt
    return Taxonomy.from_records(records)


def toy_records():
    """genus G1={s1,s2}, G2={s3} in family F1; F2={s4} in the same order; order O2={s5}."""
    return [
        {"id": "C", "parent_id": None, "rank": 4, "name": "class"},
        {"id": "O1", "parent_id": "C", "rank": 3, "name": "o1"},
        {"id": "O2", "parent_id": "C", "rank": 3, "name": "o2"},
        {"id": "F1", "parent_id": "O1", "rank": 2, "name": "f1"},
        {"id": "F2", "parent_id": "O1", "rank": 2, "name": "f2"},
        {"id": "F3", "parent_id": "O2", "rank": 2, "name": "f3"},
        {"id": "G1", "parent_id": "F1", "rank": 1, "name": "g1"},
        {"id": "G2", "parent_id": "F1", "rank": 1, "name": "g2"},
        {"id": "G3", "parent_id": "F2", "rank": 1, "name": "g3"},
        {"id": "G4", "parent_id": "F3", "rank": 1, "name": "g4"},
        {"id": "s1", "parent_id": "G1", "rank": 0, "name": "s1"},
        {"id": "s2", "parent_id": "G1", "rank": 0, "name": "s2"},
        {"id": "s3", "parent_id": "G2", "rank": 0, "name": "s3"},
        {"id": "s4", "parent_id": "G3", "rank": 0, "name": "s4"},
        {"id": "s5", "parent_id": "G4", "rank": 0, "name": "s5"},
    ]


@pytest.fixture
def toy_taxonomy():
    return Taxonomy.from_records(toy_records())


# acceptance bookkeeping: one PASS/FAIL line per criterion ------------------------

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    ok, _ = _criteria.get(number, (True, title))
    if report.failed or (report.when == "call" and report.skipped):
        ok = False
    _criteria[number] = (ok, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
