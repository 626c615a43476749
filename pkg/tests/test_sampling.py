import csv
import io
import json

import numpy as np
import pytest

from opflab.grid import is_connected, remove_line
from opflab.opf import assemble, solve
from opflab.sampling import (
    DatasetFormatError,
    draw_factors,
    generate,
    label,
    load,
    save,
    split,
    start_from_target,
    target_vector,
    write_summary_csv,
)

from conftest import cached_case, cached_solution, small_dataset


def test_factors_in_range_and_reproducible():
    a = draw_factors(7, 3)
    assert a.shape == (14,)
    assert np.all((a >= 0.8) & (a < 1.2))
    np.testing.assert_array_equal(a, draw_factors(7, 3))
    assert not np.array_equal(a, draw_factors(7, 4))
    with pytest.raises(ValueError):
        draw_factors(0, 1)


def test_factor_mean_converges():
    big = draw_factors(50_000, 11)
    assert abs(big.mean() - 1.0) < 0.01


def test_two_bus_generation_balances(two_bus):
    d = generate(two_bus, 10, "fixed", seed=1)
    assert len(d) == 10
    for s in d.samples:
        assert s.removed_branch is None
        # lossless line: generation equals scaled demand
        assert s.y_star[0] == pytest.approx(s.x[0], abs=1e-7)
        assert s.y_star.shape == (2,)


def test_unit_factors_reproduce_nominal_solution():
    case = cached_case("case30")
    p, sol = cached_solution("case30")
    s = label(case, np.ones(2 * case.n_load))
    np.testing.assert_array_equal(s.y_star, target_vector(p, sol.y))
    assert s.objective == sol.objective
    np.testing.assert_array_equal(s.active, sol.active_vector(p.n_ineq))


def test_generation_is_deterministic():
    a = small_dataset("case30", "fixed", 12, 7)
    b = generate(cached_case("case30"), 12, "fixed", seed=7)
    assert a == b


def test_parallel_generation_matches_serial():
    serial = small_dataset("case30", "fixed", 12, 7)
    parallel = generate(cached_case("case30"), 12, "fixed", seed=7, workers=2)
    assert serial == parallel


def test_sample_shapes():
    case = cached_case("case30")
    d = small_dataset("case30", "fixed", 12, 7)
    p = assemble(case)
    for s in d.samples:
        assert s.x.shape == (2 * case.n_load,)
        assert s.y_star.shape == (case.n_gen + len(case.gen_buses),)
        assert s.active.shape == (p.n_ineq,)
        assert s.lmp.shape == (case.n_bus,)


def test_contingency_samples_stay_connected():
    case = cached_case("case24")
    d = small_dataset("case24", "contingency", 12, 3)
    base = assemble(case)
    for s in d.samples:
        assert s.removed_branch is not None
        out = remove_line(case, s.removed_branch)
        assert out.connected and is_connected(out.case)
        assert s.active.shape == (base.n_ineq,)
        # constraints of the removed branch are never labelled binding
        if case.rate_a[s.removed_branch] > 0:
            pos = int(np.searchsorted(base.limited, s.removed_branch))
            for kind in ("sf", "st"):
                assert not s.active[base.ineq_offsets[kind] + pos]


def test_persisted_samples_reverify():
    case = cached_case("case24")
    d = small_dataset("case24", "contingency", 12, 3)
    nl = case.n_load
    for s in d.samples[:4]:
        work = case.with_loads(s.x[:nl], s.x[nl:])
        work = remove_line(work, s.removed_branch).case
        p = assemble(work)
        y0, _ = start_from_target(p, s.y_star)
        sol = solve(p, y0=y0)
        assert sol.optimal
        assert abs(sol.objective - s.objective) / s.objective <= 1e-6


def test_bad_mode():
    with pytest.raises(ValueError):
        generate(cached_case("case5"), 3, "random")


def test_split_sizes():
    d = small_dataset("case30", "fixed", 12, 7)
    d10 = type(d)(**{**d.__dict__, "samples": d.samples[:10]})
    parts = split(d10, seed=0).split
    assert [len(parts[k]) for k in ("train", "val", "test")] == [8, 1, 1]
    fake = type(d)(**{**d.__dict__, "samples": (d.samples * 84)[:1000]})
    parts = split(fake, seed=0).split
    assert [len(parts[k]) for k in ("train", "val", "test")] == [800, 100, 100]
    all_idx = sorted(parts["train"] + parts["val"] + parts["test"])
    assert all_idx == list(range(1000))
    with pytest.raises(ValueError):
        split(type(d)(**{**d.__dict__, "samples": d.samples[:9]}))


def test_trivial_sets_come_from_training_part():
    d = split(small_dataset("case30", "fixed", 12, 7), seed=1)
    train = np.array([d.samples[i].active for i in d.split["train"]])
    for j in range(train.shape[1]):
        assert (j in d.trivial_always_on) == bool(train[:, j].all())
        assert (j in d.trivial_always_off) == bool(not train[:, j].any())
    assert len(d.nontrivial) == train.shape[1] - len(d.trivial_always_on) - len(d.trivial_always_off)


def test_save_load_round_trip(tmp_path):
    d = split(small_dataset("case24", "contingency", 12, 3), seed=2)
    save(d, tmp_path / "ds")
    assert load(tmp_path / "ds", case=cached_case("case24")) == d
    # saving twice gives identical bytes
    first = (tmp_path / "ds" / "samples.jsonl").read_bytes()
    save(d, tmp_path / "ds2")
    assert (tmp_path / "ds2" / "samples.jsonl").read_bytes() == first
    assert (tmp_path / "ds2" / "manifest.json").read_bytes() == (tmp_path / "ds" / "manifest.json").read_bytes()


def test_truncated_file_fails_checksum(tmp_path):
    d = small_dataset("case30", "fixed", 12, 7)
    save(d, tmp_path)
    path = tmp_path / "samples.jsonl"
    path.write_bytes(path.read_bytes()[:-40])
    with pytest.raises(DatasetFormatError, match="checksum"):
        load(tmp_path)


def test_case_mismatch_and_version(tmp_path):
    d = small_dataset("case30", "fixed", 12, 7)
    save(d, tmp_path)
    with pytest.raises(DatasetFormatError, match="case24"):
        load(tmp_path, case=cached_case("case24"))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["version"] = "2.0.0"
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetFormatError, match="version"):
        load(tmp_path)


def test_summary_csv():
    d = small_dataset("case30", "fixed", 12, 7)
    text = write_summary_csv(d)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["quantity", "count", "mean", "std", "min", "max"]
    obj = next(r for r in rows if r[0] == "objective")
    assert int(obj[1]) == 12
    assert float(obj[2]) == pytest.approx(np.mean([s.objective for s in d.samples]))


def test_start_from_target_clips(two_bus):
    p = assemble(two_bus)
    y0, clipped = start_from_target(p, np.array([10.0, 1.0]))
    assert clipped == 1
    assert y0[p.pg][0] == pytest.approx(two_bus.pg_max[0] - 1e-3)
    with pytest.raises(ValueError):
        start_from_target(p, np.zeros(5))
