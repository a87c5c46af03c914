import io
import json
import math

import pytest

from fedcontrib import cli
from fedcontrib.experiments import (
    ROW_FIELDS,
    ConfigError,
    ExperimentGrid,
    ResultRow,
    read_rows_csv,
    rows_to_csv,
    run_grid,
    summarize,
    write_rows_jsonl,
)

TINY = dict(num_users=3, attacker_counts=[0, 1], flip_probs=[0.5, 1.0],
            schemes=["influence", "shapley"], seeds=[1, 2], rounds=2, ts=2,
            samples_per_user=60, test_samples=100, dim=4)


@pytest.fixture(scope="module")
def tiny_rows():
    return run_grid(ExperimentGrid(**TINY))


class TestGrid:
    def test_default_grid_shape(self):
        g = ExperimentGrid()
        assert g.num_users == 4 and g.attacker_counts == (0, 1, 2, 3)
        assert g.flip_probs == (0.1, 0.3, 0.5, 1.0) and g.ts == 5
        assert g.expected_rows() == 4 * (1 + 3 * 4) * 3 * 5 == 780

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentGrid.from_dict({"num_users": 4, "colour": "red"})

    @pytest.mark.parametrize("bad", [
        {"attacker_counts": [4]},
        {"flip_probs": [1.2]},
        {"ts": 11},
        {"schemes": ["banzhaf"]},
        {"rounds": 0},
        {"weighting": "median"},
        {"seeds": "12"},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentGrid.from_dict(bad)

    def test_round_trip(self):
        g = ExperimentGrid(**TINY)
        assert ExperimentGrid.from_dict(g.to_dict()) == g


class TestRunGrid:
    def test_row_count(self, tiny_rows):
        assert len(tiny_rows) == ExperimentGrid(**TINY).expected_rows() == 3 * 3 * 2 * 2

    def test_honest_only_cell(self):
        rows = run_grid(ExperimentGrid(**{**TINY, "attacker_counts": [0], "schemes": ["influence"],
                                          "seeds": [3]}))
        assert rows and not any(r.is_attacker for r in rows)

    def test_attackers_take_lowest_ids(self, tiny_rows):
        for r in tiny_rows:
            assert r.is_attacker == (r.participant_id < r.attacker_count)

    def test_deterministic_bytes(self, tiny_rows):
        again = run_grid(ExperimentGrid(**TINY))
        assert rows_to_csv(again) == rows_to_csv(tiny_rows)

    def test_parallel_matches_sequential(self, tiny_rows):
        assert rows_to_csv(run_grid(ExperimentGrid(**TINY), parallel=2)) == rows_to_csv(tiny_rows)

    def test_timing_is_opt_in(self, tiny_rows):
        assert all(r.wall_time_ms == 0.0 for r in tiny_rows)
        timed = run_grid(ExperimentGrid(**{**TINY, "attacker_counts": [0], "seeds": [1]}), timing=True)
        assert all(r.wall_time_ms > 0 for r in timed)


class TestSerialization:
    def test_header_and_round_trip(self, tiny_rows):
        text = rows_to_csv(tiny_rows)
        assert text.splitlines()[0] == ",".join(ROW_FIELDS)
        back = read_rows_csv(io.StringIO(text))
        assert rows_to_csv(back) == text

    def test_nine_significant_digits(self):
        row = ResultRow(1, "influence", 1, 0.1, 0, True, 1 / 3, 0.5)
        line = rows_to_csv([row]).splitlines()[1]
        assert "0.333333333" in line and "0.3333333333" not in line

    def test_jsonl(self, tiny_rows):
        buf = io.StringIO()
        write_rows_jsonl(tiny_rows, buf)
        first = json.loads(buf.getvalue().splitlines()[0])
        assert list(first) == ROW_FIELDS


class TestSummarize:
    def test_separation(self):
        rows = [ResultRow(1, "shapley", 1, 1.0, 0, True, 0.2, 0.9),
                ResultRow(1, "shapley", 1, 1.0, 1, False, 0.8, 0.9)]
        (s,) = summarize(rows)
        assert s.separation == pytest.approx(0.6)
        assert s.final_accuracy_mean == 0.9

    def test_honest_only_cell_has_nan_attacker(self, tiny_rows):
        honest = [s for s in summarize(tiny_rows) if s.attacker_count == 0]
        assert honest and all(math.isnan(s.attacker_mean) for s in honest)

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize([])


class TestCli:
    def test_run_and_summarize(self, tmp_path, tiny_rows):
        config = tmp_path / "grid.json"
        config.write_text(json.dumps(TINY))
        out, jsonl, summ = tmp_path / "rows.csv", tmp_path / "rows.jsonl", tmp_path / "summ.csv"
        assert cli.main(["run", "--config", str(config), "--out", str(out),
                         "--jsonl", str(jsonl)]) == 0
        assert out.read_text() == rows_to_csv(tiny_rows)
        assert len(jsonl.read_text().splitlines()) == len(tiny_rows)
        assert cli.main(["summarize", "--in", str(out), "--out", str(summ)]) == 0
        assert summ.read_text().startswith("scheme,attacker_count,flip_prob,honest_mean")

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        config = tmp_path / "grid.json"
        config.write_text(json.dumps({"num_users": 4, "bogus": 1}))
        assert cli.main(["run", "--config", str(config), "--out", str(tmp_path / "x.csv")]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_malformed_json_exit_code(self, tmp_path):
        config = tmp_path / "grid.json"
        config.write_text("{not json")
        assert cli.main(["run", "--config", str(config)]) == 1

    def test_runtime_failure_names_cell(self, tmp_path, capsys):
        config = tmp_path / "grid.json"
        # learning rate large enough to overflow training
        config.write_text(json.dumps({**TINY, "learning_rate": 1e308, "attacker_counts": [1],
                                      "flip_probs": [0.5], "seeds": [4]}))
        assert cli.main(["run", "--config", str(config), "--out", str(tmp_path / "x.csv")]) == 2
        err = capsys.readouterr().err
        assert "attacker_count=1" in err and "seed=4" in err
