import csv
import json
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tamformer.data import GeneratorConfig, generate_synthetic, save_dataset, split
from tamformer.errors import ContractError, RangeError
from tamformer.harness.cli import main
from tamformer.harness.evaluate import (
    CSV_COLUMNS,
    MetricsReport,
    TimeRow,
    emit_report,
    evaluate_at_times,
    load_report,
)
from tamformer.harness.metrics import compute_metrics, confusion, roc_auc
from tamformer.harness.plot import plot_f1_over_time, render_svg
from tamformer.model import PROFILES, init_params, save_checkpoint


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


# ----------------------------------------------------------------- metrics

def test_metrics_worked_example():
    m = compute_metrics([0.9, 0.4, 0.6, 0.2], [1, 0, 1, 1])
    assert m.auc == pytest.approx(2 / 3, abs=1e-15)
    assert m.f1 == pytest.approx(0.8, abs=1e-15)
    assert m.accuracy == 0.75


def test_metrics_perfect_and_tie():
    assert tuple(compute_metrics([0.9, 0.1], [1, 0])) == (1.0, 1.0, 1.0)
    assert compute_metrics([0.5, 0.5], [1, 0]).auc == 0.5


def test_metrics_degenerate_cases():
    m = compute_metrics([0.1, 0.2, 0.3], [1, 1, 0])
    assert m.f1 == 0.0
    assert compute_metrics([0.1, 0.9], [1, 1]).auc is None
    with pytest.raises(ContractError):
        compute_metrics([0.1, 0.2], [1])
    with pytest.raises(ContractError):
        compute_metrics([], [])
    with pytest.raises(ContractError):
        compute_metrics([0.1], [1], threshold=1.0)


def test_accuracy_consistent_with_confusion():
    rng = np.random.default_rng(0)
    s, y = rng.uniform(size=50), rng.integers(0, 2, 50)
    tp, fp, tn, fn = confusion(s >= 0.5, y == 1)
    m = compute_metrics(s, y)
    assert m.accuracy == (tp + tn) / 50
    assert m.f1 == 2 * tp / (2 * tp + fp + fn)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6).map(lambda k: k / 6), st.booleans()),
                min_size=2, max_size=200))
def test_auc_matches_pair_counting(pairs):
    scores = [p for p, _ in pairs]
    labels = [int(y) for _, y in pairs]
    auc = roc_auc(scores, labels)
    if 0 < sum(labels) < len(labels):
        assert auc == brute_auc(scores, labels)
    else:
        assert auc is None


# -------------------------------------------------------------- evaluation

@pytest.fixture(scope="module")
def desk_eval():
    c = PROFILES["desk"]
    samples, manifest = generate_synthetic(30, 2, GeneratorConfig.for_model(c))
    return init_params(c, 0), samples, manifest


def test_evaluate_collapses_duplicates(desk_eval):
    params, samples, _ = desk_eval
    r = evaluate_at_times(params, samples, [0.1, 0.4, 0.1, 0.2])
    assert r.times == [0.4, 0.2, 0.1]
    for row in r.rows:
        assert row.n_pos + row.n_neg == len(samples)
        for v in (row.acc, row.auc, row.f1):
            assert 0 <= v <= 1
        assert 0 <= row.mean_frames_used <= row.mean_frames_available


def test_evaluate_frames_available_follow_query_grid(desk_eval):
    params, samples, _ = desk_eval
    r = evaluate_at_times(params, samples, [0.4, 0.3, 0.2, 0.1])
    assert [row.mean_frames_available for row in r.rows] == [3.0, 6.0, 9.0, 12.0]


def test_evaluate_range_error(desk_eval):
    params, samples, _ = desk_eval
    with pytest.raises(RangeError):
        evaluate_at_times(params, samples, [10.0])


def test_evaluate_is_pure(desk_eval):
    params, samples, _ = desk_eval
    a = evaluate_at_times(params, samples, [0.3, 0.1])
    b = evaluate_at_times(params, samples, [0.1, 0.3])
    assert a == b


def test_report_files(desk_eval, tmp_path):
    params, samples, _ = desk_eval
    r = evaluate_at_times(params, samples, [0.1, 0.3, 0.2], seed=9)
    emit_report(r, tmp_path / "r.json")
    assert load_report(tmp_path / "r.json") == r
    emit_report(r, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    assert [float(x[0]) for x in rows[1:]] == [0.3, 0.2, 0.1]
    for rec in rows[1:]:
        for field in (rec[0], rec[1], rec[2], rec[3], rec[6], rec[7]):
            assert re.fullmatch(r"-?\d+\.\d{4}", field)
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["rows"][0]["acc"] == r.rows[0].acc and doc["auc_ties"] == "midrank"


def test_report_format_and_io_errors(tmp_path):
    r = MetricsReport(rows=[TimeRow(0.1, 1.0, None, 1.0, 2, 0, 1.0, 2.0)])
    with pytest.raises(ContractError):
        emit_report(r, tmp_path / "r.txt", fmt="xml")
    with pytest.raises(OSError) as info:
        emit_report(r, tmp_path / "missing" / "r.csv")
    assert "missing" in str(info.value)
    emit_report(r, tmp_path / "r.csv")
    assert load_report(tmp_path / "r.csv").rows[0].auc is None


# -------------------------------------------------------------------- plot

def report_with(f1s, times=(0.4, 0.3, 0.2, 0.1)):
    return MetricsReport(rows=[TimeRow(t, f, 0.5, f, 1, 1, 0.0, 1.0) for t, f in zip(times, f1s)])


def polylines(svg):
    return [[tuple(map(float, p.split(","))) for p in pts.split()]
            for pts in re.findall(r'<polyline[^>]*points="([^"]*)"', svg)]


def test_plot_single_report():
    svg = render_svg([("a", report_with([0.5, 0.6, 0.7, 0.8]))])
    lines = polylines(svg)
    assert len(lines) == 1 and len(lines[0]) == 4
    xs = [x for x, _ in lines[0]]
    assert xs == sorted(xs)  # largest t_a drawn first, on the left


def test_plot_dominating_run_is_above():
    svg = render_svg([("a", report_with([0.5, 0.6, 0.7, 0.8])),
                      ("b", report_with([0.6, 0.7, 0.8, 0.9]))])
    a, b = polylines(svg)
    assert all(pb[1] < pa[1] for pa, pb in zip(a, b))  # svg y grows downward


def test_plot_deterministic(tmp_path):
    reports = [("a", report_with([0.5, 0.6, 0.7, 0.8]))]
    plot_f1_over_time(reports, tmp_path / "a.svg")
    plot_f1_over_time(reports, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    assert (tmp_path / "a.svg").read_text().startswith("<svg")


def test_plot_needs_reports():
    with pytest.raises(ContractError):
        render_svg([])


# --------------------------------------------------------------------- cli

@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = str(d / "data.jsonl")
    assert main(["gen-data", "--n", "40", "--seed", "3", "--out", data]) == 0
    for name in ("a", "b"):
        assert main(["train", "--data", data, "--out", str(d / name), "--epochs1", "2",
                     "--epochs2", "2", "--seed", "1"]) == 0
    return d, data


def test_cli_train_is_deterministic(cli_run):
    d, _ = cli_run
    for name in ("stage1.json", "stage2.json", "train_log.csv"):
        assert (d / "a" / name).read_bytes() == (d / "b" / name).read_bytes()


def test_cli_eval_dump_plot(cli_run, capsys):
    d, data = cli_run
    ck = str(d / "a" / "stage2.json")
    assert main(["eval", "--data", data, "--checkpoint", ck, "--times", "0.4,0.1",
                 "--report", str(d / "r.csv")]) == 0
    assert main(["eval", "--data", data, "--checkpoint", ck, "--report", str(d / "r.json")]) == 0
    assert len(load_report(d / "r.json").rows) == 4
    assert main(["dump-masks", "--data", data, "--checkpoint", ck, "--out", str(d / "m"),
                 "--limit", "2"]) == 0
    assert len(list((d / "m").glob("*.enc.csv"))) == 2
    assert main(["plot", "--reports", f"x={d / 'r.csv'}", str(d / "r.json"),
                 "--out", str(d / "f.svg")]) == 0
    assert len(polylines((d / "f.svg").read_text())) == 2


def test_cli_error_codes(cli_run, capsys):
    d, data = cli_run
    ck = str(d / "a" / "stage2.json")
    assert main(["eval", "--data", data, "--checkpoint", ck, "--times", "10"]) == 2
    assert "outside the observable range" in capsys.readouterr().err
    assert main(["eval", "--data", data, "--checkpoint", ck, "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main(["nope"]) == 2
    assert main(["eval", "--data", str(d / "absent.jsonl"), "--checkpoint", ck]) == 3
    (d / "bad.json").write_text("{")
    assert main(["eval", "--data", data, "--checkpoint", str(d / "bad.json")]) == 3
    assert main(["gen-data", "--n", "1", "--out", str(d / "x.jsonl")]) == 2


def test_cli_eval_on_a_short_window(tmp_path, capsys):
    """A 1.5 s window cannot answer a 10 s anticipation query."""
    c = PROFILES["wide"]
    samples, manifest = generate_synthetic(6, 0, GeneratorConfig.for_model(c))
    save_dataset(tmp_path / "d.jsonl", samples, manifest)
    save_checkpoint(tmp_path / "ck.json", init_params(c, 0))
    code = main(["eval", "--data", str(tmp_path / "d.jsonl"), "--checkpoint",
                 str(tmp_path / "ck.json"), "--times", "10", "--split", "train"])
    assert code == 2


def test_cli_grad_check(tmp_path, capsys, tiny_config):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_config.to_dict()))
    assert main(["grad-check", "--config", str(path)]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_overfit_model_scores_final_step(tmp_path):
    """A model trained to fit its train split is accurate there at the last step."""
    from tamformer.training import TrainConfig, train_two_stage
    c = PROFILES["desk"]
    samples, manifest = generate_synthetic(40, 7, GeneratorConfig.for_model(c))
    res = train_two_stage(samples, manifest, c, TrainConfig(epochs_stage1=80, epochs_stage2=0))
    train = split(samples, manifest, "train")
    r = evaluate_at_times(res.params, train, [0.1])
    assert r.rows[0].f1 >= 0.95
