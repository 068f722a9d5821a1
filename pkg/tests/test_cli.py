import filecmp
import os

import numpy as np
import pytest

from tmtrack import agent as ag
from tmtrack.cli import RunConfig, build_run_config, main
from tmtrack.config import parse_kv_text
from tmtrack.datasets import load_masks, load_sequence, read_label_png

SMALL = ["--set", "synth.width=72", "--set", "synth.height=64", "--set", "synth.frames=12",
         "--set", "synth.min_size=12", "--set", "synth.max_size=18"]


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(os.path.join(a, d), os.path.join(b, d))
                                               for d in cmp.common_dirs)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(root), "--sequences", "2", "--seed", "4"] + SMALL, environ={}) == 0
    return root


def test_default_synth_writes_forty_frames(tmp_path):
    assert main(["synth", "--out", str(tmp_path)], environ={}) == 0
    seq = load_sequence(str(tmp_path / "synth"))
    assert len(seq) == 40


def test_synth_seed_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--seed", "7"] + SMALL, environ={}) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_unknown_key_fails_with_name(tmp_path, capsys):
    cfg = tmp_path / "c.txt"
    cfg.write_text("synth.frames=5\nsynth.colour=red\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")], environ={}) != 0
    assert "synth.colour" in capsys.readouterr().err


def test_unknown_env_key_fails(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)], environ={"TM_SYNTH_COLOUR": "red"}) != 0
    assert "TM_SYNTH_COLOUR" in capsys.readouterr().err


def test_precedence_file_env_flag(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("synth.frames=5\nsynth.objects=1\n")
    env = {"TM_SYNTH_FRAMES": "6", "TM_SYNTH_WIDTH": "48", "TM_SYNTH_HEIGHT": "48",
           "TM_SYNTH_MIN_SIZE": "8", "TM_SYNTH_MAX_SIZE": "12"}
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o"), "--set", "synth.frames=7"],
                environ=env) == 0
    effective = parse_kv_text((tmp_path / "o" / "config.txt").read_text())
    assert effective["synth.frames"] == "7" and effective["synth.width"] == "48"
    assert effective["synth.objects"] == "1"


def test_config_dump_round_trips():
    run = build_run_config({"train.gamma": "0.5", "detector.swaps": "3:0,4:1", "auto_swaps": "true"})
    assert build_run_config(parse_kv_text(run.dump())) == run
    assert build_run_config(parse_kv_text(RunConfig().dump())) == RunConfig()


def test_train_zero_iterations_is_initialisation(tmp_path, dataset):
    out = tmp_path / "a.bin"
    assert main(["train", "--data", str(dataset), "--out", str(out), "--iterations", "0", "--seed", "3"],
                environ={}) == 0
    assert out.read_bytes() == ag.dumps_checkpoint(ag.AgentNet(seed=3))


def test_train_seeded_and_curve(tmp_path, dataset):
    for name in ("a", "b"):
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / name), "--iterations", "60",
                     "--seed", "2"], environ={}) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    rows = (tmp_path / "a.curve.tsv").read_text().splitlines()
    assert rows[0].startswith("episode\t")
    assert [int(r.split("\t")[0]) for r in rows[1:]] == list(range(len(rows) - 1))


def test_train_requires_ground_truth(tmp_path, dataset):
    d = tmp_path / "seq"
    import shutil
    shutil.copytree(dataset / "synth00", d)
    os.remove(d / "masks" / "00005.png")
    assert main(["train", "--data", str(d), "--out", str(tmp_path / "x.bin"), "--iterations", "5"],
                environ={}) != 0


def test_track_identity_update_matches_ground_truth(tmp_path, dataset):
    out = tmp_path / "pred"
    assert main(["track", "--data", str(dataset), "--policy", "update", "--out", str(out)], environ={}) == 0
    for name in ("synth00", "synth01"):
        pred = load_masks(str(out / name))
        gt = load_masks(str(dataset / name))
        assert len(pred) == len(gt) == 12
        assert all(np.array_equal(p, g) for p, g in zip(pred[1:], gt[1:]))
        assert (out / name / "diagnostics.jsonl").read_text()
        conf = (out / name / "confidences.txt").read_text().splitlines()
        assert len(conf) == 13


def test_track_deterministic_and_jobs_independent(tmp_path, dataset):
    ckpt = tmp_path / "a.bin"
    ag.save_checkpoint(ag.AgentNet(seed=9), str(ckpt))
    base = ["track", "--data", str(dataset), "--checkpoint", str(ckpt), "--set", "detector.jitter=0.1",
            "--set", "detector.distractors=2", "--seed", "5"]
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(base + ["--out", str(tmp_path / name), "--jobs", jobs], environ={}) == 0
        for seq in ("synth00", "synth01"):
            os.remove(tmp_path / name / seq / "timings.tsv")
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert same_tree(tmp_path / "a", tmp_path / "c")


def test_track_rejects_wrong_dimension_checkpoint(tmp_path, dataset):
    ckpt = tmp_path / "a.bin"
    ag.save_checkpoint(ag.AgentNet(feature_dim=10), str(ckpt))
    assert main(["track", "--data", str(dataset), "--checkpoint", str(ckpt), "--out", str(tmp_path / "o")],
                environ={}) != 0


def test_eval_perfect_and_blank(tmp_path, dataset, capsys):
    assert main(["eval", "--pred", str(dataset), "--gt", str(dataset), "--out", str(tmp_path / "r.tsv")],
                environ={}) == 0
    report = (tmp_path / "r.tsv").read_text().splitlines()
    assert report[0] == "sequence\tobjects\tframes\tJ_mean\tF_mean\tJF_mean\tLT_F"
    all_row = report[-1].split("\t")
    assert all_row[0] == "ALL" and float(all_row[3]) == 1.0 and float(all_row[4]) == 1.0
    assert capsys.readouterr().out.splitlines() == report

    blank = tmp_path / "blank" / "synth00" / "masks"
    blank.mkdir(parents=True)
    from tmtrack.datasets import write_label_png
    for t, m in enumerate(load_masks(str(dataset / "synth00"))):
        write_label_png(str(blank / f"{t:05d}.png"), np.zeros_like(m))
    assert main(["eval", "--pred", str(tmp_path / "blank"), "--gt", str(dataset / "synth00")], environ={}) == 0
    rows = (tmp_path / "blank" / "report.tsv").read_text().splitlines()
    assert float(rows[-1].split("\t")[3]) == 0.0


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--pairs", "2", "--per-array", "8"], environ={}) == 0
    out = capsys.readouterr().out
    assert "actor max relative error" in out and "critic max relative error" in out
    assert main(["gradcheck", "--pairs", "1", "--per-array", "8", "--corrupt"], environ={}) != 0


def test_bench_train_saves_agent(tmp_path, capsys):
    out = tmp_path / "drift.bin"
    assert main(["bench", "--train", "--set", "train.iterations=20", "--out", str(out)], environ={}) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [l.split("\t")[0] for l in lines[1:]] == ["update", "keep", "oracle", "agent"]
    assert ag.load_checkpoint(str(out)).iteration == 20
