import json

import numpy as np
import pytest

from promptcount.cli import build_parser, main
from promptcount.counter import CountingConfig
from promptcount.io import read_flat, save_label_map
from promptcount.synth import generate_dataset, generate_scene


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


@pytest.fixture
def scene7(tmp_path):
    scene = generate_scene(np.random.default_rng(21), 7, canvas=(64, 64))
    save_label_map(scene.labels, tmp_path / "s.png")
    boxes = [b.as_list() for b in scene.exemplars()]
    (tmp_path / "boxes.json").write_text(json.dumps(boxes))
    return tmp_path


def test_count_seven(scene7, capsys):
    code, out = run(capsys, "count", scene7 / "s.png", "--boxes-json", scene7 / "boxes.json",
                    "--out", scene7 / "o")
    assert code == 0 and json.loads(out)["count"] == 7
    result = json.loads((scene7 / "o" / "result.json").read_text())
    assert result["count"] == 7 and len(result["masks"]) == 7


def test_count_with_box_flags_overlay_and_diagnostics(scene7, capsys):
    boxes = json.loads((scene7 / "boxes.json").read_text())
    flags = [a for b in boxes for a in ("--box", ",".join(map(str, b)))]
    code, _ = run(capsys, "count", scene7 / "s.png", *flags, "--overlay", "--diagnostics",
                  "--out", scene7 / "o")
    assert code == 0
    out = scene7 / "o"
    from PIL import Image

    with Image.open(out / "overlay.png") as im:
        assert im.size == (64, 64) and im.mode == "RGB"
    trace = json.loads((out / "trace.json").read_text())
    for r in range(len(trace)):
        assert read_flat(out / f"csim_round{r}.bin").shape == (1, 64, 64)


def test_missing_image(tmp_path, capsys):
    code, out = run(capsys, "count", tmp_path / "nope.png", "--box", "1,1,2,2")
    assert code == 2 and json.loads(out)["error"]["kind"] == "io"


def test_rounds_flag(scene7, capsys):
    run(capsys, "count", scene7 / "s.png", "--boxes-json", scene7 / "boxes.json",
        "--rounds", 1, "--out", scene7 / "o")
    assert json.loads((scene7 / "o" / "result.json").read_text())["rounds_run"] == 1


def test_pipeline_error_exit(scene7, capsys):
    code, out = run(capsys, "count", scene7 / "s.png", "--box", "0,0,0,0", "--out", scene7 / "o")
    if json.loads((scene7 / "boxes.json").read_text())[0][:2] == [0, 0]:
        pytest.skip("scene happens to have an object at the origin")
    assert code == 1 and json.loads(out)["error"]["kind"] == "empty_exemplar"


def test_no_boxes_is_usage_error(scene7, capsys):
    code, out = run(capsys, "count", scene7 / "s.png")
    assert code == 2 and json.loads(out)["error"]["kind"] == "usage"


def test_bad_flag_value_exits_2(scene7, capsys):
    with pytest.raises(SystemExit) as info:
        main(["count", str(scene7 / "s.png"), "--fusion", "median"])
    assert info.value.code == 2


def test_config_error_exits_2(scene7, capsys):
    code, out = run(capsys, "count", scene7 / "s.png", "--box", "1,1,2,2", "--t2", 1.5)
    assert code == 2 and json.loads(out)["error"]["kind"] == "config"


@pytest.fixture
def data50(tmp_path, capsys):
    code, _ = run(capsys, "gen-synthetic", "--n", 50, "--seed", 5, "--out", tmp_path / "d")
    assert code == 0
    return tmp_path


def test_eval_fifty(data50, capsys):
    code, out = run(capsys, "eval", data50 / "d" / "annotations.json", "--out", data50 / "e")
    assert code == 0
    report = json.loads((data50 / "e" / "report.json").read_text())
    assert report["n"] == 50 and report["mae"] == 0.0
    lines = (data50 / "e" / "per_image.csv").read_text().splitlines()
    assert lines[0] == "id,gt,pred,abs_err" and len(lines) == 51


def test_eval_ablation_metadata(data50, capsys):
    run(capsys, "eval", data50 / "d" / "annotations.json", "--ablate",
        "background=off,residual=off", "--out", data50 / "e")
    cfg = json.loads((data50 / "e" / "report.json").read_text())["config"]
    assert cfg["enable_background"] is False and cfg["enable_residual"] is False
    assert cfg["enable_multiround"] is True


def test_eval_sweep_files(data50, capsys):
    code, _ = run(capsys, "eval", data50 / "d" / "annotations.json", "--sweep-lambda",
                  "0,0.3,0.5,0.7,0.9,1.0", "--out", data50 / "e")
    assert code == 0
    assert len(list((data50 / "e").glob("report_lambda_*.json"))) == 6


def test_eval_total_failure(tmp_path, capsys):
    generate_dataset(2, (1, 3), seed=0, outdir=tmp_path)
    for p in tmp_path.glob("*.png"):
        p.unlink()
    code, out = run(capsys, "eval", tmp_path / "annotations.json", "--out", tmp_path / "e")
    assert code == 1 and json.loads(out)["error"]["kind"] == "eval"


def test_gen_infeasible(tmp_path, capsys):
    code, out = run(capsys, "gen-synthetic", "--n", 1, "--count-range", "70..70",
                    "--size-range", "30..40", "--canvas", "64..64", "--out", tmp_path)
    assert code == 1 and json.loads(out)["error"]["kind"] == "gen"


def test_embedding_file_backend(scene7, capsys):
    from promptcount.backend import MockBackend
    from promptcount.io import load_image, write_embedding

    img = load_image(scene7 / "s.png")
    write_embedding(MockBackend().encode(img), scene7 / "s.emb")
    code, out = run(capsys, "count", scene7 / "s.png", "--boxes-json", scene7 / "boxes.json",
                    "--backend", "embedding-file", "--embedding", scene7 / "s.emb",
                    "--out", scene7 / "o")
    assert code == 0 and json.loads(out)["count"] == 7


def test_model_file_needs_config(scene7, capsys):
    code, out = run(capsys, "count", scene7 / "s.png", "--box", "1,1,2,2", "--backend", "model-file")
    assert code == 2 and json.loads(out)["error"]["kind"] == "usage"


def test_help_defaults_match_config():
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    defaults = {a.dest: a.default for a in sub["count"]._actions}
    cfg = CountingConfig()
    assert defaults["lam"] == cfg.lam and defaults["t1"] == cfg.t1 and defaults["t2"] == cfg.t2
    assert defaults["fusion"] == cfg.fusion and defaults["rounds"] == cfg.rounds_cap
    assert defaults["novelty_iou"] == cfg.novelty_iou and defaults["dedup_iou"] == cfg.dedup_iou
    assert defaults["stride"] == cfg.matrix_stride and defaults["batch"] == cfg.batch_size
    assert defaults["bg_sign"] == "+"
    text = sub["count"].format_help()
    for flag in ("--backend", "--lambda", "--t1", "--t2", "--fusion", "--bg-sign", "--rounds",
                 "--novelty-iou", "--dedup-iou", "--stride", "--batch", "--ablate", "--out"):
        assert flag in text
    assert "--workers" in sub["eval"].format_help() and "--seed" in sub["gen-synthetic"].format_help()
