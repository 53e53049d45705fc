"""Config schema and command-line surface.

Config tests exercise the closed-schema walker: every violation reported in
one raise, unknown keys rejected, JSON bools never accepted as ints. CLI
tests call main() in process and check exit codes (0 ok, 1 usage/config,
2 data, 3 numerical) plus the CSV artifacts.
"""
import json
import os

import numpy as np
import pytest

from maskrecon.attacks import BackwardMode
from maskrecon.cli import main
from maskrecon.config import config_to_json, load_config, parse_config
from maskrecon.errors import ConfigError
from maskrecon.estimation import Method
from maskrecon.model import Classifier, load_checkpoint
from maskrecon.pipeline import AttackKind


def problems_of(text):
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    return ei.value.problems


MINIMAL = {
    "dataset": {
        "kind": "synthetic", "count": 6, "height": 8, "width": 8,
        "rank": 2, "noise_sigma": 0.05, "classes": 2,
    },
}


def test_minimal_config_defaults():
    cfg = parse_config(json.dumps(MINIMAL))
    assert cfg.seed == 0
    assert cfg.output_dir == "out"
    assert cfg.hidden == (256, 128)
    assert cfg.train is None
    assert cfg.estimator.method is Method.SOFT_IMPUTE
    assert cfg.estimator.si_lambda == 0.5
    assert cfg.attacks == ()
    assert cfg.eval_limit is None and cfg.votes is None
    assert cfg.sweep_ranges is None
    assert cfg.dataset.kind == "synthetic"
    assert cfg.dataset.synthetic.count == 6
    assert cfg.dataset.synthetic.channels == 1  # schema default


FULL = {
    "seed": 11,
    "output_dir": "results",
    "dataset": {"kind": "idx", "images": "tr-img.idx", "labels": "tr-lab.idx",
                "limit": 500},
    "model": {"hidden": [64, 32]},
    "train": {
        "p_start": 0.4, "p_end": 0.6, "n_masks": 5, "include_endpoint": True,
        "epochs": 3, "batch_size": 16, "lr": 0.05, "momentum": 0.8,
        "adversarial": True, "adv_steps": 4, "adv_epsilon": 0.2,
        "adv_step_size": 0.02, "adv_through_defense": False,
    },
    "estimator": {
        "method": "usvt", "usvt_eta": 0.02, "si_lambda": 1.5, "max_iters": 50,
        "tol": 1e-3, "nn_lambda_min": 0.01, "nn_anneal": 0.5,
        "clip_lo": 0.0, "clip_hi": 1.0,
    },
    "attacks": [
        {"name": "pgd40", "kind": "pgd", "epsilon": 0.1, "step_size": 0.01,
         "steps": 40, "restarts": 2, "backward_mode": "identity_bpda"},
        {"name": "proj", "kind": "projected_bpda",
         "backward_mode": "projected_bpda", "projection_rank_k": 5},
        {"name": "transfer", "kind": "pgd", "transfer": True},
        {"name": "grad_free", "kind": "spsa", "spsa_batch": 256,
         "spsa_delta": 0.005, "spsa_lr": 0.02},
    ],
    "eval": {"limit": 100, "votes": 10},
    "sweep": {"ranges": [[0.8, 1.0], [0.6, 0.8]]},
}


def test_full_config_parses():
    cfg = parse_config(json.dumps(FULL))
    assert cfg.seed == 11
    assert cfg.hidden == (64, 32)
    assert cfg.train.include_endpoint is True
    assert cfg.train.adv_through_defense is False
    assert cfg.estimator.method is Method.USVT
    assert cfg.estimator.clip_range == (0.0, 1.0)
    assert len(cfg.attacks) == 4
    assert cfg.attacks[0].kind is AttackKind.PGD
    assert cfg.attacks[0].cfg.backward_mode is BackwardMode.IDENTITY_BPDA
    assert cfg.attacks[1].cfg.projection_rank_k == 5
    assert cfg.attacks[2].transfer is True
    assert cfg.attacks[3].cfg.spsa_batch == 256
    assert cfg.eval_limit == 100 and cfg.votes == 10
    assert cfg.sweep_ranges == ((0.8, 1.0), (0.6, 0.8))


def test_roundtrip_full():
    cfg = parse_config(json.dumps(FULL))
    text = config_to_json(cfg)
    assert text.endswith("\n")
    assert parse_config(text) == cfg


def test_roundtrip_minimal():
    cfg = parse_config(json.dumps(MINIMAL))
    assert parse_config(config_to_json(cfg)) == cfg


def test_roundtrip_synthetic_with_limit():
    raw = dict(MINIMAL)
    raw["dataset"] = dict(MINIMAL["dataset"], limit=4, channels=3)
    cfg = parse_config(json.dumps(raw))
    assert cfg.dataset.limit == 4
    assert parse_config(config_to_json(cfg)) == cfg


def test_unknown_keys_reported_at_every_level():
    raw = {
        "dataset": dict(MINIMAL["dataset"], bogus=1),
        "train": {"p_start": 0.4, "p_end": 0.6, "nonsense": True},
        "extra": 2,
    }
    problems = problems_of(json.dumps(raw))
    assert "top level: unknown key 'extra'" in problems
    assert "dataset: unknown key 'bogus'" in problems
    assert "train: unknown key 'nonsense'" in problems
    assert len(problems) == 3


def test_bool_rejected_where_int_expected():
    raw = dict(MINIMAL, train={"p_start": 0.4, "p_end": 0.6, "epochs": True})
    problems = problems_of(json.dumps(raw))
    assert problems == ["train: key 'epochs' must be int, got bool"]


def test_int_accepted_where_float_expected():
    raw = dict(MINIMAL, estimator={"si_lambda": 1})
    cfg = parse_config(json.dumps(raw))
    assert cfg.estimator.si_lambda == 1.0
    assert isinstance(cfg.estimator.si_lambda, float)


def test_missing_required_keys():
    problems = problems_of(json.dumps(dict(MINIMAL, train={})))
    assert "train: missing required key 'p_start'" in problems
    assert "train: missing required key 'p_end'" in problems
    problems = problems_of("{}")
    assert problems == ["top level: missing required key 'dataset'"]


def test_bad_dataset_kind():
    problems = problems_of(json.dumps({"dataset": {"kind": "csv"}}))
    assert problems == ["dataset: kind must be 'idx' or 'synthetic', got 'csv'"]


def test_invalid_json_and_non_object():
    assert "invalid JSON" in problems_of("{nope")[0]
    assert problems_of("[1, 2]") == ["top level must be a JSON object"]


def test_bad_attack_kind_and_backward_mode():
    raw = dict(MINIMAL, attacks=[{"name": "a", "kind": "cw"}])
    [msg] = problems_of(json.dumps(raw))
    assert msg.startswith("attacks[0]: kind must be one of")
    assert "'cw'" in msg
    raw = dict(MINIMAL, attacks=[{"name": "a", "kind": "pgd",
                                  "backward_mode": "exact"}])
    [msg] = problems_of(json.dumps(raw))
    assert msg.startswith("attacks[0]: backward_mode must be one of")


def test_attack_value_validation_bubbles_up():
    raw = dict(MINIMAL, attacks=[{"name": "a", "kind": "pgd", "epsilon": -0.5}])
    [msg] = problems_of(json.dumps(raw))
    assert msg.startswith("attacks[0]: epsilon must be >= 0")


def test_projected_mode_requires_rank():
    raw = dict(MINIMAL, attacks=[{"name": "a", "kind": "projected_bpda",
                                  "backward_mode": "projected_bpda"}])
    [msg] = problems_of(json.dumps(raw))
    assert msg == "attacks[0]: projected backward mode needs projection_rank_k >= 1"


def test_eval_sweep_and_model_validation_all_collected():
    raw = dict(
        MINIMAL,
        model={"hidden": [64, 0]},
        eval={"limit": 0, "votes": 0},
        sweep={"ranges": [[0.4], "x", [0.1, True]]},
    )
    problems = problems_of(json.dumps(raw))
    assert "model: 'hidden' must be a list of positive integers" in problems
    assert "eval: limit must be >= 1, got 0" in problems
    assert "eval: votes must be >= 1, got 0" in problems
    assert "sweep: ranges[0] must be [a, b] numbers" in problems
    assert "sweep: ranges[1] must be [a, b] numbers" in problems
    assert "sweep: ranges[2] must be [a, b] numbers" in problems
    assert len(problems) == 6


def test_load_config_reads_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(MINIMAL), encoding="utf-8")
    assert load_config(path) == parse_config(json.dumps(MINIMAL))


# --- CLI ---

BASE = {
    "seed": 7,
    "dataset": {"kind": "synthetic", "count": 6, "height": 8, "width": 8,
                "rank": 2, "noise_sigma": 0.05, "classes": 2},
    "estimator": {"method": "nuclear_norm"},
}
TRAINED = dict(
    BASE,
    train={"p_start": 0.9, "p_end": 1.0, "n_masks": 2, "epochs": 0},
    eval={"limit": 3},
)


def write_cfg(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw), encoding="utf-8")
    return str(path)


def run(tmp_path, raw, argv, out="out"):
    cfg = write_cfg(tmp_path, raw)
    outdir = str(tmp_path / out)
    return main(argv + ["--config", cfg, "--output-dir", outdir]), outdir


def test_rank_analysis_writes_cdf_csv(tmp_path):
    rc, out = run(tmp_path, BASE, ["rank-analysis"])
    assert rc == 0
    lines = open(os.path.join(out, "rank_cdf.csv")).read().splitlines()
    assert lines[0] == "# seed=7"
    assert lines[1] == "rank,count,cdf"
    ranks = [int(row.split(",")[0]) for row in lines[2:]]
    assert ranks == sorted(ranks)
    assert float(lines[-1].rsplit(",", 1)[1]) == 1.0  # CDF reaches 1


def test_seed_override_lands_in_header(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    out = str(tmp_path / "o5")
    rc = main(["rank-analysis", "--config", cfg, "--seed", "5",
               "--output-dir", out])
    assert rc == 0
    first = open(os.path.join(out, "rank_cdf.csv")).readline()
    assert first == "# seed=5\n"


def test_reconstruct_full_observation_is_identity(tmp_path):
    rc, out = run(tmp_path, BASE, ["reconstruct", "--p", "1.0"])
    assert rc == 0
    summary = open(os.path.join(out, "reconstruct_summary.csv")).read()
    assert summary == "# seed=7\nindex,p,method,rel_error\n0,1.0,nuclear_norm,0.0\n"
    lines = open(os.path.join(out, "recon_0.csv")).read().splitlines()
    grid = np.array([[float(v) for v in row.split(",")] for row in lines[1:]])
    assert grid.shape == (8, 8)
    assert grid.min() >= 0.0 and grid.max() <= 1.0


def test_reconstruct_bad_p_is_config_error(tmp_path):
    assert run(tmp_path, BASE, ["reconstruct", "--p", "0.0"])[0] == 1
    assert run(tmp_path, BASE, ["reconstruct", "--p", "1.5"])[0] == 1


def test_reconstruct_starved_mask_is_numerical_error(tmp_path):
    # p=0.001 on an 8x8 image observes nothing
    assert run(tmp_path, BASE, ["reconstruct", "--p", "0.001"])[0] == 3


def test_reconstruct_index_out_of_range(tmp_path):
    assert run(tmp_path, BASE, ["reconstruct", "--p", "0.5", "--index", "99"])[0] == 1


def test_train_writes_checkpoint_and_log(tmp_path):
    raw = dict(BASE, train={"p_start": 0.9, "p_end": 1.0, "n_masks": 2,
                            "epochs": 1, "batch_size": 4})
    rc, out = run(tmp_path, raw, ["train"])
    assert rc == 0
    lines = open(os.path.join(out, "train_log.csv")).read().splitlines()
    assert lines[0] == "# seed=7"
    assert lines[1] == "epoch,mean_loss,train_accuracy"
    assert len(lines) == 3 and lines[2].startswith("0,")
    params = load_checkpoint(os.path.join(out, "model.ckpt"))
    pred = Classifier(params).predict(np.zeros(64))
    assert pred in (0, 1)


def test_eval_empty_grid_single_clean_row(tmp_path):
    rc, out = run(tmp_path, TRAINED, ["eval"])
    assert rc == 0
    lines = open(os.path.join(out, "eval_report.csv")).read().splitlines()
    assert lines[0] == "# seed=7"
    assert lines[1] == "p_range,method,attack,steps,accuracy,error"
    assert len(lines) == 3
    assert lines[2].startswith("0.9-1,nuclear_norm,clean,0,")
    assert lines[2].endswith(",")  # empty error column
    acc = float(lines[2].split(",")[4])
    assert 0.0 <= acc <= 1.0


def test_eval_votes_appends_vote_row(tmp_path):
    raw = dict(TRAINED, eval={"limit": 3, "votes": 3})
    rc, out = run(tmp_path, raw, ["eval"])
    assert rc == 0
    lines = open(os.path.join(out, "eval_report.csv")).read().splitlines()
    assert len(lines) == 4
    assert lines[3].split(",")[2] == "vote3"


def test_eval_rerun_is_byte_identical(tmp_path):
    _, out_a = run(tmp_path, TRAINED, ["eval"], out="a")
    _, out_b = run(tmp_path, TRAINED, ["eval"], out="b")
    for name in ("eval_report.csv", "model.ckpt"):
        a = open(os.path.join(out_a, name), "rb").read()
        b = open(os.path.join(out_b, name), "rb").read()
        assert a == b


def test_attack_results_respect_budget(tmp_path):
    raw = dict(TRAINED, attacks=[{"name": "fgsm8", "kind": "fgsm"}],
               eval={"limit": 2})
    rc, out = run(tmp_path, raw, ["attack"])
    assert rc == 0
    lines = open(os.path.join(out, "attack_results.csv")).read().splitlines()
    assert lines[1] == "attack,image,label,success,final_loss,linf"
    rows = [line.split(",") for line in lines[2:]]
    assert len(rows) == 2
    for row in rows:
        assert row[0] == "fgsm8"
        assert row[3] in ("0", "1")
        assert float(row[5]) <= 8 / 255 + 1e-9


def test_attack_rerun_is_byte_identical(tmp_path):
    raw = dict(TRAINED, attacks=[{"name": "fgsm8", "kind": "fgsm"}],
               eval={"limit": 2})
    _, out_a = run(tmp_path, raw, ["attack"], out="a")
    _, out_b = run(tmp_path, raw, ["attack"], out="b")
    a = open(os.path.join(out_a, "attack_results.csv"), "rb").read()
    b = open(os.path.join(out_b, "attack_results.csv"), "rb").read()
    assert a == b


def test_attack_requires_nonempty_grid(tmp_path):
    assert run(tmp_path, TRAINED, ["attack"])[0] == 1


def test_sweep_writes_csv(tmp_path):
    raw = dict(TRAINED, sweep={"ranges": [[0.9, 1.0]]},
               attacks=[{"name": "fgsm8", "kind": "fgsm"}], eval={"limit": 2})
    rc, out = run(tmp_path, raw, ["sweep"])
    assert rc == 0
    lines = open(os.path.join(out, "sweep.csv")).read().splitlines()
    assert lines[0] == "# seed=7"
    assert lines[1] == "p_range,clean_accuracy,robust_accuracy"
    assert len(lines) == 3 and lines[2].startswith("0.9-1,")


def test_sweep_requires_ranges_and_attack(tmp_path):
    assert run(tmp_path, TRAINED, ["sweep"])[0] == 1
    raw = dict(TRAINED, sweep={"ranges": [[0.9, 1.0]]})
    assert run(tmp_path, raw, ["sweep"])[0] == 1


def test_missing_idx_files_are_data_error(tmp_path):
    raw = {"dataset": {"kind": "idx", "images": str(tmp_path / "no.idx"),
                       "labels": str(tmp_path / "no-lab.idx")}}
    assert run(tmp_path, raw, ["rank-analysis"])[0] == 2


def test_train_section_required_when_no_checkpoint(tmp_path):
    assert run(tmp_path, BASE, ["eval"])[0] == 1


def test_usage_errors_exit_1(tmp_path):
    cfg = write_cfg(tmp_path, BASE)
    with pytest.raises(SystemExit) as ei:
        main(["eval"])  # missing --config
    assert ei.value.code == 1
    with pytest.raises(SystemExit) as ei:
        main(["reconstruct", "--config", cfg, "--p", "1.0", "--method", "dct"])
    assert ei.value.code == 1
    with pytest.raises(SystemExit) as ei:
        main(["frobnicate", "--config", cfg])
    assert ei.value.code == 1


def test_config_error_exit_1(tmp_path):
    raw = dict(BASE, extra=1)
    assert run(tmp_path, raw, ["rank-analysis"])[0] == 1
