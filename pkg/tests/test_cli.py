# Copyright: 2026, the guidir toolkit contributors
# SPDX-License-Identifier: AGPL-3.0-only

import csv
import json
import os
import shutil

import pytest
from sqlalchemy import create_engine, select
from sqlalchemy.orm import Session

from guidir.cli import EXIT_INPUT, EXIT_OK, main
from guidir.denoiser import build_denoiser, save_denoiser
from guidir.imaging import load_png
from guidir.models import EvaluationReport, GlobalStats, ReportType
from guidir.robust_encoder import AutoEncoder, save_autoencoder
import config


def read(path, mode='r'):
    with open(path, mode) as f:
        return f.read()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """
    A small corpus, its sr4 degradation and an untrained checkpoint.

    """
    root = str(tmp_path_factory.mktemp("cli"))
    corpus = os.path.join(root, "corpus")
    degraded = os.path.join(root, "degraded")
    assert main(["synth", "--n", "4", "--size", "16", "--seed", "1",
                 "--out", corpus]) == EXIT_OK
    assert main(["degrade", "--manifest",
                 os.path.join(corpus, "manifest.jsonl"), "--preset", "sr4",
                 "--out", degraded]) == EXIT_OK
    checkpoint = os.path.join(root, "denoiser.ckpt")
    save_denoiser(build_denoiser(width=8, seed=0), checkpoint)
    return {'root': root, 'corpus': corpus, 'degraded': degraded,
            'checkpoint': checkpoint}


def restore_args(workspace, out, *extra):
    return ["restore", "--checkpoint", workspace['checkpoint'],
            "--input", os.path.join(workspace['degraded'], "lq"),
            "--manifest", os.path.join(workspace['degraded'],
                                       "manifest.jsonl"),
            "--steps", "3", "--out", out] + list(extra)


def test_synth_is_reproducible(tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (first, second):
        assert main(["synth", "--n", "6", "--size", "8", "--seed", "3",
                     "--negative-ratio", "0.2", "--out", out]) == EXIT_OK
    assert read(os.path.join(first, "manifest.jsonl")) == \
        read(os.path.join(second, "manifest.jsonl"))
    effective = json.loads(read(os.path.join(first,
                                             config.EFFECTIVE_CONFIG_FILE)))
    assert effective['n'] == 6
    assert effective['command'] == "synth"
    assert "func" not in effective


def test_synth_rejects_bad_ratio(tmp_path):
    assert main(["synth", "--n", "4", "--negative-ratio", "1.5",
                 "--out", str(tmp_path)]) == EXIT_INPUT


def test_synth_rejects_non_numeric_option(tmp_path):
    assert main(["synth", "--n", "four", "--out", str(tmp_path)]) == 2


def test_synth_empty_corpus(tmp_path):
    assert main(["synth", "--n", "0", "--out", str(tmp_path)]) == EXIT_OK
    assert read(os.path.join(str(tmp_path), "manifest.jsonl")) == ""


def test_synth_reuses_the_cache(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "CACHE_DIR", str(tmp_path))
    args = ["synth", "--n", "3", "--size", "8"]
    assert main(args) == EXIT_OK
    out = os.path.join(str(tmp_path), "corpus-n3-s0")
    stamp = os.path.getmtime(os.path.join(out, "manifest.jsonl"))
    assert main(args) == EXIT_OK
    assert os.path.getmtime(os.path.join(out, "manifest.jsonl")) == stamp


def test_config_file_defaults_and_overrides(tmp_path):
    path = str(tmp_path / "run.toml")
    with open(path, 'w') as f:
        f.write('seed = 5\n\n[synth]\nn = 3\nsize = 8\n')
    out = str(tmp_path / "out")
    assert main(["synth", "--config", path, "--n", "2", "--out",
                 out]) == EXIT_OK
    effective = json.loads(read(os.path.join(out,
                                             config.EFFECTIVE_CONFIG_FILE)))
    assert (effective['seed'], effective['n'], effective['size']) == (5, 2, 8)

    # The effective config repeats the run.
    rerun = str(tmp_path / "rerun")
    shutil.copy(os.path.join(out, config.EFFECTIVE_CONFIG_FILE),
                str(tmp_path / "effective.json"))
    assert main(["synth", "--config", str(tmp_path / "effective.json"),
                 "--out", rerun]) == EXIT_OK
    assert read(os.path.join(out, "manifest.jsonl")) == \
        read(os.path.join(rerun, "manifest.jsonl"))


def test_config_file_with_unknown_key(tmp_path):
    path = str(tmp_path / "run.json")
    with open(path, 'w') as f:
        json.dump({'sead': 1}, f)
    assert main(["synth", "--config", path, "--out",
                 str(tmp_path)]) == EXIT_INPUT


def test_missing_required_option():
    assert main(["degrade", "--preset", "sr4"]) == EXIT_INPUT


def test_degrade_unknown_preset(workspace, tmp_path):
    assert main(["degrade", "--manifest",
                 os.path.join(workspace['corpus'], "manifest.jsonl"),
                 "--preset", "sr3", "--out", str(tmp_path)]) == EXIT_INPUT


def test_degrade_is_reproducible(workspace, tmp_path):
    assert main(["degrade", "--manifest",
                 os.path.join(workspace['corpus'], "manifest.jsonl"),
                 "--preset", "sr4", "--out", str(tmp_path)]) == EXIT_OK
    assert read(os.path.join(str(tmp_path), "manifest.jsonl")) == \
        read(os.path.join(workspace['degraded'], "manifest.jsonl"))
    assert sorted(os.listdir(os.path.join(str(tmp_path), "gt"))) == \
        sorted(os.listdir(os.path.join(str(tmp_path), "lq")))


def test_evaluate_identical_dirs(workspace, tmp_path):
    gt = os.path.join(workspace['degraded'], "gt")
    assert main(["evaluate", "--restored", gt, "--reference", gt,
                 "--out", str(tmp_path)]) == EXIT_OK
    summary = json.loads(read(os.path.join(str(tmp_path), "summary.json")))
    assert summary['count'] == 4
    assert summary['psnr_db_mean'] == 99.0
    assert summary['ssim_mean'] == pytest.approx(1.0)
    with open(os.path.join(str(tmp_path), "metrics.csv")) as f:
        assert len(list(csv.reader(f))) == 5


def test_evaluate_mismatched_stems(workspace, tmp_path):
    partial = str(tmp_path / "partial")
    shutil.copytree(os.path.join(workspace['degraded'], "gt"), partial)
    os.remove(os.path.join(partial, sorted(os.listdir(partial))[0]))
    assert main(["evaluate", "--restored", partial, "--reference",
                 os.path.join(workspace['degraded'], "gt"),
                 "--out", str(tmp_path / "out")]) == EXIT_INPUT


def test_evaluate_store(workspace, tmp_path, monkeypatch):
    engine = create_engine("sqlite:///{}".format(tmp_path / "reports.db"))
    monkeypatch.setattr(config, "DB_ENGINE", engine)
    degraded = workspace['degraded']
    assert main(["evaluate", "--restored", os.path.join(degraded, "lq"),
                 "--reference", os.path.join(degraded, "gt"), "--store",
                 "--out", str(tmp_path / "out")]) == EXIT_OK
    with Session(engine) as session:
        reports = session.scalars(select(EvaluationReport)).all()
        stats = session.scalars(select(GlobalStats)).one()
    assert len(reports) == 1
    assert reports[0].type is ReportType.evaluate
    assert reports[0].run_config['store'] is True
    assert stats.count == 4
    assert stats.psnr_mean < 99.0


def test_restore_without_drift_returns_the_input(workspace, tmp_path):
    out = str(tmp_path)
    assert main(restore_args(workspace, out, "--tau-r", "0",
                             "--trace")) == EXIT_OK
    lq_dir = os.path.join(workspace['degraded'], "lq")
    for name in os.listdir(lq_dir):
        restored = load_png(os.path.join(out, name))
        lq = load_png(os.path.join(lq_dir, name))
        assert abs(restored.data - lq.data).max() <= 1.0 / 255 + 1e-9
        stem = os.path.splitext(name)[0]
        assert os.path.isfile(os.path.join(out, stem + ".trace.csv"))


def test_restore_without_cfg_ignores_the_negative_prompt(workspace,
                                                          tmp_path):
    outputs = []
    for negative in ("blur", "cartoon dirty"):
        out = str(tmp_path / negative.replace(" ", "-"))
        assert main(restore_args(workspace, out, "--lambda-cfg", "0",
                                 "--negative-prompt", negative)) == EXIT_OK
        outputs.append({name: read(os.path.join(out, name), 'rb')
                        for name in os.listdir(out)
                        if name.endswith(".png")})
    assert outputs[0] == outputs[1]


def test_restore_is_independent_of_jobs(workspace, tmp_path):
    outputs = []
    for jobs in ("1", "2"):
        out = str(tmp_path / jobs)
        assert main(restore_args(workspace, out, "--jobs", jobs)) == EXIT_OK
        outputs.append({name: read(os.path.join(out, name), 'rb')
                        for name in os.listdir(out)
                        if name.endswith(".png")})
    assert outputs[0] == outputs[1]


def test_restore_rejects_unknown_prompt_token(workspace, tmp_path):
    assert main(restore_args(workspace, str(tmp_path), "--prompt",
                             "zebra")) == EXIT_INPUT


def test_sweep_rows(workspace, tmp_path):
    degraded = workspace['degraded']
    out = str(tmp_path)
    assert main(["sweep-tau", "--checkpoint", workspace['checkpoint'],
                 "--input", os.path.join(degraded, "lq"),
                 "--gt", os.path.join(degraded, "gt"),
                 "--taus", "0,2", "--steps", "3", "--out", out]) == EXIT_OK
    with open(os.path.join(out, "sweep.csv")) as f:
        rows = list(csv.DictReader(f))
    assert [float(r['tau_r']) for r in rows] == [0.0, 2.0]
    assert float(rows[0]['psnr_lq_db']) >= 60.0
    assert float(rows[1]['psnr_lq_db']) < float(rows[0]['psnr_lq_db'])
    assert read(os.path.join(out, "sweep.dat")).startswith("# tau_r")


def test_train_writes_checkpoint_and_history(workspace, tmp_path):
    out = str(tmp_path)
    assert main(["train", "--manifest",
                 os.path.join(workspace['corpus'], "manifest.jsonl"),
                 "--steps", "2", "--base-steps", "2", "--batch-size", "2",
                 "--lr", "1e-3", "--out", out]) == EXIT_OK
    with open(os.path.join(out, "history.csv")) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "loss", "sigma_mean"]
    assert len(rows) == 5
    train_config = json.loads(read(os.path.join(out, "train-config.json")))
    assert train_config['base_steps'] == 2
    assert train_config['freeze_base'] is True

    # The checkpoint restores.
    assert main(restore_args(workspace, str(tmp_path / "restored"),
                             "--checkpoint",
                             os.path.join(out, "denoiser.ckpt"))) == EXIT_OK


def test_train_encoder_needs_enough_images(workspace, tmp_path):
    assert main(["train-encoder", "--manifest",
                 os.path.join(workspace['corpus'], "manifest.jsonl"),
                 "--epochs", "1", "--finetune-epochs", "1",
                 "--out", str(tmp_path)]) == EXIT_INPUT


def test_preview(workspace, tmp_path):
    encoder = str(tmp_path / "encoder.ckpt")
    save_autoencoder(AutoEncoder(), encoder)
    out = str(tmp_path / "preview")
    lq_dir = os.path.join(workspace['degraded'], "lq")
    assert main(["preview", "--encoder", encoder, "--input", lq_dir,
                 "--out", out]) == EXIT_OK
    for name in os.listdir(lq_dir):
        assert load_png(os.path.join(out, name)).shape == \
            load_png(os.path.join(lq_dir, name)).shape


def test_restore_rejects_a_non_denoiser_checkpoint(workspace, tmp_path):
    encoder = str(tmp_path / "encoder.ckpt")
    save_autoencoder(AutoEncoder(), encoder)
    assert main(restore_args(workspace, str(tmp_path / "out"),
                             "--checkpoint", encoder)) != EXIT_OK
