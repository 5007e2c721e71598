import json

import numpy as np
import pytest

from specrec import generate_synthetic, save_interactions, write_embedding_file
from specrec.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    data = generate_synthetic(seed=5, n_top=6, n_users=40)
    emb_path = root / "embeddings.f32"
    log_path = root / "interactions.jsonl"
    write_embedding_file(emb_path, data.item_ids, data.embeddings.astype(np.float32))
    save_interactions(log_path, data.log)
    cfg_path = root / "config.ini"
    cfg_path.write_text(
        "[paths]\n"
        f"interactions = {log_path}\n"
        f"embeddings = {emb_path}\n"
        f"artifacts = {root / 'artifacts'}\n"
        "[split]\n"
        f"t_valid = {data.t_valid}\n"
        f"t_test = {data.t_test}\n"
        "[bench]\n"
        "cases = 5\n"
        "latency_sizes = 50\n"
        "repetitions = 2\n"
    )
    return {"root": root, "cfg": str(cfg_path), "data": data}


def run(workspace, *argv):
    return main(["-c", workspace["cfg"], *argv])


def test_pipeline_end_to_end(workspace, capsys):
    art = workspace["root"] / "artifacts"
    assert run(workspace, "tokenize") == 0
    assert (art / "codebooks.npz").exists()
    assert (art / "semantic_ids.jsonl").exists()
    assert (art / "codebooks.npz.manifest.json").exists()
    assert run(workspace, "fit") == 0
    assert (art / "scorer.ckpt").exists()
    assert run(workspace, "index") == 0
    assert (art / "index.npz").exists()

    user = workspace["data"].log[0].user
    capsys.readouterr()
    assert run(workspace, "recommend", "--user", user) == 0
    out = json.loads(capsys.readouterr().out)
    assert 1 <= len(out) <= 10
    assert {"item", "score", "provenance"} <= set(out[0])
    known = set(workspace["data"].item_ids)
    assert all(e["item"] in known for e in out)

    assert run(workspace, "evaluate", "--split", "valid") == 0
    report = json.loads((art / "report_valid.json").read_text())
    assert report["case_counts"]["overall"] > 0
    assert 0.0 <= report["metrics"]["overall"]["recall@50"] <= 1.0
    assert (art / "report_valid.txt").exists()


def test_recommend_with_explicit_history(workspace, capsys):
    ids = workspace["data"].item_ids
    capsys.readouterr()
    assert run(workspace, "recommend", "--history", ",".join(ids[:3])) == 0
    out = json.loads(capsys.readouterr().out)
    assert out and all(e["item"] not in ids[:3] for e in out)


def test_determinism_across_reruns(workspace):
    art = workspace["root"] / "artifacts"
    sids = (art / "semantic_ids.jsonl").read_bytes()
    ckpt = (art / "scorer.ckpt").read_bytes()
    assert run(workspace, "tokenize") == 0
    assert run(workspace, "fit") == 0
    assert (art / "semantic_ids.jsonl").read_bytes() == sids
    assert (art / "scorer.ckpt").read_bytes() == ckpt


def test_different_seed_changes_digits_keeps_invariants(workspace, tmp_path):
    art = workspace["root"] / "artifacts"
    baseline = (art / "semantic_ids.jsonl").read_text().splitlines()
    alt_root = tmp_path
    alt_cfg = alt_root / "config.ini"
    base_cfg = (workspace["root"] / "config.ini").read_text()
    alt_cfg.write_text(
        base_cfg.replace(
            f"artifacts = {workspace['root'] / 'artifacts'}",
            f"artifacts = {alt_root / 'artifacts'}",
        )
    )
    assert main(["-c", str(alt_cfg), "--set", "run.seed=9", "tokenize"]) == 0
    alt = (alt_root / "artifacts" / "semantic_ids.jsonl").read_text().splitlines()
    assert len(alt) == len(baseline)
    base_digits = [tuple(json.loads(l)["digits"]) for l in baseline]
    alt_digits = [tuple(json.loads(l)["digits"]) for l in alt]
    assert alt_digits != base_digits
    assert len(set(alt_digits)) == len(alt_digits)


def test_missing_artifact_names_producer(workspace, tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    base = (workspace["root"] / "config.ini").read_text()
    cfg.write_text(
        base.replace(
            f"artifacts = {workspace['root'] / 'artifacts'}",
            f"artifacts = {tmp_path / 'artifacts'}",
        )
    )
    capsys.readouterr()
    assert main(["-c", str(cfg), "fit"]) == 2
    assert "specrec tokenize" in capsys.readouterr().err


def test_empty_history_is_usage_error(workspace):
    assert run(workspace, "recommend", "--history", "") == 1


def test_unknown_item_is_format_error(workspace, capsys):
    capsys.readouterr()
    assert run(workspace, "recommend", "--history", "nope1,nope2") == 2
    assert "unknown item" in capsys.readouterr().err


def test_missing_config_is_usage_error(tmp_path):
    assert main(["-c", str(tmp_path / "absent.ini"), "tokenize"]) == 1


def test_missing_subcommand_is_usage_error(workspace):
    assert main(["-c", workspace["cfg"]]) == 1


def test_config_hash_mismatch_refused_then_forced(workspace):
    # scorer params change the config hash; fit-derived artifacts are stale
    rc = main([
        "-c", workspace["cfg"], "--set", "scorer.order=4", "recommend",
        "--history", workspace["data"].item_ids[0],
    ])
    assert rc == 2
    rc = main([
        "-c", workspace["cfg"], "--set", "scorer.order=4", "--force", "recommend",
        "--history", workspace["data"].item_ids[0],
    ])
    assert rc == 0


def test_bench_outputs(workspace):
    art = workspace["root"] / "artifacts"
    assert run(workspace, "bench") == 0
    sweep = (art / "sweep.csv").read_text().splitlines()
    assert sweep[0].startswith("gamma,")
    assert len(sweep) == 1 + 5 + 4 + 4  # gamma grid + draft sizes + beam widths
    latency = (art / "latency.csv").read_text().splitlines()
    assert latency[0] == "method,subset_size,median_s,p95_s"
    methods = {line.split(",")[0] for line in latency[1:]}
    assert methods == {"subset_rank", "constrained_beam_rank", "batch_scoring"}
