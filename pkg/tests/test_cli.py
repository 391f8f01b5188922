"""Command-line harness: artifact determinism, exit codes, report wiring."""

import hashlib
import json
import math
import os
from types import SimpleNamespace

import numpy as np
import pytest

import hintloc
from hintloc import reports
from hintloc.cli import (EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_OK,
                         main)
from hintloc.coarse import build_index, load_coarse_checkpoint, retrieve_topk
from hintloc.data import load_dataset
from hintloc.fine import load_fine_checkpoint, localization_recall, localize

SMALL = {
    "extent": 60.0,
    "density": 8.0,
    "train_queries": 32,
    "eval_queries": 16,
    "coarse_batch_size": 8,
    "coarse_epochs": 2,
    "coarse_embed_dim": 16,
    "fine_batch_size": 8,
    "fine_epochs": 2,
    "fine_embed_dim": 16,
    "ccat_count": 1,
}

SEED = 3


def write_config(path, **overrides):
    cfg = dict(SMALL)
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return str(path)


def run(cmd, config, out, seed=SEED):
    return main([cmd, "--config", str(config), "--seed", str(seed),
                 "--out", str(out)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = write_config(root / "run.json")
    out = root / "run"
    for cmd in ("gen-data", "train-coarse", "train-fine", "eval", "perturb-eval"):
        assert run(cmd, config, out) == EXIT_OK, cmd
    return SimpleNamespace(root=root, config=config, out=out)


def sha256(path) -> str:
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestGenData:
    def test_counts_match_grid_formula(self, pipeline):
        ds = load_dataset(str(pipeline.out / "dataset.bin"))
        per_axis = math.floor((SMALL["extent"] - 30.0) / 10.0) + 1
        assert len(ds.submaps) == per_axis ** 2
        assert len(ds.train_queries) == SMALL["train_queries"]
        assert len(ds.eval_queries) == SMALL["eval_queries"]

    def test_deterministic_dataset_checksum(self, pipeline, tmp_path):
        assert run("gen-data", pipeline.config, tmp_path / "again") == EXIT_OK
        assert sha256(tmp_path / "again" / "dataset.bin") == \
            sha256(pipeline.out / "dataset.bin")

    def test_missing_extent_is_config_error(self, tmp_path):
        cfg = dict(SMALL)
        del cfg["extent"]
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg))
        assert run("gen-data", p, tmp_path / "o") == EXIT_CONFIG

    def test_unknown_key_rejected(self, tmp_path):
        assert run("gen-data", write_config(tmp_path / "c.json", typo_key=1),
                   tmp_path / "o") == EXIT_CONFIG

    def test_malformed_json_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        assert run("gen-data", p, tmp_path / "o") == EXIT_CONFIG

    def test_resolved_config_written(self, pipeline):
        resolved = json.loads((pipeline.out / "gen-data.config.json").read_text())
        assert resolved["extent"] == SMALL["extent"]
        assert resolved["tau"] == 0.1  # defaulted keys appear too
        assert resolved["fine_epochs"] == SMALL["fine_epochs"]

    def test_manifest_hashes_and_version(self, pipeline):
        man = json.loads((pipeline.out / "gen-data.manifest.json").read_text())
        assert man["package_version"] == hintloc.__version__
        assert man["seed"] == SEED
        assert man["outputs"]["dataset.bin"] == sha256(pipeline.out / "dataset.bin")


class TestTraining:
    def test_loss_files_stream_per_epoch(self, pipeline):
        coarse = (pipeline.out / "coarse_loss.txt").read_text().splitlines()
        fine = (pipeline.out / "fine_loss.txt").read_text().splitlines()
        assert len(coarse) == SMALL["coarse_epochs"]
        assert len(fine) == SMALL["fine_epochs"]
        assert coarse[0].startswith("coarse epoch   0  loss ")

    def test_missing_dataset_is_data_error(self, tmp_path):
        assert run("train-coarse", write_config(tmp_path / "c.json"),
                   tmp_path / "empty") == EXIT_DATA

    def test_corrupt_dataset_is_data_error(self, pipeline, tmp_path):
        out = tmp_path / "o"
        out.mkdir()
        blob = (pipeline.out / "dataset.bin").read_bytes()
        (out / "dataset.bin").write_bytes(blob[:200])
        assert run("train-coarse", pipeline.config, out) == EXIT_DATA

    def test_resume_matches_uninterrupted_run(self, pipeline, tmp_path):
        # split a 2-epoch run into 1 epoch + resumed 1 epoch; artifacts must
        # come out byte-identical to the pipeline's straight 2-epoch run
        out = tmp_path / "split"
        assert run("gen-data", pipeline.config, out) == EXIT_OK
        one = write_config(tmp_path / "one.json", coarse_epochs=1)
        assert run("train-coarse", one, out) == EXIT_OK
        both = write_config(tmp_path / "both.json", coarse_epochs=2, resume=True)
        assert run("train-coarse", both, out) == EXIT_OK
        assert sha256(out / "coarse.ckpt") == sha256(pipeline.out / "coarse.ckpt")
        assert (out / "coarse_loss.txt").read_text() == \
            (pipeline.out / "coarse_loss.txt").read_text()

    def test_resume_without_checkpoint_fails(self, pipeline, tmp_path):
        out = tmp_path / "o"
        assert run("gen-data", pipeline.config, out) == EXIT_OK
        cfg = write_config(tmp_path / "c.json", resume=True)
        assert run("train-coarse", cfg, out) == EXIT_CHECKPOINT

    def test_ablation_flag_removes_module(self, pipeline, tmp_path):
        # no_htm must drop exactly the two hint transformer blocks
        out = tmp_path / "abl"
        out.mkdir()
        (out / "dataset.bin").write_bytes((pipeline.out / "dataset.bin").read_bytes())
        cfg = write_config(tmp_path / "c.json", coarse_epochs=1, no_htm=True)
        assert run("train-coarse", cfg, out) == EXIT_OK
        base, _, _ = load_coarse_checkpoint(str(pipeline.out / "coarse.ckpt"))
        ablated, _, _ = load_coarse_checkpoint(str(out / "coarse.ckpt"))
        base_names = {n for n, _ in base.model.named_tensors()}
        abl_names = {n for n, _ in ablated.model.named_tensors()}
        dropped = base_names - abl_names
        assert abl_names < base_names
        assert dropped == {n for n in base_names
                           if n.startswith(("text.intra.", "text.inter."))}


class TestEval:
    def test_repeat_eval_is_byte_identical(self, pipeline):
        names = ("eval_report.json", "eval_report.txt", "descriptor_scatter.json",
                 "eval.manifest.json")
        before = {n: (pipeline.out / n).read_bytes() for n in names}
        assert run("eval", pipeline.config, pipeline.out) == EXIT_OK
        for n in names:
            assert (pipeline.out / n).read_bytes() == before[n], n

    def test_report_structure(self, pipeline):
        rep = json.loads((pipeline.out / "eval_report.json").read_text())
        assert set(rep["retrieval_recall"]) == {"1", "3", "5"}
        assert set(rep["localization_recall"]) == {"1", "5", "10"}
        for row in rep["localization_recall"].values():
            assert set(row) == {"5.0", "10.0", "15.0"}
        assert rep["query_count"] == SMALL["eval_queries"]
        ga = rep["gt_anchored"]
        assert ga["center_mean_error"] > 0.0

    def test_top_k_limits_grid_rows(self, pipeline, tmp_path):
        cfg = write_config(tmp_path / "c.json", top_k_candidates=5)
        assert run("eval", cfg, pipeline.out) == EXIT_OK
        rep = json.loads((pipeline.out / "eval_report.json").read_text())
        assert set(rep["localization_recall"]) == {"1", "5"}
        # restore the default-config artifacts for later tests
        assert run("eval", pipeline.config, pipeline.out) == EXIT_OK

    def test_grid_matches_module_output(self, pipeline):
        # the report's grid must equal a direct recomputation from checkpoints
        ds = load_dataset(str(pipeline.out / "dataset.bin"))
        coarse, _, _ = load_coarse_checkpoint(str(pipeline.out / "coarse.ckpt"))
        fine, _, _ = load_fine_checkpoint(str(pipeline.out / "fine.ckpt"))
        index = build_index(coarse.model, ds.scene, ds.submaps)
        by_id = {sm.id: sm for sm in ds.submaps}
        results = []
        for q in ds.eval_queries:
            desc = coarse.model.text.encode(q.hints).data
            ranked = retrieve_topk(desc, index, 10)
            results.append(localize(fine.model, q, ds.scene,
                                    [by_id[i] for i in ranked.ids]))
        grid = localization_recall(results, ks=(1, 5, 10), eps=(5.0, 10.0, 15.0))
        rep = json.loads((pipeline.out / "eval_report.json").read_text())
        for k, row in grid.items():
            for e, v in row.items():
                assert rep["localization_recall"][str(k)][str(e)] == v

    def test_scatter_covers_queries_and_submaps(self, pipeline):
        ds = load_dataset(str(pipeline.out / "dataset.bin"))
        scatter = json.loads((pipeline.out / "descriptor_scatter.json").read_text())
        kinds = [p["kind"] for p in scatter["points"]]
        assert kinds.count("text") == len(ds.eval_queries)
        assert kinds.count("submap") == len(ds.submaps)
        assert len(scatter["explained_fraction"]) == 2
        assert all(np.isfinite([p["x"], p["y"]]).all() for p in scatter["points"])

    def test_text_report_readable(self, pipeline):
        text = (pipeline.out / "eval_report.txt").read_text()
        assert "retrieval recall" in text
        assert "localization recall" in text
        assert "center baseline" in text

    def test_coarse_only_eval_allowed(self, pipeline, tmp_path):
        out = tmp_path / "coarseonly"
        out.mkdir()
        for name in ("dataset.bin", "coarse.ckpt"):
            (out / name).write_bytes((pipeline.out / name).read_bytes())
        assert run("eval", pipeline.config, out) == EXIT_OK
        rep = json.loads((out / "eval_report.json").read_text())
        assert "retrieval_recall" in rep
        assert "localization_recall" not in rep

    def test_missing_coarse_checkpoint_fails(self, pipeline, tmp_path):
        out = tmp_path / "nockpt"
        out.mkdir()
        (out / "dataset.bin").write_bytes((pipeline.out / "dataset.bin").read_bytes())
        assert run("eval", pipeline.config, out) == EXIT_CHECKPOINT

    def test_corrupt_checkpoint_fails(self, pipeline, tmp_path):
        out = tmp_path / "badckpt"
        out.mkdir()
        (out / "dataset.bin").write_bytes((pipeline.out / "dataset.bin").read_bytes())
        (out / "coarse.ckpt").write_bytes(
            (pipeline.out / "coarse.ckpt").read_bytes()[:100])
        assert run("eval", pipeline.config, out) == EXIT_CHECKPOINT


class TestPerturbEval:
    def test_replacement_count_in_report(self, pipeline):
        rep = json.loads((pipeline.out / "perturb_report.json").read_text())
        assert rep["replaced_per_query"] == 1

    def test_deltas_are_differences(self, pipeline):
        rep = json.loads((pipeline.out / "perturb_report.json").read_text())
        for k, row in rep["delta"]["retrieval_recall"].items():
            assert row["delta"] == pytest.approx(row["perturbed"] - row["base"])
            assert row["base"] == rep["base"]["retrieval_recall"][k]

    def test_zero_replacement_reproduces_eval(self, pipeline, tmp_path):
        cfg = write_config(tmp_path / "c.json", perturb_replace=0)
        assert run("perturb-eval", cfg, pipeline.out) == EXIT_OK
        rep = json.loads((pipeline.out / "perturb_report.json").read_text())
        assert rep["base"] == rep["perturbed"]
        eval_rep = json.loads((pipeline.out / "eval_report.json").read_text())
        assert rep["base"] == eval_rep
        # restore the default perturbation artifacts
        assert run("perturb-eval", pipeline.config, pipeline.out) == EXIT_OK

    def test_perturbed_queries_differ_by_one_hint(self, pipeline):
        from hintloc.data import perturb_queries
        ds = load_dataset(str(pipeline.out / "dataset.bin"))
        perturbed = perturb_queries(ds.eval_queries, ds.scene, ds.vocab, SEED, 1)
        for q, p in zip(ds.eval_queries, perturbed):
            changed = sum(a != b for a, b in zip(q.hint_texts, p.hint_texts))
            assert changed == 1
            assert np.array_equal(q.target, p.target)


class _OracleCoarse:
    """Descriptors that make retrieval perfect: every query maps to the
    one-hot row of its gt submap."""

    def __init__(self, dataset):
        n = len(dataset.submaps)
        self._gt = {self._key(q.hints): q.gt_submap_id
                    for q in dataset.eval_queries}
        self.text = SimpleNamespace(encode=lambda hints: SimpleNamespace(
            data=np.eye(n)[self._gt[self._key(hints)]]))
        self.submap = SimpleNamespace(encode_batch=lambda scene, submaps:
                                      SimpleNamespace(data=np.eye(n)))

    @staticmethod
    def _key(hints):
        return tuple(tuple(h) for h in hints)


class _OracleFine:
    def forward_batch(self, queries, scene, submaps):
        return SimpleNamespace(
            data=np.array([q.target for q in queries], dtype=np.float64))


class TestMetricsOracle:
    def test_perfect_models_give_all_ones_tables(self, pipeline):
        ds = load_dataset(str(pipeline.out / "dataset.bin"))
        metrics = reports.compute_metrics(ds, _OracleCoarse(ds), _OracleFine())
        assert all(v == 1.0 for v in metrics["retrieval_recall"].values())
        for row in metrics["localization_recall"].values():
            assert all(v == 1.0 for v in row.values())
        assert metrics["gt_anchored"]["fine_mean_error"] == 0.0
        text = reports.render_metrics(metrics, "oracle")
        assert "0.0000" not in text.split("gt-anchored")[0]
