"""Tests for the benchmark harness: config parsing, reference generation,
batches, surfaces, manifold export, reports, and the CLI."""

import numpy as np
import pytest
from dataclasses import replace

from waveinv.bench import (
    BenchResult,
    ConfigError,
    ExperimentConfig,
    config_checksum,
    draw_starts,
    gen_refs,
    load_config,
    manifold_export,
    mean_reference,
    optimize_batch,
    read_refs,
    report,
    run_single,
    surface_scan,
    write_batch,
    write_manifold,
    write_refs,
    write_surface,
)
from waveinv.bench import _count_interior_minima
from waveinv.cli import main as cli_main
from waveinv.forward import MaterialParams
from waveinv.stats import BUILTIN_PRIORS


def small_cfg(**overrides):
    base = dict(material="PEEK", n_refs=3, seed=11, eval_budget=50, lhs_restarts=10)
    base.update(overrides)
    return load_config(None, base)


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.material == "PEEK"
        assert cfg.cutoff == 1e-6
        assert cfg.eval_budget == 200

    def test_file_parsing(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(
            "# benchmark config\n"
            "material = PA6\n"
            "objective = envelope\n"
            "n_refs = 5   # small batch\n"
            "seed = 99\n"
            "cutoff = 1e-4\n"
        )
        cfg = load_config(path)
        assert cfg.material == "PA6"
        assert cfg.objective == "envelope"
        assert cfg.n_refs == 5
        assert cfg.seed == 99
        assert cfg.cutoff == 1e-4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("materia = PEEK\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("n_refs = lots\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_material_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(material="PVC")

    def test_checksum_tracks_content(self):
        a = small_cfg()
        b = small_cfg(seed=12)
        assert config_checksum(a) != config_checksum(b)
        assert config_checksum(a) == config_checksum(small_cfg())

    def test_seed_override(self):
        cfg = load_config(None, {"seed": 1234})
        assert cfg.seed == 1234


class TestGenRefs:
    def test_deterministic(self, tmp_path):
        cfg = small_cfg()
        a = gen_refs(cfg)
        b = gen_refs(cfg)
        assert len(a) == 3
        for ra, rb in zip(a, b):
            assert ra.truth == rb.truth
            assert np.array_equal(ra.signal.samples, rb.signal.samples)

    def test_truths_physical(self):
        for mat in ("PEEK", "PA6", "PP"):
            refs = gen_refs(small_cfg(material=mat, n_refs=8))
            for ref in refs:
                assert ref.truth.E > 0.0
                assert 0.0 < ref.truth.nu < 0.5

    def test_round_trip_through_files(self, tmp_path):
        cfg = small_cfg()
        refs = gen_refs(cfg)
        write_refs(refs, cfg, tmp_path)
        back = read_refs(tmp_path)
        assert len(back) == len(refs)
        for ra, rb in zip(refs, back):
            assert rb.truth.E == ra.truth.E
            assert rb.truth.nu == ra.truth.nu
            np.testing.assert_array_equal(rb.signal.samples, ra.signal.samples)

    def test_impossible_window_yields_no_refs(self):
        # 256 samples at the default rate: every packet is truncated
        cfg = small_cfg(n=256)
        assert gen_refs(cfg) == []

    def test_missing_refs_dir_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            read_refs(tmp_path)


class TestStarts:
    def test_within_one_sigma(self):
        cfg = small_cfg(n_refs=40)
        starts = draw_starts(cfg, 40)
        prior = BUILTIN_PRIORS["PEEK"]
        (e_mean, nu_mean), (e_std, nu_std) = prior.mean_params_si(), prior.std_params_si()
        assert np.all(np.abs(starts[:, 0] - e_mean) <= 1.001 * e_std)
        assert np.all(np.abs(starts[:, 1] - nu_mean) <= 1.001 * nu_std)

    def test_optimizer_independent(self):
        a = draw_starts(small_cfg(optimizer="modified-lm"), 5)
        b = draw_starts(small_cfg(optimizer="bfgs"), 5)
        np.testing.assert_array_equal(a, b)


class TestOptimizeBatch:
    def test_truth_start_succeeds_at_first_eval(self):
        cfg = small_cfg(n_refs=1)
        refs = gen_refs(cfg)
        trace, counter = run_single(cfg, refs[0], refs[0].truth.as_vector())
        assert trace.status == "converged"
        assert trace.eval_count == 1
        assert counter.count == 1

    def test_budget_one_distant_start_fails(self):
        cfg = small_cfg(eval_budget=1)
        refs = gen_refs(cfg)
        result = optimize_batch(cfg, refs)
        assert result.success_rate == 0.0

    def test_modified_lm_batch_succeeds(self):
        cfg = small_cfg(n_refs=4)
        result = optimize_batch(cfg, gen_refs(cfg))
        assert result.success_rate == 1.0
        for run in result.runs:
            assert run.evals_to_success <= 50

    def test_trace_eval_count_matches_model_counter(self):
        cfg = small_cfg(n_refs=1)
        refs = gen_refs(cfg)
        starts = draw_starts(cfg, 1)
        trace, counter = run_single(cfg, refs[0], starts[0])
        assert trace.eval_count == counter.count

    def test_histogram_conservation(self):
        cfg = small_cfg(n_refs=5)
        result = optimize_batch(cfg, gen_refs(cfg))
        assert sum(result.histogram().values()) == sum(r.success for r in result.runs)
        assert sum(r.success for r in result.runs) + sum(not r.success for r in result.runs) == len(result.runs)

    def test_success_monotone_in_cutoff(self):
        cfg = small_cfg(n_refs=4, eval_budget=12)
        refs = gen_refs(cfg)
        tight = optimize_batch(cfg, refs)
        loose = optimize_batch(replace(cfg, cutoff=1e-4), refs)
        for t_run, l_run in zip(tight.runs, loose.runs):
            assert l_run.success >= t_run.success

    def test_error_curves_shape(self):
        cfg = small_cfg(n_refs=3)
        result = optimize_batch(cfg, gen_refs(cfg))
        rows = result.error_curves()
        assert rows, "expected at least one curve row"
        evals = [row[0] for row in rows]
        assert evals == list(range(1, len(rows) + 1))
        for _, logmean, lo, hi in rows:
            assert lo <= logmean <= hi

    def test_bfgs_and_lm_see_identical_starts(self):
        cfg = small_cfg(n_refs=2, eval_budget=30)
        refs = gen_refs(cfg)
        lm = optimize_batch(cfg, refs)
        bf = optimize_batch(replace(cfg, optimizer="bfgs"), refs)
        for lm_run, bf_run in zip(lm.runs, bf.runs):
            np.testing.assert_array_equal(lm_run.x0, bf_run.x0)

    def test_gauss_newton_near_linear_surrogate(self):
        # single-packet response, log-modulus parametrization: the phase
        # features are near-linear around the truth, so Gauss-Newton
        # converges with a three-record trace from a 1% start
        from waveinv.forward import ForwardConfig, forward_response, phase_objective_terms
        from waveinv.optim import OptimizeOptions, optimize
        from waveinv.signals import PhaseObjectiveConfig, transform_pipeline

        fwd = ForwardConfig(amplitudes=(1.0, 0.0, 0.0))
        obj = PhaseObjectiveConfig(bandwidth_hz=fwd.b)
        truth_e, rho = 3.9559e9, 1400.3
        ref = transform_pipeline(
            forward_response(MaterialParams(truth_e, 0.4, rho), fwd).signal, obj
        )

        def evaluate(x, need_jacobian):
            e = float(np.exp(x[0]))
            r, jac = run_terms(e)
            return r, jac[:, [0]] * e  # d(feature)/d(log E)

        def run_terms(e):
            return phase_objective_terms(MaterialParams(e, 0.4, rho), fwd, obj, ref)

        trace = optimize(
            evaluate, np.array([np.log(0.99 * truth_e)]), OptimizeOptions(method="gauss-newton")
        )
        assert trace.status == "converged"
        assert len(trace.records) <= 3
        assert abs(np.exp(trace.final_x[0]) - truth_e) / truth_e < 1e-8

    @pytest.mark.parametrize("objective", ["signal", "envelope"])
    def test_other_objectives_run(self, objective):
        # near-truth starts keep the non-convex objectives in their basin
        cfg = small_cfg(n_refs=1, objective=objective, optimizer="gauss-newton")
        refs = gen_refs(cfg)
        x0 = refs[0].truth.as_vector() * np.array([1.0005, 1.0002])
        trace, _ = run_single(cfg, refs[0], x0)
        assert trace.records[-1].rel1 < trace.records[0].rel1


class TestSurface:
    def test_truth_node_objective_zero(self):
        cfg = small_cfg(grid_n=9)
        result = surface_scan(cfg, mean_reference(cfg))
        center = result.objective[4, 4]
        assert center <= 1e-20

    def test_minima_counter_on_synthetic_grid(self):
        grid = np.ones((5, 5))
        grid[1, 1] = -1.0
        grid[3, 3] = -2.0  # non-adjacent second strict minimum
        assert _count_interior_minima(grid) == 2
        grid[0, 4] = -5.0  # boundary nodes never count themselves
        assert _count_interior_minima(grid) == 2

    def test_nan_nodes_excluded(self):
        grid = np.ones((5, 5))
        grid[2, 2] = 0.0
        grid[1, 1] = np.nan
        assert _count_interior_minima(grid) == 0  # neighbor NaN disqualifies

    def test_csv_output(self, tmp_path):
        cfg = small_cfg(grid_n=5)
        result = surface_scan(cfg, mean_reference(cfg))
        path = tmp_path / "surface.csv"
        write_surface(result, cfg, path)
        lines = path.read_text().splitlines()
        comments = [l for l in lines if l.startswith("#")]
        assert any("interior_local_minima=" in c for c in comments)
        header_idx = next(i for i, l in enumerate(lines) if not l.startswith("#"))
        assert lines[header_idx] == "E,nu,J"
        assert len(lines) == header_idx + 1 + 25


class TestManifold:
    def test_affine_plane_reconstructs_exactly(self):
        # synthetic outputs on a 2-plane: PCA with 3 directions loses nothing
        rng = np.random.default_rng(0)
        basis = rng.standard_normal((2, 50))
        coeffs = rng.standard_normal((30, 2))
        data = coeffs @ basis + rng.standard_normal(50) * 0.0 + 3.0
        centered = data - data.mean(axis=0)
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        projected = centered @ vt[:3].T
        recon = projected @ vt[:3]
        assert np.max(np.abs(recon - centered)) <= 1e-10

    def test_explained_variance_non_increasing(self):
        cfg = small_cfg(manifold_grid_n=4, objective="envelope")
        _, _, explained, rank = manifold_export(cfg)
        assert np.all(np.diff(explained) <= 1e-15)
        assert rank >= len(explained)

    def test_export_shape_and_labels(self, tmp_path):
        cfg = small_cfg(manifold_grid_n=3)
        params, projected, explained, _ = manifold_export(cfg)
        assert params.shape[0] == 9
        assert projected.shape == (9, min(3, projected.shape[1]))
        path = tmp_path / "manifold.csv"
        write_manifold(params, projected, explained, cfg, path)
        lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
        assert lines[0].startswith("E,nu,line_E,line_nu,pc1")
        assert len(lines) == 10


class TestReport:
    def test_report_aggregates_runs(self, tmp_path):
        cfg = small_cfg(n_refs=3)
        refs = gen_refs(cfg)
        write_refs(refs, cfg, tmp_path)
        lm = optimize_batch(cfg, refs)
        write_batch(lm, tmp_path)
        bf = optimize_batch(replace(cfg, optimizer="bfgs"), refs)
        write_batch(bf, tmp_path)
        summary = report(tmp_path, cfg)
        assert summary["modified-lm.n_runs"] == 3
        assert summary["bfgs.n_runs"] == 3
        hist = (tmp_path / "report" / "histogram.csv").read_text().splitlines()
        header = next(l for l in hist if l.startswith("evals"))
        assert header == "evals,count_bfgs,count_modified-lm"
        # conservation: histogram column sums equal success counts
        rows = [l.split(",") for l in hist if l and not l.startswith(("#", "evals"))]
        col_sums = [sum(int(r[i]) for r in rows) for i in (1, 2)]
        assert col_sums[1] == sum(r.success for r in lm.runs)
        assert col_sums[0] == sum(r.success for r in bf.runs)

    def test_empty_success_set(self, tmp_path):
        cfg = small_cfg(n_refs=2, eval_budget=1)
        refs = gen_refs(cfg)
        write_refs(refs, cfg, tmp_path)
        result = optimize_batch(cfg, refs)
        write_batch(result, tmp_path)
        summary = report(tmp_path, cfg)
        assert summary["modified-lm.success_rate"] == 0.0
        hist = (tmp_path / "report" / "histogram.csv").read_text().splitlines()
        data_rows = [l for l in hist if l and not l.startswith(("#", "evals"))]
        assert data_rows == []

    def test_report_without_runs_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            report(tmp_path, small_cfg())


class TestCli:
    def run_cli(self, *argv):
        return cli_main(list(argv))

    def test_full_pipeline(self, tmp_path, capsys):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("n_refs = 2\nseed = 3\nlhs_restarts = 5\neval_budget = 40\n")
        out = tmp_path / "out"
        assert self.run_cli("--config", str(cfg_file), "--out", str(out), "gen-refs") == 0
        assert (out / "refs" / "index.csv").exists()
        assert self.run_cli("--config", str(cfg_file), "--out", str(out), "optimize") == 0
        assert (out / "runs" / "modified-lm" / "runs_index.csv").exists()
        assert self.run_cli("--config", str(cfg_file), "--out", str(out), "report") == 0
        assert (out / "report" / "summary.txt").exists()
        assert "success_rate" in (out / "report" / "summary.txt").read_text()

    def test_surface_and_manifold_commands(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("grid_n = 5\nmanifold_grid_n = 3\nseed = 4\n")
        out = tmp_path / "out"
        assert self.run_cli("--config", str(cfg_file), "--out", str(out), "surface") == 0
        assert (out / "surface" / "surface_autocorr-phase.csv").exists()
        assert self.run_cli("--config", str(cfg_file), "--out", str(out), "manifold") == 0
        assert (out / "manifold" / "manifold_autocorr-phase.csv").exists()

    def test_bad_config_exits_2(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("material = UNOBTAINIUM\n")
        assert self.run_cli("--config", str(cfg_file), "gen-refs") == 2

    def test_missing_refs_exits_2(self, tmp_path):
        assert self.run_cli("--out", str(tmp_path / "empty"), "optimize") == 2

    def test_all_truncated_batch_exits_3(self, tmp_path):
        cfg_file = tmp_path / "trunc.cfg"
        cfg_file.write_text("n = 256\nn_refs = 2\n")  # window too short for any packet
        assert self.run_cli("--config", str(cfg_file), "--out", str(tmp_path / "o"), "gen-refs") == 3

    def test_seed_flag_changes_outputs(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("n_refs = 1\nlhs_restarts = 5\n")
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        self.run_cli("--config", str(cfg_file), "--out", str(out_a), "--seed", "1", "gen-refs")
        self.run_cli("--config", str(cfg_file), "--out", str(out_b), "--seed", "2", "gen-refs")
        a = (out_a / "refs" / "ref_000.csv").read_text()
        b = (out_b / "refs" / "ref_000.csv").read_text()
        assert a != b

    def test_pipeline_byte_identical_across_runs(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text("n_refs = 2\nseed = 5\nlhs_restarts = 5\neval_budget = 30\n")
        outputs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            self.run_cli("--config", str(cfg_file), "--out", str(out), "gen-refs")
            self.run_cli("--config", str(cfg_file), "--out", str(out), "optimize")
            self.run_cli("--config", str(cfg_file), "--out", str(out), "report")
            blob = {}
            for path in sorted(out.rglob("*")):
                if path.is_file():
                    blob[str(path.relative_to(out))] = path.read_bytes()
            outputs.append(blob)
        assert outputs[0].keys() == outputs[1].keys()
        for key in outputs[0]:
            assert outputs[0][key] == outputs[1][key], f"{key} differs between runs"
