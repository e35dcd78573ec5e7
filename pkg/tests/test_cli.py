import contextlib
import io
import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd

from bitslice import read_bitsliced
from checkpoint import load_checkpoint
from cli import bench_kernels, bench_models, main
from database import get_runs, get_sensitivity
from network import arch_to_text, quarter_cifar_arch, reconstruct_arch, svhn_arch
from rebuild import shrink_arch

TINY_RUN = """
[data]
samples = 64
test_samples = 32
width = 4
height = 4
classes = 2

[training]
epochs = 1
batch_size = 16

[sensitivity]
trials = 2
"""


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.db = os.path.join(self.tmpdir, "results.db")

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def path(self, name):
        return os.path.join(self.tmpdir, name)

    def write_config(self, text, name="run.ini"):
        with open(self.path(name), "w") as handle:
            handle.write(text)
        return self.path(name)

    def run_cli(self, *argv):
        """Return (exit code, stdout, stderr)."""
        stdout, stderr = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
            code = main(list(argv) + ["--db", self.db])
        return code, stdout.getvalue(), stderr.getvalue()


class TestCostCommand(CliTestCase):
    def test_baseline(self):
        config = self.write_config("[network]\narch = baseline\n")
        code, out, _ = self.run_cli("cost", "--config", config)
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "size_mb=1.75 gops=1.23")

    def test_architecture_document(self):
        arch_file = self.path("svhn.ini")
        with open(arch_file, "w") as handle:
            handle.write(arch_to_text(svhn_arch()))
        code, out, _ = self.run_cli("cost", arch_file)
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "size_mb=0.44 gops=0.31")

    def test_sweep_to_excel(self):
        config = self.write_config("[network]\narch = baseline\n")
        out_path = self.path("sweep.xlsx")
        code, out, _ = self.run_cli("cost", "--config", config, "--sweep", "--out", out_path)
        self.assertEqual(code, 0)
        table = pd.read_excel(out_path, sheet_name="Report", engine="openpyxl")
        self.assertEqual(len(table), 7)
        self.assertIn("printed_size_ratio", out)

    def test_sweep_needs_raw_input_baseline(self):
        code, _, err = self.run_cli("cost", "--sweep")
        self.assertEqual(code, 1)
        self.assertIn("kind=ConfigError", err)


class TestErrors(CliTestCase):
    def test_unknown_command(self):
        code, _, err = self.run_cli("compress")
        self.assertEqual(code, 1)
        self.assertTrue(err.strip().splitlines()[-1].startswith("error code=1 kind=ConfigError"))

    def test_missing_checkpoint(self):
        code, _, err = self.run_cli("eval", self.path("absent.cbnn"))
        self.assertEqual(code, 2)
        self.assertIn("kind=CheckpointError", err)

    def test_malformed_config(self):
        config = self.write_config("[training]\nepochs = lots\n")
        code, _, err = self.run_cli("cost", "--config", config)
        self.assertEqual(code, 1)
        self.assertIn("kind=ConfigError", err)

    def test_bad_thread_count(self):
        code, _, _ = self.run_cli("cost", "--threads", "0")
        self.assertEqual(code, 1)

    def test_negative_seed(self):
        config = self.write_config(TINY_RUN)
        code, _, err = self.run_cli("train", "--config", config, "--seed", "-1", "--out", self.path("m.cbnn"))
        self.assertEqual(code, 1)
        lines = err.strip().splitlines()
        self.assertEqual(len(lines), 1)
        self.assertTrue(lines[0].startswith("error code=1 kind=ConfigError"))
        self.assertNotIn("Traceback", err)

        config = self.write_config(TINY_RUN.replace("[training]\n", "[training]\nseed = -3\n"), "neg.ini")
        code, _, err = self.run_cli("train", "--config", config)
        self.assertEqual(code, 1)
        self.assertIn("kind=ConfigError", err)
        self.assertFalse(os.path.exists(self.path("m.cbnn")))

    def test_empty_test_split_rejected_before_training(self):
        config = self.write_config(TINY_RUN.replace("test_samples = 32", "test_samples = 0"))
        code, _, err = self.run_cli("train", "--config", config, "--out", self.path("m.cbnn"))
        self.assertEqual(code, 1)
        self.assertIn("test_samples", err)
        self.assertFalse(os.path.exists(self.path("m.cbnn")))

    def test_missing_input_file(self):
        code, _, _ = self.run_cli("convert", self.path("absent.bin"))
        self.assertEqual(code, 2)


class TestConvertCommand(CliTestCase):
    def test_cifar_batch(self):
        rng = np.random.default_rng(0)
        records = np.concatenate([rng.integers(0, 10, (2, 1)), rng.integers(0, 256, (2, 3072))], axis=1)
        source = self.path("batch.bin")
        records.astype(np.uint8).tofile(source)
        out_path = self.path("batch.bits")
        code, out, _ = self.run_cli("convert", source, "--cifar", "--out", out_path)
        self.assertEqual(code, 0)
        self.assertIn("images=2 channels=24", out)
        sliced = read_bitsliced(out_path)
        self.assertEqual(sliced.bits.shape, (2, 32, 32, 24))


class TestPipeline(CliTestCase):
    def test_train_sensitivity_rebuild(self):
        config = self.write_config(TINY_RUN + "\n[rebuild]\nprunable = 1,2,3,4,5\n")
        model_path = self.path("model.cbnn")
        code, out, _ = self.run_cli("train", "--config", config, "--out", model_path)
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("err="))
        self.assertTrue(os.path.exists(self.path("model_history.csv")))
        self.assertEqual(load_checkpoint(model_path).metadata["epochs"], 1)

        code, out, _ = self.run_cli("eval", model_path, "--config", config)
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("err="))

        report_path = self.path("sensitivity.csv")
        code, out, _ = self.run_cli("sensitivity", model_path, "--config", config, "--out", report_path)
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("turning_point="))
        self.assertTrue(os.path.exists(self.path("sensitivity_plot.csv")))

        compact_path = self.path("compact.cbnn")
        code, out, _ = self.run_cli("rebuild", model_path, "--config", config, "--out", compact_path)
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("pruned=1;2;3;4;5"))
        compact = load_checkpoint(compact_path)
        self.assertEqual(compact.metadata["pruned"], (1, 2, 3, 4, 5))
        self.assertEqual(compact.arch.input_shape, (4, 4, 9))

        code, _, _ = self.run_cli("eval", compact_path, "--config", config)
        self.assertEqual(code, 0)

        runs = get_runs(self.db)
        self.assertEqual(list(runs["command"]), ["train", "eval", "sensitivity", "rebuild", "eval"])
        self.assertEqual(len(get_sensitivity(int(runs["id"].iloc[2]), self.db)), 9)

    def test_rebuild_a_compact_checkpoint(self):
        config = self.write_config(TINY_RUN + "\n[rebuild]\nprunable = 1,2,3,4,5\n")
        model_path, compact_path = self.path("model.cbnn"), self.path("compact.cbnn")
        self.assertEqual(self.run_cli("train", "--config", config, "--out", model_path)[0], 0)
        self.assertEqual(self.run_cli("rebuild", model_path, "--config", config, "--out", compact_path)[0], 0)

        # the sensitivity pass runs on the checkpoint's own pruned input
        auto = self.write_config(TINY_RUN, "auto.ini")
        again_path = self.path("again.cbnn")
        code, out, err = self.run_cli("rebuild", compact_path, "--config", auto, "--out", again_path)
        self.assertEqual(code, 0, err)
        again = load_checkpoint(again_path)
        pruned = again.metadata["pruned"]
        self.assertTrue(set(range(1, 6)) <= set(pruned))
        self.assertLess(len(pruned), 8)
        self.assertEqual(again.arch.input_shape, (4, 4, 3 * (8 - len(pruned))))
        self.assertTrue(out.startswith("pruned=1;2;3;4;5"))

    def test_threads_do_not_change_the_checkpoint(self):
        config = self.write_config(TINY_RUN)
        blobs = []
        for threads in ("1", "2"):
            out_path = self.path(f"model{threads}.cbnn")
            code, _, _ = self.run_cli("train", "--config", config, "--threads", threads, "--out", out_path)
            self.assertEqual(code, 0)
            with open(out_path, "rb") as handle:
                blobs.append(handle.read())
        self.assertEqual(blobs[0], blobs[1])

    def test_seed_override(self):
        config = self.write_config(TINY_RUN)
        code, _, _ = self.run_cli("train", "--config", config, "--seed", "7", "--out", self.path("m.cbnn"))
        self.assertEqual(code, 0)
        self.assertEqual(load_checkpoint(self.path("m.cbnn")).metadata["seed"], 7)


class TestBench(CliTestCase):
    def test_kernel_report(self):
        report = bench_kernels((16, 130, 8), repetitions=3, kernel="dense")
        self.assertEqual(report.dims, (16, 130, 8))
        self.assertGreater(report.packed_seconds, 0)
        self.assertGreater(report.speedup, 0)
        self.assertEqual(list(report.to_frame()["m"]), [16])

    def test_bench_command(self):
        config = self.write_config("[bench]\ndims = 32,64,16\nrepetitions = 2\nkernel = self\n")
        code, out, _ = self.run_cli("bench", "--config", config)
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith("kernel=self dims=32x64x16"))

    def test_model_bench(self):
        config = self.write_config(
            "[network]\narch = quarter\n[bench]\nmode = models\nbatch = 1\nrepetitions = 1\nwarmup = 0\n"
        )
        code, out, _ = self.run_cli("bench", "--config", config)
        self.assertEqual(code, 0)
        self.assertIn("gops_ratio=3.45", out)


@unittest.skipUnless(os.environ.get("CBNN_SLOW"), "set CBNN_SLOW=1 for timing runs")
class TestTimingRatios(unittest.TestCase):
    def test_self_comparison_is_even(self):
        report = bench_kernels((512, 512, 512), repetitions=10, kernel="self")
        self.assertLess(abs(report.speedup - 1.0), 0.1)

    def test_compact_inference_tracks_gops(self):
        base = quarter_cifar_arch()
        compact = shrink_arch(reconstruct_arch(base, 8), 8, 4)
        report = bench_models(base, compact, batch=32, repetitions=5, pruned=4)
        self.assertAlmostEqual(report.gops_ratio, 3.45, places=2)
        self.assertLess(abs(report.wall_ratio - report.gops_ratio) / report.gops_ratio, 0.3)

    @unittest.skipUnless(os.environ.get("CBNN_KERNEL_TARGET"), "reference-machine target, set CBNN_KERNEL_TARGET=1")
    def test_packed_kernel_speedup_at_2048(self):
        report = bench_kernels((2048, 2048, 2048), repetitions=3, kernel="dense")
        self.assertGreaterEqual(report.speedup, 4.0)


if __name__ == "__main__":
    unittest.main()
