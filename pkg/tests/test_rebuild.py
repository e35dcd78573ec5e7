import os
import unittest

import numpy as np

from data import synth_bit_task
from errors import RangeError, ShapeError
from network import (
    ArchitectureSpec,
    Model,
    baseline_cifar_arch,
    batchnorm,
    conv,
    cost_model,
    cost_table,
    dense,
    reconstruct_arch,
    sign_activation,
    synthetic_arch,
)
from rebuild import (
    REPORT_COLUMNS,
    CompressionReport,
    compression_sweep,
    rebuild_and_retrain,
    shrink_arch,
    sweep_frame,
)
from sensitivity import SensitivityConfig, analyze_stack
from training import TrainConfig, train

# reference ratios to one decimal for P = 1..5 slices pruned, against the raw-pixel baseline
REFERENCE_SIZE_RATIOS = (1.3, 1.7, 2.5, 3.9, 7.0)
REFERENCE_GOPS_RATIOS = (1.3, 1.7, 2.5, 3.8, 6.8)


class TestShrinkArch(unittest.TestCase):
    def setUp(self):
        self.recon = reconstruct_arch(baseline_cifar_arch(), 8)

    def test_half_depth(self):
        compact = shrink_arch(self.recon, 8, 4)
        self.assertEqual(compact.input_shape, (32, 32, 12))
        self.assertEqual([layer.out_channels for _, layer in compact.weighted_layers()],
                         [64, 64, 128, 128, 256, 256, 512, 512, 10])
        self.assertEqual(len(compact.layers), len(self.recon.layers))
        self.assertEqual(compact.layers[0].precision, "full")
        self.assertEqual(compact.classes, 10)

    def test_no_pruning_is_identity(self):
        self.assertIs(shrink_arch(self.recon, 8, 0), self.recon)

    def test_five_slices(self):
        compact = shrink_arch(self.recon, 8, 5)
        self.assertEqual(compact.layers[0].out_channels, 48)
        self.assertAlmostEqual(cost_model(compact).size_mb, 0.25, places=2)
        self.assertAlmostEqual(cost_model(compact).gops, 0.18, places=2)

    def test_interior_layers_scale_quadratically(self):
        base = cost_table(self.recon)
        compact = cost_table(shrink_arch(self.recon, 8, 4))
        interior = base["kind"].eq("conv") & base["layer"].ne(0)
        ratios = base.loc[interior, "weights"].to_numpy() / compact.loc[interior, "weights"].to_numpy()
        np.testing.assert_array_equal(ratios, 4.0)

    def test_strict_rounding(self):
        arch = ArchitectureSpec("odd", (4, 4, 24), (
            conv(24, 100, 3, "full"), batchnorm(100), sign_activation(), dense(1600, 2), batchnorm(2),
        ))
        with self.assertRaises(ShapeError):
            shrink_arch(arch, 8, 3)
        relaxed = shrink_arch(arch, 8, 3, strict=False)
        self.assertEqual(relaxed.layers[0].out_channels, 56)
        self.assertEqual(relaxed.layers[3].in_channels, 56 * 16)

    def test_pruning_every_slice(self):
        with self.assertRaises(RangeError):
            shrink_arch(self.recon, 8, 8)

    def test_shrinking_an_already_pruned_net(self):
        arch = synthetic_arch(4, 4, 3, 8, 2)
        first = shrink_arch(arch, 8, 5)
        further = shrink_arch(first, 8, 6, already_pruned=5)
        self.assertEqual(further, shrink_arch(arch, 8, 6))
        self.assertEqual(further.input_shape, (4, 4, 6))
        self.assertIs(shrink_arch(first, 8, 5, already_pruned=5), first)
        with self.assertRaises(RangeError):
            shrink_arch(first, 8, 4, already_pruned=5)
        with self.assertRaises(ShapeError):
            shrink_arch(first, 8, 6)

    def test_synthetic_net_near_quadratic_law(self):
        arch = synthetic_arch(8, 8, 3, 8, 4)
        ratio = cost_model(arch).size_bits / cost_model(shrink_arch(arch, 8, 5)).size_bits
        self.assertLess(abs(ratio - (8 / 3) ** 2) / (8 / 3) ** 2, 0.15)


class TestCompressionSweep(unittest.TestCase):
    def setUp(self):
        self.reports = compression_sweep(baseline_cifar_arch(), 8, 5)

    def test_matches_reference_ratios(self):
        for report, size, gops in zip(self.reports[1:], REFERENCE_SIZE_RATIOS, REFERENCE_GOPS_RATIOS):
            with self.subTest(pruned=report.pruned):
                self.assertLess(abs(report.printed_size_ratio - size), 0.1)
                self.assertLess(abs(report.gops_ratio - gops), 0.1)

    def test_half_depth_row(self):
        report = self.reports[4]
        self.assertEqual(report.compact_cost.size_bits, 3_617_792)
        self.assertAlmostEqual(report.size_ratio, 14_022_016 / 3_617_792)

    def test_frame(self):
        frame = sweep_frame(self.reports)
        self.assertEqual(list(frame.columns), REPORT_COLUMNS)
        self.assertEqual(len(frame), 7)
        self.assertEqual(list(frame["pruned"]), [0, 0, 1, 2, 3, 4, 5])
        self.assertAlmostEqual(frame["size_mb"].iloc[0], 1.75, places=2)
        self.assertAlmostEqual(frame["size_mb"].iloc[5], 0.45, places=2)

    def test_reconstruction_costs_a_little(self):
        self.assertLess(self.reports[0].size_ratio, 1.0)
        self.assertGreater(self.reports[0].size_ratio, 0.95)


class TestCompressionReport(unittest.TestCase):
    def test_ratios_and_delta(self):
        base = cost_model(baseline_cifar_arch())
        compact = cost_model(shrink_arch(reconstruct_arch(baseline_cifar_arch()), 8, 4))
        report = CompressionReport("base", "compact", base, compact, 4, 11.0, 11.5)
        self.assertEqual(report.size_ratio, base.size_bits / compact.size_bits)
        self.assertEqual(report.gops_ratio, base.macs / compact.macs)
        self.assertAlmostEqual(report.delta_err, 0.5)
        frame = report.to_frame()
        self.assertEqual(list(frame["arch"]), ["base", "compact"])
        self.assertEqual(frame["delta_err"].iloc[0], 0.0)

    def test_unknown_errors(self):
        cost = cost_model(baseline_cifar_arch())
        self.assertIsNone(CompressionReport("a", "b", cost, cost).delta_err)


class TestRebuildAndRetrain(unittest.TestCase):
    def setUp(self):
        data = synth_bit_task(96, 4, 4, 3, 8, (6, 7, 8), 2, seed=0)
        self.train_set = data.subset(np.arange(64))
        self.test_set = data.subset(np.arange(64, 96))
        self.arch = synthetic_arch(4, 4, 3, 8, 2)
        self.config = TrainConfig(epochs=1, batch_size=16, seed=3)

    def test_compact_model(self):
        model, report = rebuild_and_retrain(self.arch, [1, 2, 3, 4, 5], self.train_set, self.config, self.test_set)
        self.assertEqual(model.arch.input_shape, (4, 4, 9))
        self.assertEqual(model.metadata["pruned"], (1, 2, 3, 4, 5))
        self.assertEqual(model.metadata["epochs"], 1)
        self.assertEqual(report.pruned, 5)
        self.assertGreater(report.size_ratio, 5.0)
        self.assertTrue(0.0 <= report.compact_err <= 100.0)
        self.assertIsNone(report.base_err)

    def test_base_model_error_reported(self):
        state, _ = train(self.arch, self.config, self.train_set)
        base = Model(self.arch, state.params)
        _, report = rebuild_and_retrain(self.arch, [1, 2], self.train_set, self.config, self.test_set, base)
        self.assertIsNotNone(report.base_err)
        self.assertAlmostEqual(report.delta_err, report.compact_err - report.base_err)

    def test_empty_prunable_set_keeps_costs(self):
        model, report = rebuild_and_retrain(self.arch, [], self.train_set, self.config, self.test_set)
        self.assertEqual(model.arch, self.arch)
        self.assertEqual(report.size_ratio, 1.0)
        self.assertEqual(report.gops_ratio, 1.0)

    def test_rebuild_from_a_pruned_model(self):
        compact, _ = rebuild_and_retrain(self.arch, [1, 2, 3, 4, 5], self.train_set, self.config, self.test_set)
        model, report = rebuild_and_retrain(
            compact.arch, [6], self.train_set, self.config, self.test_set, base_model=compact,
        )
        self.assertEqual(model.metadata["pruned"], (1, 2, 3, 4, 5, 6))
        self.assertEqual(model.arch.input_shape, (4, 4, 6))
        self.assertEqual(report.pruned, 6)
        self.assertIsNotNone(report.base_err)
        self.assertAlmostEqual(report.size_ratio, 2.25, delta=0.3)

    def test_retraining_is_reproducible(self):
        first, _ = rebuild_and_retrain(self.arch, [1, 2, 3, 4], self.train_set, self.config)
        again, _ = rebuild_and_retrain(self.arch, [1, 2, 3, 4], self.train_set, self.config)
        for key in first.params:
            np.testing.assert_array_equal(first.params[key], again.params[key])


@unittest.skipUnless(os.environ.get("CBNN_SLOW"), "set CBNN_SLOW=1 for full training runs")
class TestSyntheticPipeline(unittest.TestCase):
    def test_prune_shrink_retrain(self):
        data = synth_bit_task(2560, 8, 8, 3, 8, (6, 7, 8), 4, seed=0)
        train_set, test_set = data.subset(np.arange(2048)), data.subset(np.arange(2048, 2560))
        arch = synthetic_arch(8, 8, 3, 8, 4)
        config = TrainConfig(epochs=20, batch_size=64, learning_rate=0.005)
        state, _ = train(arch, config, train_set)
        base = Model(arch, state.params)
        report = analyze_stack(base, test_set, SensitivityConfig(trials=5))
        self.assertLessEqual(report.clean_err, 5.0)
        for row in report.rows[1:6]:
            self.assertLessEqual(row.delta_err, 1.0)
        self.assertEqual(report.rows[8].slices, tuple(range(1, 9)))
        self.assertGreater(report.rows[8].delta_err, 10.0)
        self.assertTrue(set(range(1, 6)) <= set(report.prunable))
        _, compression = rebuild_and_retrain(arch, report.prunable, train_set, config, test_set, base)
        self.assertLessEqual(abs(compression.delta_err), 1.0)
        self.assertLess(abs(compression.size_ratio - (8 / 3) ** 2) / (8 / 3) ** 2, 0.15)


if __name__ == "__main__":
    unittest.main()
