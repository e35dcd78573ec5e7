import os
import shutil
import struct
import tempfile
import unittest

import numpy as np
from numpy.testing import assert_array_equal

from bitslice import PixelTensor, int2b
from checkpoint import MAGIC, dumps, load_checkpoint, loads, save_checkpoint
from data import synth_bit_task
from errors import CheckpointError
from network import Model, forward, init_params, synthetic_arch
from training import TrainConfig, train


def random_model(seed=0):
    arch = synthetic_arch(4, 4, 3, 8, 4)
    params = init_params(arch, seed)
    rng = np.random.default_rng(seed)
    for key in params:
        if key.endswith(".mean"):
            params[key] = rng.normal(0, 1, params[key].shape).astype(np.float32)
        elif key.endswith(".var"):
            params[key] = rng.uniform(0.5, 2, params[key].shape).astype(np.float32)
    return Model(arch, params, {"seed": 17, "epochs": 4, "final_err": 12.5, "pruned": (1, 2, 3)})


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.model = random_model()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_reloaded_model_gives_identical_logits(self):
        path = os.path.join(self.tmpdir, "model.cbnn")
        save_checkpoint(self.model, path)
        loaded = load_checkpoint(path)
        self.assertEqual(loaded.arch, self.model.arch)
        rng = np.random.default_rng(1)
        inputs = int2b(PixelTensor(rng.integers(0, 256, size=(100, 4, 4, 3))))
        assert_array_equal(forward(loaded.arch, loaded.params, inputs),
                           forward(self.model.arch, self.model.params, inputs))

    def test_binary_weights_stored_as_signs(self):
        loaded = loads(dumps(self.model))
        assert_array_equal(loaded.params["3.weight"], np.where(self.model.params["3.weight"] >= 0, 1.0, -1.0))
        assert_array_equal(loaded.params["0.weight"], self.model.params["0.weight"])

    def test_metadata(self):
        loaded = loads(dumps(self.model))
        self.assertEqual(loaded.metadata, {"seed": 17, "epochs": 4, "final_err": 12.5, "pruned": (1, 2, 3)})
        bare = loads(dumps(Model(self.model.arch, self.model.params)))
        self.assertEqual(bare.metadata, {"seed": 0, "epochs": 0})

    def test_header(self):
        raw = dumps(self.model)
        self.assertEqual(raw[:4], MAGIC)
        self.assertEqual(struct.unpack_from("<I", raw, 4)[0], 1)

    def test_corrupt_files(self):
        raw = dumps(self.model)
        with self.assertRaises(CheckpointError) as ctx:
            loads(b"XXXX" + raw[4:])
        self.assertEqual(ctx.exception.byte_offset, 0)
        with self.assertRaises(CheckpointError):
            loads(raw[:4] + struct.pack("<I", 2) + raw[8:])
        with self.assertRaises(CheckpointError) as ctx:
            loads(raw[:-3])
        self.assertLess(ctx.exception.byte_offset, len(raw))
        with self.assertRaises(CheckpointError):
            loads(raw + b"\x00")
        with self.assertRaises(CheckpointError):
            loads(raw[:6])

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(os.path.join(self.tmpdir, "absent.cbnn"))

    def test_same_seed_same_bytes(self):
        data = synth_bit_task(32, 4, 4, 3, 8, (6, 7, 8), 4, seed=0)
        arch = synthetic_arch(4, 4, 3, 8, 4)
        config = TrainConfig(epochs=1, batch_size=8, seed=5)
        first, _ = train(arch, config, data)
        second, _ = train(arch, config, data)
        meta = {"seed": 5, "epochs": 1}
        self.assertEqual(dumps(Model(arch, first.params, meta)), dumps(Model(arch, second.params, meta)))


if __name__ == "__main__":
    unittest.main()
