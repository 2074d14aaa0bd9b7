# -*- coding: utf-8 -*-
import csv
import json
import math
import os
import unittest

from cmolink.agent import AgentModel
from cmolink.errors import ConfigError, MissingArtifactError
from cmolink.harness import (SweepConfig, SweepPoint, check_confidence, ideal_link_adaptation,
                             run_sweep, scenario_preset, snr_at_bler, snr_gain_db,
                             throughput_gain, write_link_adaptation, write_results)
from cmolink.link import LinkConfig
from cmolink.training import TrainConfig, train_phase1, train_phase2
from cmolink.utils import config_hash

from .utils import BaseTest, slow, tiny_models

QPSK = LinkConfig(name="QPSKx1", csi="ideal", uplink="ideal")
QAM16 = LinkConfig(name="16QAMx1", qam_order=4, payload=4, csi="ideal", uplink="ideal")


def point(link, bler, ci, dl=0.0):
    return SweepPoint(link, "0" * 16, dl, None, 100, int(bler * 100), bler, 0.0, ci, 0)


class TestPresets(BaseTest):

    def test_baseline(self):
        names = [link.name for link in scenario_preset("baseline5g", payload=8, scale="full")]
        self.assertEqual(names, ["QPSKx4", "16QAMx2", "256QAMx1"])
        names = [link.name for link in scenario_preset("baseline5g", payload=8)]
        self.assertEqual(names, ["16QAMx2", "256QAMx1"])
        for link in scenario_preset("baseline5g", payload=8):
            self.assertEqual((link.csi, link.precoding, link.uplink), ("quantized", "eigen", "cmo2c"))

    def test_unknown(self):
        with self.assertRaises(ConfigError):
            scenario_preset("cmo9")
        with self.assertRaises(ConfigError):
            scenario_preset("baseline5g", payload=5)
        with self.assertRaises(ConfigError):
            scenario_preset("baseline5g", scale="huge")

    def test_learned_needs_models(self):
        with self.assertRaises(ConfigError):
            scenario_preset("cmo1")
        with self.assertRaises(MissingArtifactError):
            scenario_preset("cmo1", model_path=self.tempdir())

    def test_learned(self):
        path = self.tempdir()
        tiny_models(form="bits").save(path)
        with self.assertLogs("cmolink.harness", "WARNING"):
            link, = scenario_preset("cmo2", payload=4, model_path=path)
        self.assertEqual((link.csi, link.uplink, link.n_layer), ("learned-bits", "cmo2c", 2))
        with self.assertRaises(ConfigError):
            scenario_preset("cmo3", payload=4, model_path=path)

    def test_sweep_config(self):
        config = SweepConfig(payload=4)
        self.assertEqual([link.name for link in config.links()], ["QPSKx2", "16QAMx1"])
        with self.assertRaises(ConfigError):
            SweepConfig(preset="cmo9")
        with self.assertRaises(ConfigError):
            SweepConfig(trials=0)
        with self.assertRaises(ConfigError):
            SweepConfig(dl_snr_db=())
        self.assertEqual(SweepConfig.from_dict(config.to_dict()), config)


class TestCurves(BaseTest):

    def test_snr_at_bler(self):
        self.assertAlmostEqual(snr_at_bler([0, 2, 4], [1.0, 0.5, 0.05]), 2 + 2 * math.log10(5))
        self.assertAlmostEqual(snr_at_bler([4, 0, 2], [0.05, 1.0, 0.5]), 2 + 2 * math.log10(5))
        self.assertEqual(snr_at_bler([0, 2], [0.05, 0.0]), 0.0)
        self.assertTrue(math.isnan(snr_at_bler([0, 2], [1.0, 0.5])))
        with self.assertRaises(ConfigError):
            snr_at_bler([0, 2], [1.0])

    def test_snr_gain(self):
        snr = [0, 2, 4]
        self.assertAlmostEqual(snr_gain_db(snr, [0.5, 0.05, 0.01], [1.0, 0.5, 0.05]), 2.0)

    def test_throughput_gain(self):
        self.assertEqual(throughput_gain([2.0, 1.0, 0.0], [1.0, 0.0, 0.0]).tolist(), [1.0, math.inf, 0.0])

    def test_check_confidence(self):
        close = [point("a", 0.10, 0.06), point("b", 0.15, 0.07)]
        apart = [point("a", 0.10, 0.01, dl=4.0), point("b", 0.50, 0.02, dl=4.0)]
        with self.assertLogs("cmolink.harness", "WARNING"):
            self.assertEqual(check_confidence(close + apart), [(0.0, None)])


class TestSweeps(BaseTest):

    def test_run_and_write(self):
        with self.assertLogs("cmolink.harness", "WARNING") as logs:
            points = run_sweep([QPSK, QAM16], [30.0], trials=3, seed=5, workers=2)
        self.assertIn("Only 3 trials", logs.output[0])
        self.assertEqual([(p.link, p.bler, p.goodput) for p in points],
                         [("QPSKx1", 0.0, 1.0), ("16QAMx1", 0.0, 2.0)])
        self.assertEqual(points[0].config_hash, config_hash(QPSK))

        path = os.path.join(self.tempdir(), "sweep.csv")
        csv_path, manifest_path = write_results(points, path, [QPSK, QAM16], {"preset": "test"})
        with open(csv_path, newline="") as fp:
            rows = list(csv.DictReader(fp))
        self.assertEqual(rows[1]["link"], "16QAMx1")
        self.assertEqual(manifest_path, path[:-4] + ".json")
        with open(manifest_path) as fp:
            manifest = json.load(fp)
        self.assertEqual(manifest["seed"], 5)
        self.assertEqual(manifest["preset"], "test")
        self.assertIn(config_hash(QAM16), manifest["configs"])
        self.assertIn("numpy", manifest["versions"])

    def test_paired_trials(self):
        twin = QAM16.replace(name="twin")
        points = run_sweep([QAM16, twin], [2.0, 6.0], trials=4, seed=1)
        self.assertEqual([p.block_errors for p in points[:2]], [p.block_errors for p in points[2:]])

    def test_duplicate_names(self):
        with self.assertRaises(ConfigError):
            run_sweep([QPSK, QPSK], [0.0], trials=1)

    def test_link_adaptation(self):
        agent = AgentModel(1, [QPSK, QAM16])
        rows = ideal_link_adaptation([QPSK, QAM16], [30.0], trials=2, agent=agent)
        self.assertEqual(rows[0].candidates, [1.0, 2.0])
        self.assertEqual(rows[0].ideal, 2.0)
        self.assertIn(rows[0].agent, (1.0, 1.5, 2.0))
        self.assertTrue(0.0 <= rows[0].agreement <= 1.0)

        path = os.path.join(self.tempdir(), "adaptation.csv")
        write_link_adaptation(rows, path, [QPSK, QAM16], seed=0)
        with open(path, newline="") as fp:
            header = next(csv.reader(fp))
        self.assertEqual(header, ["dl_snr_db", "ul_snr_db", "trials", "QPSKx1", "16QAMx1",
                                  "ideal", "agent", "agreement"])
        with self.assertRaises(ConfigError):
            ideal_link_adaptation([], [0.0], trials=1)

    @slow
    def test_baseline_qpsk_sanity(self):
        link = LinkConfig(name="QPSKx1")
        self.assertEqual((link.qam_order, link.precoding, link.csi), (2, "eigen", "quantized"))
        point, = run_sweep([link], [20.0], trials=1000, seed=2)
        self.assertLess(point.bler, 0.01)


@slow
class TestFeedbackRobustness(BaseTest):

    def train(self, form):
        models = tiny_models(form=form)
        config = TrainConfig(batch_size=16, re_per_trial=16, steps=600, patience=0, eval_batches=4,
                             log_every=0, lr=3e-3, ul_snr_db=(-10.0, 10.0))
        train_phase1(models, config)
        train_phase2(models, config)
        path = self.tempdir()
        models.save(path)
        return path

    def test_symbol_feedback_survives_noisy_uplink(self):
        cmo2, = scenario_preset("cmo2", payload=4, model_path=self.train("bits"))
        cmo3, = scenario_preset("cmo3", payload=4, model_path=self.train("symbols"))
        dl = sum(TrainConfig().snr_db) / 2
        bits, symbols = run_sweep([cmo2, cmo3], [dl], trials=400, seed=4, ul_snr_db=(-10.0,))
        margin = max(2 * max(bits.ci_half_width, symbols.ci_half_width), 0.05)
        self.assertLessEqual(symbols.bler, bits.bler + margin)


if __name__ == '__main__':
    unittest.main()
