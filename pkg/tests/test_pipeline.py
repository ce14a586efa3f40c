import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from vaxnet.config import ConfigError, load_config
from vaxnet.flows import FlowKind, read_matrix_csv
from vaxnet.pipeline import (
    STAGES,
    Layout,
    MissingArtifactError,
    StageRunner,
    read_table,
    unit_seed,
    write_table,
)
from vaxnet.synth import CorpusSpec, synth_corpus, write_corpus

SMALL = {
    "seed": "1",
    "country.FR.users": "40",
    "country.FR.lang": "fr",
    "country.FR.communities": "A:1,O:3",
    "country.IT.users": "40",
    "country.IT.lang": "it",
    "country.IT.communities": "A:1,O:3",
    "period.pre.start": "2020-11-01T00:00:00Z",
    "period.pre.end": "2020-11-15T00:00:00Z",
    "unlocated_share": "0",
}


class HelperTests(unittest.TestCase):
    def test_unit_seeds_are_stable_and_distinct(self):
        self.assertEqual(unit_seed(0, "sample", "IT", "pre"), unit_seed(0, "sample", "IT", "pre"))
        self.assertNotEqual(unit_seed(0, "sample", "IT", "pre"), unit_seed(0, "sample", "FR", "pre"))
        self.assertNotEqual(unit_seed(0, "sample", "IT", "pre"), unit_seed(1, "sample", "IT", "pre"))
        self.assertLess(unit_seed(7, "x"), 2**32)

    def test_missing_artifact_message_names_both_stages(self):
        exc = MissingArtifactError("cluster", "build-graphs", Path("out/graphs/IT/pre/rt.tsv"))
        self.assertEqual(
            str(exc), "[cluster] missing artifact from stage build-graphs: out/graphs/IT/pre/rt.tsv"
        )
        self.assertIsInstance(exc, FileNotFoundError)

    def test_layout_paths(self):
        layout = Layout(Path("out"))
        self.assertEqual(layout.graph("IT", "pre", "co"), Path("out/graphs/IT/pre/co.tsv"))
        self.assertEqual(layout.partition("IT", "pre", "rt"), Path("out/clusters/IT/pre/rt.partition.tsv"))
        self.assertEqual(layout.samples("FR", "post", 2), Path("out/samples/FR/post/round2.tsv"))
        self.assertEqual(layout.report("fig2.csv"), Path("out/report/fig2.csv"))

    def test_tables_carry_the_stamp_and_missing_values(self):
        frame = pd.DataFrame(
            [{"country": "NO", "value": 0.5, "stderr": None}, {"country": "IT", "value": math.inf, "stderr": 0.1}]
        )
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "nested" / "table.tsv"
            write_table(path, frame, "config_digest=abc")
            lines = path.read_text(encoding="utf-8").splitlines()
            back = read_table(path)
        self.assertEqual(lines[0], "# config_digest=abc")
        self.assertEqual(lines[1], "country\tvalue\tstderr")
        self.assertEqual(lines[2], "NO\t0.5\tNA")
        self.assertEqual(list(back["country"]), ["NO", "IT"])
        self.assertTrue(math.isnan(back["stderr"][0]))
        self.assertEqual(back["value"][1], math.inf)


class StageRunnerTests(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        corpus = synth_corpus(CorpusSpec.from_keyvalue(SMALL))
        self.config = load_config(write_corpus(corpus, self.directory.name))
        self.runner = StageRunner(self.config)

    def tearDown(self):
        self.directory.cleanup()

    def test_stage_order(self):
        self.assertEqual(STAGES[0], "ingest")
        self.assertEqual(STAGES[-1], "report")
        self.assertLess(STAGES.index("cluster"), STAGES.index("sample"))

    def test_unknown_stage_is_rejected(self):
        with self.assertRaises(ValueError):
            self.runner.run("deploy")

    def test_stage_before_its_producer_fails_with_the_producer_named(self):
        with self.assertRaises(MissingArtifactError) as caught:
            self.runner.run("cluster")
        self.assertEqual((caught.exception.stage, caught.exception.producer), ("cluster", "geolocate"))
        state = self.runner.get_state("cluster")
        self.assertEqual(state["status"], "error")
        self.assertIn("geolocate", state["error"])

    def test_transitions_are_logged_until_complete(self):
        with self.assertLogs("vaxnet.pipeline", level="INFO") as logs:
            summary = self.runner.run("ingest")
        statuses = [
            record.status for record in logs.records if getattr(record, "event", None) == "stage_transition"
        ]
        self.assertEqual(statuses, ["pending", "running", "complete"])
        self.assertEqual(self.runner.get_state("ingest")["status"], "complete")
        self.assertEqual(summary["periods"]["pre"], summary["kept"])
        self.assertLessEqual(summary["kept"], summary["events"])

    def test_ingest_then_geolocate_selects_both_countries(self):
        self.runner.run("ingest")
        first_line = self.runner.layout.ingest("pre").read_text(encoding="utf-8").splitlines()[0]
        self.assertEqual(first_line, f"# {self.config.stamp()}")
        summary = self.runner.run("geolocate")
        self.assertEqual(summary["countries"], ["FR", "IT"])
        self.assertEqual(self.runner.countries(), {"FR": "fr", "IT": "it"})
        with self.assertRaises(MissingArtifactError) as caught:
            self.runner.run("cluster")
        self.assertEqual(caught.exception.producer, "build-graphs")

    def test_classify_needs_annotator_labels(self):
        for stage in ("ingest", "geolocate", "build-graphs", "cluster", "sample"):
            self.runner.run(stage)
        with self.assertRaises(MissingArtifactError) as caught:
            self.runner.run("classify")
        self.assertEqual(caught.exception.producer, "annotation")

    def test_undeclared_period_is_a_config_error(self):
        runner = StageRunner(self.config.override(period="never"))
        with self.assertRaises(ConfigError):
            runner.periods()



class DemoFlowTests(unittest.TestCase):
    def test_demo_corpus_fills_the_lowcred_share_matrix(self):
        with tempfile.TemporaryDirectory() as directory:
            config = load_config(write_corpus(synth_corpus(CorpusSpec.demo()), directory))
            runner = StageRunner(config)
            for stage in ("ingest", "geolocate", "flows"):
                runner.run(stage)
            shares = {}
            for period in ("pre", "post"):
                with runner.layout.flow(period, FlowKind.LOWCRED_SHARE).open(encoding="utf-8") as handle:
                    shares[period] = read_matrix_csv(handle, FlowKind.LOWCRED_SHARE)
        for period, share in shares.items():
            with self.subTest(period=period):
                self.assertEqual(share.countries, ("DE", "FR", "IT"))
                kept_rows = (~share.mask).any(axis=1)
                self.assertTrue(kept_rows.any())
                for row in np.flatnonzero(kept_rows):
                    self.assertAlmostEqual(float(np.nansum(share.values[row])), 1.0, places=9)


if __name__ == "__main__":
    unittest.main()
