import io
import math
import unittest

import numpy as np

from vaxnet.annotate import Stance
from vaxnet.cohorts import AccountStatus, StatusSnapshot
from vaxnet.flows import (
    FlowKind,
    FlowMatrix,
    Orientation,
    density_ratio,
    export_summary,
    flow_marginals,
    lowcred_import_matrix,
    normalize_flow,
    raw_rt_matrix,
    read_matrix_csv,
    write_matrix_csv,
)
from vaxnet.geolocate import UserGeo
from vaxnet.ingest import TweetEvent
from vaxnet.lowcred import DomainList
from vaxnet.synth import CorpusSpec, synth_corpus

COUNTER = iter(range(1_000_000))


def rt(user, target, urls=()):
    tweet_id = f"t{next(COUNTER)}"
    return TweetEvent.from_record(
        {
            "tweet_id": tweet_id,
            "user_id": user,
            "timestamp": "2020-11-02T10:00:00Z",
            "lang": "en",
            "text": "RT vaccine",
            "urls": list(urls),
            "retweeted_user_id": target,
            "retweeted_tweet_id": f"orig-{tweet_id}",
        }
    )


class RawAndNormalizedTests(unittest.TestCase):
    def setUp(self):
        self.geo = UserGeo(countries={"a1": "AA", "a2": "AA", "b1": "BB", "b2": "BB"})
        self.events = [rt("a1", "b1"), rt("a2", "b2")] + [rt("b1", "a1") for _ in range(8)]

    def test_raw_counts_put_retweeters_on_rows(self):
        raw = raw_rt_matrix(self.events + [rt("a1", "a2"), rt("a1", "zz")], self.geo, ["AA", "BB"])
        self.assertEqual(raw.values.tolist(), [[1.0, 2.0], [8.0, 0.0]])
        self.assertEqual(raw.get("AA", "BB"), 2.0)

    def test_normalized_flow_against_expected_retweets(self):
        normalized = normalize_flow(raw_rt_matrix(self.events, self.geo, ["AA", "BB"]))
        self.assertEqual(normalized.kind, FlowKind.NORMALIZED)
        self.assertAlmostEqual(normalized.get("AA", "BB"), 5.0)
        self.assertAlmostEqual(normalized.get("BB", "AA"), 1.25)
        self.assertTrue(math.isnan(normalized.get("AA", "AA")))
        self.assertTrue(normalized.mask[0, 0])

    def test_proportional_flows_normalize_to_one(self):
        raw = FlowMatrix(("A", "B"), np.array([[1, 2], [2, 4]]), FlowKind.RAW)
        normalized = normalize_flow(raw)
        self.assertAlmostEqual(normalized.get("A", "B"), 1.0)
        self.assertAlmostEqual(normalized.get("B", "A"), 1.0)

    def test_zero_marginals_are_masked_with_a_warning(self):
        raw = FlowMatrix(("A", "B", "C"), np.array([[0, 3, 0], [1, 0, 0], [0, 0, 0]]), FlowKind.RAW)
        with self.assertLogs("vaxnet.flows", level="WARNING") as logs:
            normalized = normalize_flow(raw)
        self.assertTrue(np.isnan(normalized.values[2]).all())
        self.assertTrue(np.isnan(normalized.values[:, 2]).all())
        self.assertIn("zero retweet marginal", logs.output[0])

    def test_orientation_conversion_keeps_lookups(self):
        raw = raw_rt_matrix(self.events, self.geo, ["AA", "BB"])
        flipped = raw.oriented(Orientation.SOURCE_ROWS)
        self.assertEqual(flipped.values.tolist(), [[0.0, 8.0], [2.0, 0.0]])
        self.assertEqual(flipped.get("AA", "BB"), raw.get("AA", "BB"))

    def test_marginals_ignore_the_diagonal(self):
        raw = FlowMatrix(("A", "B"), np.array([[5, 2], [8, 1]]), FlowKind.RAW)
        marginals = {m.country: m for m in flow_marginals(raw)}
        self.assertEqual((marginals["A"].inflow, marginals["A"].outflow), (2.0, 8.0))
        self.assertEqual(marginals["A"].net_export, 6.0)
        self.assertEqual(marginals["B"].net_export, -6.0)


class DensityRatioTests(unittest.TestCase):
    def test_ratio_of_novax_to_other_densities(self):
        users = {}
        stances = {"IT": {}, "FR": {}, "DE": {}}
        for country in ("IT", "FR"):
            for i in range(10):
                user = f"{country}-a{i}"
                users[user] = country
                stances[country][user] = Stance.NO_VAX
            for i in range(100):
                user = f"{country}-o{i}"
                users[user] = country
                stances[country][user] = Stance.OTHER
        for i in range(5):
            users[f"DE-o{i}"] = "DE"
            stances["DE"][f"DE-o{i}"] = Stance.OTHER
        geo = UserGeo(countries=users)

        events = [rt(f"IT-a{i}", f"FR-a{i}") for i in range(5)]
        events += [rt(f"IT-o{i}", f"FR-o{i}") for i in range(50)]
        events += [rt("FR-a0", "IT-a1")]
        events += [rt("DE-o0", "IT-o0"), rt("IT-a0", "FR-o0")]

        theta = density_ratio(events, stances, geo, ["DE", "FR", "IT"])
        self.assertAlmostEqual(theta.get("IT", "FR"), 10.0)
        self.assertEqual(theta.get("FR", "IT"), math.inf)
        self.assertTrue(math.isnan(theta.get("IT", "IT")))
        # DE has no no-vax users
        self.assertTrue(np.isnan(theta.values[0]).all())
        self.assertTrue(np.isnan(theta.values[:, 0]).all())

    def test_novax_pairs_are_denser_on_the_demo_corpus(self):
        corpus = synth_corpus(CorpusSpec.demo())
        stances = {}
        for user, code in corpus.countries.items():
            stances.setdefault(code, {})[user] = corpus.stances[user]
        countries = sorted(corpus.spec.countries)
        theta = density_ratio(corpus.events, stances, corpus.user_geo(), countries)
        unmasked = theta.values[~theta.mask]
        self.assertEqual(unmasked.size, len(countries) * (len(countries) - 1))
        self.assertTrue((unmasked > 1).all(), unmasked)

    def test_equal_densities_give_one(self):
        geo = UserGeo(countries={"ia": "IT", "io": "IT", "fa": "FR", "fo": "FR"})
        stances = {
            "IT": {"ia": Stance.NO_VAX, "io": Stance.OTHER},
            "FR": {"fa": Stance.NO_VAX, "fo": Stance.OTHER},
        }
        theta = density_ratio([rt("ia", "fa"), rt("io", "fo")], stances, geo, ["FR", "IT"])
        self.assertAlmostEqual(theta.get("IT", "FR"), 1.0)
        self.assertTrue(math.isnan(theta.get("FR", "IT")))


class LowCredibilityFlowTests(unittest.TestCase):
    def setUp(self):
        self.geo = UserGeo(
            countries={"i1": "IT", "i2": "IT", "f1": "FR", "f2": "FR", "d1": "DE"}
        )
        self.listed = DomainList(frozenset({"hoax.net"}))
        self.events = [
            rt("i1", "f1", ["https://hoax.net/a", "https://hoax.net/b"]),
            rt("i2", "f2", ["https://hoax.net/c", "https://bbc.co.uk/x"]),
            rt("i1", "f2", ["https://bbc.co.uk/y"]),
            rt("i2", "f1"),
            rt("i1", "d1", ["https://www.hoax.net/d"]),
            rt("i1", "i2", ["https://hoax.net/e"]),
        ]

    def test_rate_and_origin_share(self):
        rate, share = lowcred_import_matrix(
            self.events, self.geo, ["DE", "FR", "IT"], self.listed, min_imports=4
        )
        self.assertAlmostEqual(rate.get("IT", "FR"), 0.5)
        self.assertAlmostEqual(rate.get("IT", "DE"), 1.0)
        self.assertTrue(math.isnan(rate.get("FR", "IT")))
        self.assertTrue(math.isnan(rate.get("IT", "IT")))
        self.assertAlmostEqual(share.get("IT", "FR"), 0.75)
        self.assertAlmostEqual(share.get("IT", "DE"), 0.25)

    def test_rows_with_few_imports_are_masked(self):
        _, share = lowcred_import_matrix(
            self.events, self.geo, ["DE", "FR", "IT"], self.listed, min_imports=5
        )
        self.assertTrue(np.isnan(share.values[2]).all())

    def test_export_summary_shares(self):
        status = StatusSnapshot(statuses={"f1": AccountStatus.SUSPENDED})
        rows = {
            row.country: row
            for row in export_summary(self.events, self.geo, ["DE", "FR", "IT"], self.listed, status)
        }
        self.assertAlmostEqual(rows["FR"].retweet_share, 0.8)
        self.assertAlmostEqual(rows["DE"].retweet_share, 0.2)
        self.assertEqual(rows["IT"].retweet_share, 0.0)
        self.assertAlmostEqual(rows["FR"].lowcred_share, 2 / 3)
        self.assertAlmostEqual(rows["FR"].suspended_share, 0.5)
        self.assertEqual(rows["DE"].suspended_share, 0.0)
        self.assertIsNone(rows["IT"].suspended_share)


class MatrixFileTests(unittest.TestCase):
    def test_csv_keeps_masks_and_infinities(self):
        matrix = FlowMatrix(
            ("DE", "FR"),
            np.array([[0.0, math.inf], [0.25, 0.0]]),
            FlowKind.DENSITY_RATIO,
            np.eye(2, dtype=bool),
        )
        handle = io.StringIO()
        write_matrix_csv(matrix, handle, comment="config_digest=abc")
        lines = handle.getvalue().splitlines()
        self.assertEqual(lines[0], "# config_digest=abc")
        self.assertEqual(lines[1], "country,DE,FR")
        self.assertEqual(lines[2], "DE,NA,inf")
        back = read_matrix_csv(io.StringIO(handle.getvalue()), FlowKind.DENSITY_RATIO)
        self.assertEqual(back.countries, ("DE", "FR"))
        np.testing.assert_array_equal(back.values, matrix.values)


if __name__ == "__main__":
    unittest.main()
