import tempfile
import unittest
from pathlib import Path

from pydantic import ValidationError

from vaxnet.annotate import Label, Sample, Stance
from vaxnet.config import ConfigError, load_config
from vaxnet.lowcred import DomainList, lowcred_fraction
from vaxnet.synth import (
    LOWCRED_DOMAINS,
    CorpusSpec,
    SbmSpec,
    read_tweet_labels,
    sbm_generate,
    sbm_membership,
    simulate_labels,
    synth_corpus,
    write_corpus,
)

SMALL = {
    "seed": "5",
    "country.fr.users": "20",
    "country.fr.lang": "fr",
    "country.fr.communities": "A:0.5,O:0.5",
    "country.IT.users": "20",
    "country.IT.lang": "it",
    "country.IT.communities": "A:1,O:3",
    "period.pre.start": "2020-11-01T00:00:00Z",
    "period.pre.end": "2020-11-08T00:00:00Z",
    "originals_per_user": "1.5",
    "retweets_per_user": "3",
}


class BlockModelTests(unittest.TestCase):
    def test_no_edges_cross_blocks_without_p_out(self):
        spec = SbmSpec(sizes=[5, 6, 7], p_in=0.8, p_out=0.0, weight_mean=2.0, seed=1)
        graph = sbm_generate(spec)
        membership = sbm_membership(spec)
        self.assertEqual(graph.number_of_nodes(), 18)
        self.assertGreater(graph.number_of_edges(), 0)
        for u, v in graph.edges:
            self.assertEqual(membership[u], membership[v])
        self.assertTrue((graph.weights >= 1).all())

    def test_intra_block_edge_count_follows_the_binomial(self):
        pairs = 2 * (100 * 99 // 2)
        sigma = (pairs * 0.1 * 0.9) ** 0.5
        for seed in range(5):
            spec = SbmSpec(sizes=[100, 100], p_in=0.1, p_out=0.01, seed=seed)
            membership = sbm_membership(spec)
            intra = sum(membership[u] == membership[v] for u, v in sbm_generate(spec).edges)
            with self.subTest(seed=seed):
                self.assertLess(abs(intra - 990), 4 * sigma)

    def test_same_seed_same_graph(self):
        spec = SbmSpec(sizes=[10, 10], p_in=0.5, p_out=0.1, seed=3)
        self.assertEqual(sbm_generate(spec), sbm_generate(spec))

    def test_p_out_may_not_exceed_p_in(self):
        with self.assertRaises(ValidationError):
            SbmSpec(sizes=[3, 3], p_in=0.1, p_out=0.5)


class CorpusSpecTests(unittest.TestCase):
    def test_dotted_keys_build_nested_settings(self):
        spec = CorpusSpec.from_keyvalue(SMALL)
        self.assertEqual(sorted(spec.countries), ["FR", "IT"])
        mix = spec.countries["IT"].communities
        self.assertEqual([c.stance for c in mix], [Stance.NO_VAX, Stance.OTHER])
        self.assertEqual([c.share for c in mix], [1.0, 3.0])
        self.assertEqual(spec.lowcred_rate[Stance.NO_VAX], 0.26)

    def test_invalid_settings_become_config_errors(self):
        with self.assertRaisesRegex(ConfigError, "users"):
            CorpusSpec.from_keyvalue({**SMALL, "country.IT.users": "2"})
        with self.assertRaisesRegex(ConfigError, "does not start before"):
            CorpusSpec.from_keyvalue({**SMALL, "period.pre.end": "2020-10-01T00:00:00Z"})

    def test_demo_spec_is_valid(self):
        spec = CorpusSpec.demo(seed=2)
        self.assertEqual(spec.seed, 2)
        self.assertEqual(sorted(spec.periods), ["post", "pre"])

    def test_url_rates_may_not_exceed_one_together(self):
        with self.assertRaisesRegex(ConfigError, "exceed 1 together"):
            CorpusSpec.from_keyvalue({**SMALL, "lowcred_rate.A": "0.9", "youtube_rate.A": "0.2"})


class CorpusTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.corpus = synth_corpus(CorpusSpec.from_keyvalue(SMALL))

    def test_generation_is_deterministic(self):
        again = synth_corpus(CorpusSpec.from_keyvalue(SMALL))
        self.assertEqual(again.events, self.corpus.events)
        self.assertEqual(again.status, self.corpus.status)

    def test_ground_truth_matches_the_mix(self):
        corpus = self.corpus
        it_users = [user for user, code in corpus.countries.items() if code == "IT"]
        self.assertEqual(len(it_users), 20)
        novax = [user for user in it_users if corpus.stances[user] is Stance.NO_VAX]
        self.assertEqual(len(novax), 5)
        self.assertTrue(all(corpus.communities[user] == 0 for user in novax))
        self.assertEqual(corpus.truth_partition("IT").k, 2)

    def test_retweets_point_at_earlier_originals(self):
        originals = {event.tweet_id: event for event in self.corpus.events if not event.is_retweet}
        retweets = [event for event in self.corpus.events if event.is_retweet]
        self.assertTrue(retweets)
        for event in retweets:
            source = originals[event.retweeted_tweet_id]
            self.assertEqual(source.user_id, event.retweeted_user_id)
            self.assertNotEqual(event.user_id, event.retweeted_user_id)
            self.assertGreaterEqual(event.timestamp, source.timestamp)
            self.assertEqual(self.corpus.tweet_labels[event.tweet_id], self.corpus.tweet_labels[source.tweet_id])

    def test_written_corpus_is_a_loadable_config(self):
        with tempfile.TemporaryDirectory() as directory:
            config_path = write_corpus(self.corpus, directory)
            config = load_config(config_path)
            base = Path(directory).resolve()
            with (base / "truth_tweets.tsv").open(encoding="utf-8") as handle:
                truth = read_tweet_labels(handle)
            self.assertTrue((base / "events.jsonl").exists())
        self.assertEqual(config.labels, base / "labels.tsv")
        self.assertEqual(config.out, base / "out")
        self.assertEqual(config.min_users, 5)
        self.assertEqual(config.seed, 5)
        self.assertEqual(truth, self.corpus.tweet_labels)


class PlantedRateTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.corpus = synth_corpus(CorpusSpec.demo())
        cls.domains = DomainList(frozenset(LOWCRED_DOMAINS))

    def shared_by(self, stance):
        return [event for event in self.corpus.events if self.corpus.stances[event.user_id] is stance]

    def test_lowcred_share_of_every_url_matches_the_planted_rate(self):
        for stance, planted in ((Stance.NO_VAX, 0.26), (Stance.OTHER, 0.024)):
            with self.subTest(stance=stance):
                realized = lowcred_fraction(self.shared_by(stance), self.domains)
                self.assertAlmostEqual(realized, planted, delta=0.02)

    def test_retweets_reuse_the_source_url_of_the_same_class(self):
        originals = {event.tweet_id: event for event in self.corpus.events if not event.is_retweet}
        reused = [
            event
            for event in self.corpus.events
            if event.is_retweet and event.urls and event.urls == originals[event.retweeted_tweet_id].urls
        ]
        self.assertTrue(reused)


class SimulatedLabelTests(unittest.TestCase):
    SAMPLES = [Sample(0, "t1"), Sample(1, "t2")]
    TRUTH = {"t1": Label.NO_VAX, "t2": Label.PRO_VAX}

    def test_perfect_annotators_copy_the_truth(self):
        records = simulate_labels(self.SAMPLES, self.TRUTH, round=1, accuracy=1.0)
        self.assertEqual(len(records), 4)
        self.assertEqual({(r.tweet_id, r.label) for r in records}, {("t1", Label.NO_VAX), ("t2", Label.PRO_VAX)})
        self.assertEqual({r.annotator_id for r in records}, {"ann1", "ann2"})

    def test_wrong_annotators_never_pick_the_truth(self):
        records = simulate_labels(self.SAMPLES, self.TRUTH, round=2, accuracy=0.0)
        for record in records:
            self.assertIsNot(record.label, self.TRUTH[record.tweet_id])
            self.assertEqual(record.round, 2)

    def test_unknown_tweets_default_to_other(self):
        records = simulate_labels([Sample(0, "nope")], {}, round=1, annotators=("solo",), accuracy=1.0)
        self.assertEqual(records[0].label, Label.OTHER)

    def test_accuracy_must_be_a_probability(self):
        with self.assertRaises(ValueError):
            simulate_labels(self.SAMPLES, self.TRUTH, round=1, accuracy=1.5)


if __name__ == "__main__":
    unittest.main()
