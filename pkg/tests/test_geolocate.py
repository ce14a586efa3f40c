import tempfile
import unittest
from pathlib import Path

from vaxnet.geolocate import (
    COUNTRY_CHANGE,
    MANUAL,
    Gazetteer,
    UserGeo,
    apply_exclusions,
    assign_countries,
    eligible_countries,
    load_gazetteer,
    match_location,
    normalize_place,
)
from vaxnet.ingest import TweetEvent


def event(tweet_id, user_id, location=None, when="2020-11-02T10:00:00Z", retweeted=None):
    record = {
        "tweet_id": tweet_id,
        "user_id": user_id,
        "timestamp": when,
        "lang": "en",
        "text": "vaccine",
        "urls": [],
    }
    if location is not None:
        record["profile_location"] = location
    if retweeted is not None:
        record["retweeted_user_id"] = retweeted
        record["retweeted_tweet_id"] = f"orig-{tweet_id}"
    return TweetEvent.from_record(record)


class MatchLocationTests(unittest.TestCase):
    def setUp(self):
        self.gazetteer = Gazetteer.build(
            {"Paris": "fr", "France": "FR", "Roma": "IT", "New York": "US", "Italia": "IT"},
            stoplist=["Earth", "Everywhere"],
        )

    def test_normalize_strips_emoji_and_punctuation_at_the_ends(self):
        self.assertEqual(normalize_place("  🇫🇷 Paris!! "), "paris")
        self.assertEqual(normalize_place("New   York"), "new york")

    def test_segments_resolve_and_codes_are_uppercased(self):
        self.assertEqual(match_location("Paris, France", self.gazetteer), "FR")
        self.assertEqual(match_location("paris", self.gazetteer), "FR")

    def test_longest_matching_segment_wins(self):
        self.assertEqual(match_location("Roma, New York", self.gazetteer), "US")

    def test_stoplisted_segment_blocks_the_match(self):
        self.assertIsNone(match_location("Paris, Earth", self.gazetteer))

    def test_unknown_and_empty_locations_are_unmatched(self):
        self.assertIsNone(match_location("Atlantis", self.gazetteer))
        self.assertIsNone(match_location("", self.gazetteer))
        self.assertIsNone(match_location(None, self.gazetteer))

    def test_load_gazetteer_reads_tab_separated_places(self):
        with tempfile.TemporaryDirectory() as directory:
            places = Path(directory) / "places.tsv"
            places.write_text("Paris\tFR\nBerlin\tDE\n", encoding="utf-8")
            stoplist = Path(directory) / "stop.txt"
            stoplist.write_text("World\n", encoding="utf-8")
            gazetteer = load_gazetteer(places, stoplist)
        self.assertEqual(gazetteer.places, {"paris": "FR", "berlin": "DE"})
        self.assertEqual(gazetteer.stoplist, frozenset({"world"}))


class AssignCountriesTests(unittest.TestCase):
    def setUp(self):
        self.gazetteer = Gazetteer.build({"Paris": "FR", "Berlin": "DE", "Roma": "IT"})

    def test_latest_location_in_each_period_is_used(self):
        events = {
            "pre": [
                event("1", "a", "Berlin", when="2020-11-01T00:00:00Z"),
                event("2", "a", "Paris", when="2020-11-05T00:00:00Z"),
            ]
        }
        geo = assign_countries(events, self.gazetteer)
        self.assertEqual(geo.country_of("a"), "FR")

    def test_users_changing_country_between_periods_are_excluded(self):
        events = {
            "pre": [event("1", "a", "Paris"), event("2", "b", "Roma")],
            "post": [event("3", "a", "Berlin", when="2020-12-02T00:00:00Z")],
        }
        geo = assign_countries(events, self.gazetteer)
        self.assertIsNone(geo.country_of("a"))
        self.assertEqual(geo.country_of("b"), "IT")
        self.assertEqual([(e.user_id, e.reason) for e in geo.excluded], [("a", COUNTRY_CHANGE)])

    def test_users_receiving_most_cross_border_retweets_are_flagged(self):
        events = {
            "pre": [
                event("1", "f1", "Paris"),
                event("2", "f2", "Paris"),
                event("3", "d1", "Berlin"),
                event("4", "d2", "Berlin"),
                event("5", "f1", retweeted="d1"),
                event("6", "f2", retweeted="d1"),
                event("7", "f1", retweeted="d2"),
            ]
        }
        geo = assign_countries(events, self.gazetteer)
        self.assertEqual(len(geo.flagged), 1)
        flagged = geo.flagged[0]
        self.assertEqual((flagged.user_id, flagged.country_i, flagged.country_j), ("d1", "FR", "DE"))
        self.assertAlmostEqual(flagged.share, 2 / 3)
        # flagged users stay geolocated
        self.assertEqual(geo.country_of("d1"), "DE")

    def test_manual_exclusions_remove_users(self):
        geo = UserGeo(countries={"a": "FR", "b": "DE"})
        trimmed = apply_exclusions(geo, ["b", "unknown"])
        self.assertEqual(trimmed.countries, {"a": "FR"})
        self.assertEqual([(e.user_id, e.reason) for e in trimmed.excluded], [("b", MANUAL)])


class EligibleCountriesTests(unittest.TestCase):
    def test_countries_need_more_than_the_minimum_in_every_period(self):
        geo = UserGeo(countries={"a": "FR", "b": "FR", "c": "FR", "d": "DE", "e": "DE", "f": "DE"})
        events = {
            "pre": [event(str(i), user) for i, user in enumerate("abcdef")],
            "post": [event(f"p{i}", user) for i, user in enumerate("abcd")],
        }
        self.assertEqual(eligible_countries(geo, events, min_users=2), {"FR"})
        self.assertEqual(eligible_countries(geo, events, min_users=3), set())


if __name__ == "__main__":
    unittest.main()
