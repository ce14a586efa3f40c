import tempfile
import unittest
from pathlib import Path

from vaxnet.config import (
    ConfigError,
    RwcMethodName,
    config_from_mapping,
    dump_config,
    load_config,
    parse_keyvalue,
    split_list,
)

MINIMAL = {
    "events": "a.jsonl, b.jsonl",
    "gazetteer": "gazetteer.tsv",
    "keywords": "keywords.txt",
    "periods": "periods.tsv",
    "spoken_languages": "languages.tsv",
}


class KeyValueTests(unittest.TestCase):
    def test_comments_and_blank_lines_are_skipped(self):
        values = parse_keyvalue(["# comment\n", "\n", "seed = 4\n", "countries=IT,FR\n"])
        self.assertEqual(values, {"seed": "4", "countries": "IT,FR"})

    def test_value_may_contain_equals(self):
        self.assertEqual(parse_keyvalue(["note=a=b"]), {"note": "a=b"})

    def test_duplicate_keys_name_the_line(self):
        with self.assertRaisesRegex(ConfigError, "cfg:2: duplicate key 'seed'"):
            parse_keyvalue(["seed=1", "seed=2"], source="cfg")

    def test_line_without_separator_is_rejected(self):
        with self.assertRaisesRegex(ConfigError, ":1: expected key=value"):
            parse_keyvalue(["seed"])

    def test_split_list_drops_empty_items(self):
        self.assertEqual(split_list(" IT , ,FR,"), ["IT", "FR"])


class PipelineConfigTests(unittest.TestCase):
    def test_paths_resolve_against_the_base_directory(self):
        config = config_from_mapping(dict(MINIMAL), Path("/data/run"))
        self.assertEqual(config.events, [Path("/data/run/a.jsonl"), Path("/data/run/b.jsonl")])
        self.assertEqual(config.gazetteer, Path("/data/run/gazetteer.tsv"))
        self.assertEqual(config.min_users, 2000)
        self.assertIs(config.rwc_method, RwcMethodName.EXACT)

    def test_countries_are_upper_cased_and_sorted(self):
        config = config_from_mapping({**MINIMAL, "countries": "it,fr,IT"}, Path("/x"))
        self.assertEqual(config.countries, ["FR", "IT"])

    def test_validation_errors_become_config_errors(self):
        with self.assertRaisesRegex(ConfigError, "dominance"):
            config_from_mapping({**MINIMAL, "dominance": "1.5"}, Path("/x"))
        with self.assertRaisesRegex(ConfigError, "unknown_key"):
            config_from_mapping({**MINIMAL, "unknown_key": "1"}, Path("/x"))
        missing = dict(MINIMAL)
        del missing["gazetteer"]
        with self.assertRaisesRegex(ConfigError, "gazetteer"):
            config_from_mapping(missing, Path("/x"))

    def test_digest_ignores_workers_and_output_directory(self):
        config = config_from_mapping(dict(MINIMAL), Path("/x"))
        self.assertEqual(len(config.digest), 64)
        self.assertEqual(config.override(workers=8, out=Path("/elsewhere")).digest, config.digest)
        self.assertNotEqual(config.override(seed=1).digest, config.digest)
        self.assertEqual(config.stamp(), f"config_digest={config.digest}")

    def test_override_skips_none_and_validates(self):
        config = config_from_mapping(dict(MINIMAL), Path("/x"))
        self.assertIs(config.override(seed=None), config)
        self.assertEqual(config.override(countries=["de"]).countries, ["DE"])
        with self.assertRaises(ConfigError):
            config.override(workers=0)


class ConfigFileTests(unittest.TestCase):
    def test_dumped_settings_load_back(self):
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "vaxnet.cfg"
            path.write_text(
                dump_config({**MINIMAL, "walk_reverse": True, "countries": ["IT", "FR"], "status": None}),
                encoding="utf-8",
            )
            config = load_config(path)
            base = path.resolve().parent
        self.assertTrue(config.walk_reverse)
        self.assertEqual(config.countries, ["FR", "IT"])
        self.assertIsNone(config.status)
        self.assertEqual(config.periods, base / "periods.tsv")

    def test_missing_file_is_a_config_error(self):
        with self.assertRaisesRegex(ConfigError, "cannot read"):
            load_config("/nonexistent/vaxnet.cfg")


if __name__ == "__main__":
    unittest.main()
