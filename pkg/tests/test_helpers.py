"""
Unit tests for the utility helper functions.
"""
import unittest
import json
import logging
import tempfile
import yaml
import numpy as np
from pathlib import Path

from src.utils.errors import ConfigurationError, LabError
from src.utils.helpers import (
    load_config, merge_config, ensure_dir_exists, make_rng, spawn_seeds, random_unit_vector, canonical_hash,
    resolve_path, PROJECT_ROOT,
)


class TestConfiguration(unittest.TestCase):
    """Test cases for configuration loading and merging."""

    def setUp(self):
        """Set up the test fixtures."""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.test_dir = Path(self.temp_dir.name)
        self.config_data = {
            'parametric': {'d': 64, 'eta_step1': 10.0},
            'junta': {'layerwise': {'width': 256, 'averaging': 'suffix'}},
        }
        self.yaml_path = self.test_dir / 'config.yaml'
        with open(self.yaml_path, 'w') as f:
            yaml.dump(self.config_data, f)

    def tearDown(self):
        """Clean up after tests."""
        self.temp_dir.cleanup()

    def test_load_yaml_and_json(self):
        """Test that YAML and JSON files load to the same mapping."""
        json_path = self.test_dir / 'config.json'
        json_path.write_text(json.dumps(self.config_data))
        self.assertEqual(load_config(self.yaml_path), self.config_data)
        self.assertEqual(load_config(json_path), self.config_data)

    def test_load_errors(self):
        """Test missing files, lists and empty files."""
        with self.assertRaises(ConfigurationError):
            load_config(self.test_dir / 'missing.yaml')
        listing = self.test_dir / 'list.yaml'
        listing.write_text('- 1\n- 2\n')
        with self.assertRaises(ConfigurationError):
            load_config(listing)
        empty = self.test_dir / 'empty.yaml'
        empty.write_text('')
        self.assertEqual(load_config(empty), {})

    def test_error_hierarchy(self):
        """Test that configuration errors are lab errors and value errors."""
        self.assertTrue(issubclass(ConfigurationError, LabError))
        self.assertTrue(issubclass(ConfigurationError, ValueError))

    def test_merge_config(self):
        """Test that overlays merge deeply without touching the inputs."""
        overlay = {'junta': {'layerwise': {'width': 64}}, 'figure1': {'d_list': [30]}}
        merged = merge_config(self.config_data, overlay)
        self.assertEqual(merged['junta']['layerwise'], {'width': 64, 'averaging': 'suffix'})
        self.assertEqual(merged['figure1'], {'d_list': [30]})
        self.assertEqual(self.config_data['junta']['layerwise']['width'], 256)

    def test_project_config_profiles(self):
        """Test that the shipped configuration has every section and a fast profile."""
        config = load_config('config/config.yaml')
        for section in ('hermite', 'parametric', 'semiparametric', 'boolean', 'junta', 'figure1',
                        'smallball', 'harness', 'storage'):
            self.assertIn(section, config)
        fast = merge_config(config, config['profiles']['fast'])
        self.assertEqual(fast['figure1']['d_list'], [30, 50, 70])

    def test_paths(self):
        """Test path resolution and directory creation."""
        self.assertEqual(resolve_path('config'), PROJECT_ROOT / 'config')
        created = ensure_dir_exists(self.test_dir / 'a' / 'b')
        self.assertTrue(created.is_dir())


class TestRandomness(unittest.TestCase):
    """Test cases for seeded random streams."""

    def test_streams(self):
        """Test that equal keys repeat and distinct keys differ."""
        np.testing.assert_array_equal(make_rng(3, 1).random(5), make_rng(3, 1).random(5))
        self.assertFalse(np.array_equal(make_rng(3, 1).random(5), make_rng(3, 2).random(5)))
        self.assertFalse(np.array_equal(make_rng(3).random(5), make_rng(4).random(5)))

    def test_spawn_seeds(self):
        """Test that spawned seeds are reproducible and distinct."""
        seeds = spawn_seeds(7, 10)
        self.assertEqual(seeds, spawn_seeds(7, 10))
        self.assertEqual(len(set(seeds)), 10)

    def test_unit_vector(self):
        """Test that random directions have unit norm."""
        v = random_unit_vector(17, make_rng(0))
        self.assertAlmostEqual(np.linalg.norm(v), 1.0, places=12)

    def test_canonical_hash(self):
        """Test that the hash ignores key order and sees numpy values."""
        a = canonical_hash({'kind': 'figure1', 'parameters': {'d': 50, 'eta': 0.5}})
        b = canonical_hash({'parameters': {'eta': 0.5, 'd': np.int64(50)}, 'kind': 'figure1'})
        self.assertEqual(a, b)
        self.assertNotEqual(a, canonical_hash({'kind': 'figure1', 'parameters': {'d': 51, 'eta': 0.5}}))
        self.assertEqual(len(a), 64)


if __name__ == '__main__':
    logging.disable(logging.CRITICAL)
    unittest.main()
