import math
import unittest

import numpy as np

from vaxnet.flows import FlowKind, FlowMatrix
from vaxnet.heatmap import SCHEMES, render_heatmap


def density_matrix():
    return FlowMatrix(
        ("DE", "FR", "IT"),
        np.array([[0.0, 2.0, 0.5], [math.inf, 0.0, 1.0], [0.8, 3.0, 0.0]]),
        FlowKind.DENSITY_RATIO,
        np.eye(3, dtype=bool),
    )


class HeatmapTests(unittest.TestCase):
    def test_svg_names_every_country(self):
        svg = render_heatmap(density_matrix(), title="pre")
        self.assertTrue(svg.lstrip().startswith("<?xml"))
        self.assertIn("</svg>", svg)
        for code in ("DE", "FR", "IT"):
            self.assertIn(code, svg)

    def test_rendering_is_repeatable(self):
        self.assertEqual(render_heatmap(density_matrix()), render_heatmap(density_matrix()))

    def test_fully_masked_matrix_still_renders(self):
        matrix = FlowMatrix(("A", "B"), np.zeros((2, 2)), FlowKind.LOWCRED_SHARE, np.ones((2, 2), dtype=bool))
        self.assertIn("</svg>", render_heatmap(matrix))

    def test_every_flow_kind_has_a_scheme(self):
        self.assertEqual(set(SCHEMES), set(FlowKind))
        self.assertTrue(SCHEMES[FlowKind.DENSITY_RATIO].diverging)


if __name__ == "__main__":
    unittest.main()
