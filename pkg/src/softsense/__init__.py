"""softsense: soft-sensor experimentation toolkit.

Generates ground-truth data from a dynamic Williams-Otto flowsheet simulator,
builds multi-rate labeled/unlabeled regression datasets, and trains and
compares semi-supervised deep kernel learning (SSDKL), deep kernel learning
(DKL), and exact Gaussian-process (GP) soft sensors.
"""

__version__ = "0.1.0"
