"""Prototype-dictionary segmentation engine.

Pipeline: featurize images into embedding grids, cluster a patch subset,
label a handful of representatives per cluster (simulated oracle or a human
over HTTP), build a prototype dictionary, and query it per grid location to
emit dense pseudo-masks plus evaluation reports.
"""

__version__ = "0.1.0"
