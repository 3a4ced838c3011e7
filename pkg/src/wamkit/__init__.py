"""Wide-area measurement analytics on synthetic swing-equation data.

Subpackages cover the full pipeline: sensor-stream ingestion and alignment
(`measurement`), a multi-machine swing simulator that doubles as the
ground-truth oracle (`gridsim`), shared signal kernels (`sigproc`),
minimum-volume enclosing ellipsoid features (`mvee`), in-repo learning
kernels (`learn`), and the application pipelines built on top of them
(`events`, `estimation`, `auth`, `control`, `stability`).
"""

__version__ = "0.1.0"
