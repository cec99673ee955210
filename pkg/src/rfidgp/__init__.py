"""Passive RFID tag ranging from phase-difference-of-arrival with per-environment GP models.

Modules:

* ``signal_sim``: synthetic phase/RSSI environments, datasets and moving-tag streams
* ``gp_engine``: exact GP regression with a linear mean in the linear phase band
* ``env_dictionary``: model dictionaries and segmentation-weighted model selection
* ``ranging``: KNN baseline, kinematic range clamp, planar trilateration, metrics
* ``pipeline``: select, range and fix every tag of a stream
* ``bench``: seeded experiment suite
* ``cli``: the ``rfidgp`` command
"""

__version__ = "0.1.0"
