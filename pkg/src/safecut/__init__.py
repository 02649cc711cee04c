"""Desk-scale simulator for safety-filtered cutting motion on a 3-DOF endoscopic arm.

Units throughout: millimetres, seconds, radians, grams.
"""

__version__ = "0.1.0"
