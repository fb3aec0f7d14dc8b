"""Compressed-sensing space-frequency index modulation: encoding, channel and detectors."""
