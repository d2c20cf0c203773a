"""privatexr: differentially private training and input privatization for
frame-based XR telemetry, with attribution-guided selective noising and an
attack suite (membership inference, re-identification) for auditing."""

__version__ = "0.1.0"
