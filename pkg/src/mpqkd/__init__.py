"""Mode-pairing MDI-QKD laboratory: pairing, simulation, decoy estimation and key rates."""

__version__ = "0.1.0"
SCHEMA_VERSION = 1
