"""maskrecon: random pixel masking + matrix-estimation reconstruction as an
image preprocessing defense, with training, attack, and evaluation tooling."""

__version__ = "0.1.0"
