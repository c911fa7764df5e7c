"""Prompt-guided all-in-one image restoration at desk scale.

A sentence like "remove the rain from this photo" is embedded by a small
fine-tuned text encoder into a guidance vector that conditions every block
of a U-Net restoration backbone, letting one model identify and remove the
requested degradation (noise, rain or haze).
"""

__version__ = "0.1.0"
