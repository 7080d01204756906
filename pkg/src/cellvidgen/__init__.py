"""Synthetic annotated live-cell microscopy video generation.

The package couples three trainable pieces: a statistical shape model that
samples temporally smooth mask sequences, a denoising diffusion model that
puts realistic texture on those masks via a truncated noising/denoising
round trip, and a registration network whose flow fields carry texture from
one frame to the next. Composed multi-cell scenes are written in the Cell
Tracking Challenge layout, and an evaluation suite (SEG, TRA, Fréchet
distances) closes the loop.
"""

__version__ = "0.1.0"
