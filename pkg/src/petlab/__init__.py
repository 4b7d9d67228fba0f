"""Desk-scale low-dose PET laboratory.

Simulates PET acquisition from synthetic phantoms at standard and reduced
dose, reconstructs slices with OSEM, and trains an encoder-decoder residual
denoising network to recover standard-dose image quality.
"""

__version__ = "0.1.0"
