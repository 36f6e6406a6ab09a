"""Human-in-the-loop vibrotactile texture synthesis workbench.

A conditional adversarial autoencoder generates vibration spectrograms from
a latent vector, a differential-subspace slider search steers the latent
space through one dimension, and a Griffin-Lim pipeline turns spectrograms
into playable waveforms. The package ships a training pipeline, a session
server, a simulated oracle user, and evaluation statistics.
"""

__version__ = "0.1.0"
