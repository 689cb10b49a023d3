"""Single-image dehazing toolkit.

Provides a haze synthesizer based on the atmospheric scattering model,
a classical dark-channel-prior dehazer, a feature-attention dehazing
network, a contrast-assisted reconstruction loss, and a mean-teacher
training loop with consistency regularization.
"""

__version__ = "0.1.0"
