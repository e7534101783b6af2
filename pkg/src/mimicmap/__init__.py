"""mimicmap: a self-contained speech-enhancement training toolkit.

Trains a noisy-to-clean spectral mapper in three stages: a frame
classifier learned on clean features, fidelity pre-training of the
mapper, and joint fine-tuning in which the mapper also matches the frozen
classifier's outputs on its enhanced frames.
"""

__version__ = "0.1.0"
