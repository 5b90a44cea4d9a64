"""Self-supervised EEG representation learning toolkit.

Pre-training combines a cosine reconstruction objective with an L1 loss on
frequency band power predicted from the embeddings of a convolutional +
state-space backbone; fine-tuning probes those embeddings under several
freeze policies with cross-validation and data-efficiency sweeps.
"""

__version__ = "0.1.0"
