"""Label-wise contrastive pre-training for multi-label text classification.

A self-contained numpy implementation: a small reverse-mode autograd
library, label-wise (hierarchical) BiLSTM-attention encoders, a contrastive
pre-training task over T-/C-encoder pairs, a fused sigmoid classifier,
multi-label metrics and label-correlation analyses.
"""

__version__ = "0.1.0"
