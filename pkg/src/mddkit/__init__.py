"""mddkit: mispronunciation detection and diagnosis for L2 English speech.

Corpus tooling, filterbank features, a CTC-attention acoustic model trained
from scratch, n-gram-LM-fused beam decoding, phoneme-sequence augmentation,
and hierarchical mispronunciation metrics.
"""

__version__ = "0.1.0"
