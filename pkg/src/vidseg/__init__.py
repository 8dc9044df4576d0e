"""Video-level contrastive representation learning on synthetic videos.

Pretrains a small two-stream encoder (query + momentum key) with frame-level
and video-level contrastive objectives plus a temporal-order head, on
procedurally generated moving-blob videos, and evaluates the frozen encoder
by linear probing and nearest-neighbour retrieval. All training math runs in
float64 through a recorded tape so every gradient can be checked against
finite differences.
"""

__version__ = "0.1.0"
