"""Self-supervised sequence-to-sequence non-rigid structure-from-motion.

Recovers per-frame camera rotations and deforming 3D shapes from 2D
keypoint sequences, trained end to end with reprojection, low-rank and
canonicalization losses, plus a standalone numerical oracle for the
reshuffled-shape rank behaviour under rotation ambiguities.
"""

__version__ = "0.1.0"
