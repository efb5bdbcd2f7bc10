"""Two-stage LBP-guided generative image inpainting, desk scale.

A structure-prediction network first restores the local-binary-pattern map
of the missing region; an inpainting network with a dual-scope spatial
attention layer then fills the pixels, trained adversarially end to end.
"""

__version__ = "0.1.0"
