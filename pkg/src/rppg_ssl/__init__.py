"""Self-supervised representation learning for remote photoplethysmography.

Submodules:

* ``drm``      synthetic skin-reflection videos with known heart rate,
               FFT heart-rate oracle, Nyquist stride bound
* ``dataio``   clip/landmark/label containers, preprocessing, persistence
* ``rois``     landmark-derived facial regions
* ``augment``  spatiotemporal view augmentation and pseudo-labels
* ``encoder``  3D ResNet-18 video encoder, projection head, classifiers
* ``losses``   contrastive + pseudo-label objectives
* ``pipeline`` pretraining, linear evaluation, fine-tuning, metrics
* ``cli``      command-line entry point
"""

__version__ = "0.1.0"
