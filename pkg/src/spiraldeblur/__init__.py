"""Off-resonance deblurring for spiral MRI.

Three reconstruction engines share one forward model:

* multi-frequency interpolation (:mod:`spiraldeblur.mfi`),
* CG inversion of a time-segmented off-resonance model (:mod:`spiraldeblur.ir`),
* a three-layer residual CNN trained on simulated data (:mod:`spiraldeblur.cnn`).

:mod:`spiraldeblur.data` simulates blurred vocal-tract-like sequences and
:mod:`spiraldeblur.metrics` scores reconstructions.
"""

__version__ = "0.1.0"
