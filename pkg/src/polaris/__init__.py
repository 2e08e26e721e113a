"""Landmark-based vehicle localization with polarimetric automotive radar.

Modules, bottom-up: ``polarimetry`` (scattering vectors, covariances, Wishart
distance), ``simulator`` (scenes, trajectories, radar frames), ``egomotion``
(Doppler RANSAC), ``gridmap`` (covariance grid), ``landmarks`` (point and
line candidates), ``mapping`` (multi-drive consensus map), ``matching``
(local map association and temporal smoothing), ``posegraph`` (sliding-window
factor graph), ``evaluation`` (trajectory errors) and ``pipeline``/``cli``.
"""

__version__ = "0.1.0"
