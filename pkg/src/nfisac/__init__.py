"""Near-field ISAC simulator for secure UAV links.

Submodules: geometry (array/steering math), channel (LoS links and rates),
signals (echo synthesis), sensing (matched-filter localization and ML
velocity), tracking (EKF), optimize (joint beamforming/trajectory design),
scenario (the closed CPI loop), config (schema and profiles), cli, service.
"""

__version__ = "0.1.0"
