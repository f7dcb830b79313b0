"""Multi-band DFT-spread OTFS-IM link simulation toolkit.

Modules by theme:

* :mod:`mbotfs.otfs` - delay-Doppler transforms, channel matrices, MMSE.
* :mod:`mbotfs.ntn` - LEO link budget, shadowed-Rician fading, Doppler
  geometry, path-set generation.
* :mod:`mbotfs.im` - grouped index modulation, Gray QAM, DFT spreading,
  stride interleaving, spectral efficiency.
* :mod:`mbotfs.papr` - oversampled peak-power metrics and CCDFs.
* :mod:`mbotfs.layers` / :mod:`mbotfs.autoencoder` - hand-differentiated
  multi-band autoencoder around the link.
* :mod:`mbotfs.coding` - LDPC coding and exact soft demapping.
* :mod:`mbotfs.harness` - experiment configs, Monte-Carlo drivers, CSV
  emission; :mod:`mbotfs.cli` exposes them as subcommands.
"""

__version__ = "0.1.0"
