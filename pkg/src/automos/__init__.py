"""automos: train and evaluate a recurrent MOS estimator for synthesized
speech from raw 16 kHz waveforms.

Subpackages: corpus (data model and I/O), frontend (features), network
(model forward/backward), training (losses and optimization), evaluation
(grouped CV, metrics, baselines), synthgen (seeded synthetic corpora),
hypersearch (random search), cli (command line).
"""

__version__ = "0.1.0"
