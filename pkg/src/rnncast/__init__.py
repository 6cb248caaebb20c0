"""rnncast: recurrent networks for short-term time series forecasting.

Five architectures (ERNN, LSTM, GRU trained by truncated BPTT; NARX trained
by Levenberg-Marquardt; echo state networks with a ridge readout), synthetic
benchmark generators, an invertible preprocessing pipeline, NRMSE evaluation
with a random hyperparameter search, plus a CLI and a small HTTP service.
"""

__version__ = "0.1.0"
