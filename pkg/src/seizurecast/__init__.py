"""Masked video-autoencoder pretraining and few-shot seizure forecasting on
synthetic cross-species clips."""

__version__ = "0.1.0"
