"""Citation-proximity extraction and a Siamese LSTM distance regressor."""

__version__ = "0.1.0"
