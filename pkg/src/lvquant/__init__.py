"""Full left-ventricle quantification with a multitask CNN + LSTM network."""

__version__ = "0.1.0"
