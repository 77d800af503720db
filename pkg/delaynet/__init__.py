"""
Delaynet Package

Delay-embedded time series to a multilayer perceptron trained by
precision annealing.
"""

__version__ = "1.0.0"
__author__ = "Delaynet Team"
