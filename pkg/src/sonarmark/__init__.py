"""Desk-scale synthetic sonar landmark pipeline.

Simulates 32-channel ultrasonic recordings of dish-shaped acoustic
reflectors, processes them into cochleograms (matched filter,
delay-and-sum beamforming, gammatone filterbank), and trains a small
convolutional network to classify reflector radius and regress
landmark orientation.
"""

__version__ = "0.1.0"
