"""Test suite for the pulse-injection simulator."""
