"""Pulsed-injection simulator for coupled quantum-dot molecules."""
