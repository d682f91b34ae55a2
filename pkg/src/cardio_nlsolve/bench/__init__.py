"""Experiment harness: configuration, suites, CSV and SVG output."""
