"""Extremum seeking control: costs, dithers, estimators, averaged and exact flows, stability lab."""
