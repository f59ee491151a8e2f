"""Differentially private clustering with Morse-theoretic merging of mixture sub-clusters."""
