"""Brownian dynamics on periodic domains with Metropolized Euler-Maruyama
steps, and self-diffusion estimators (Einstein and Green-Kubo)."""
