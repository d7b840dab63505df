"""Discrete phase randomisation in a truncated Fock space.

Run:  python3 demos/fock_identities.py
"""
from mpqkd.fockcheck import sweep_D, verify_single_mode_decomposition, verify_two_mode_decomposition

# %% A D-slice phase-randomised coherent state splits into D pseudo-Fock states.
for D in (4, 8, 16):
    print(f"D={D:2d}: single-mode deviation {verify_single_mode_decomposition(0.5, D, 60).max_deviation:.1e}")
print(f"two-mode, D=8: deviation {verify_two_mode_decomposition(0.25, 8, 40).max_deviation:.1e}")

# %% The pseudo-Fock weights approach the Poisson law as D grows.
for row in sweep_D(0.5, (1, 2, 4, 8, 16)):
    print(row)
