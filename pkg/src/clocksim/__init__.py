"""Classical emulation of time-dependent Hamiltonian simulation via a discrete clock.

The time dependence is moved into a clock register, the resulting
time-independent generator is split into a diagonal part D and a data part B
in the clock Fourier basis, and exp(-i(D+B)t) is approximated by a truncated
Duhamel series evaluated with nested Gauss-Legendre quadrature.
"""

__version__ = "0.1.0"
