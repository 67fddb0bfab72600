"""Toolchain for temporally coded spiking networks on shift-based hardware.

Train small networks with a conversion-aware activation schedule, fold
batch norm, quantize weights onto a logarithmic grid, and run the result
as an event-driven spiking network whose synaptic arithmetic is a table
lookup plus shift.  An accompanying architecture model turns execution
traces into cycle, memory-traffic, and energy estimates.
"""

__version__ = "0.1.0"
