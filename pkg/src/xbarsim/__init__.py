"""Compiler, ISA, and simulator for a memristor-crossbar inference accelerator."""

__version__ = "0.1.0"
