"""Chirped solid-effect DNP of an electron-nucleus spin-1/2 pair."""

__version__ = "0.1.0"
