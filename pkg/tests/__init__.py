"""Tests for CSDML."""
