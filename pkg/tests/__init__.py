"""Tests for taylorflow."""
