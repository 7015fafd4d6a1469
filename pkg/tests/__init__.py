"""Tests for AFT Sieve."""
