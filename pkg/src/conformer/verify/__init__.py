"""Verification suites and naive reference implementations."""
