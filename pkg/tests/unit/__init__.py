"""
Unit Tests Package.
"""