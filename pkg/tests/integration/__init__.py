"""
Integration Tests Package.
"""