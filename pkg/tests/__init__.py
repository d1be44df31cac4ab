"""
Test package for the segmentation framework.
"""
