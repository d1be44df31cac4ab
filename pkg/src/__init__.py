"""
Semi-supervised semantic segmentation framework.
"""
