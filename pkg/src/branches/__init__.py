"""
Training branches: s4GAN segmentation and Multi-Label Mean Teacher classification.
"""
