"""
Test package for the crack ensemble pipeline.
"""
