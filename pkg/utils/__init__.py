"""Configuration, errors and image file helpers"""
