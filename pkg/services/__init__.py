"""Crack detection, refinement and measurement services"""
