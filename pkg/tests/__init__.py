"""
Test suite for deepo_lqt library
"""
