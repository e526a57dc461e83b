"""
otmap Tests - Package Init
"""
