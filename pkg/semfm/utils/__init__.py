"""
Utility modules for the SemFM package (logging setup, activity log)
"""
