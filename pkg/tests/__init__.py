"""Testing library"""
