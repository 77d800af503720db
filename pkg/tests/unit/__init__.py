"""delaynet unit tests"""
