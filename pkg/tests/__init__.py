"""delaynet tests"""
