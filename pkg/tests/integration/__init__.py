"""delaynet integration tests"""
