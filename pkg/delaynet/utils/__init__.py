"""Delaynet Utilities Package"""
