"""Delaynet Services Package"""
