"""Delaynet Schemas Package"""
