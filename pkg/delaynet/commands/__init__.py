"""Delaynet CLI Commands Package"""
