"""Tests for the exitctrl package"""
