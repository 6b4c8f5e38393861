"""Planar push simulation, training and evaluation core"""
