"""
Pipeline Domain

Orchestrates ingest, multispectral normal recovery, fusion and
registration over a keyframe bundle, and evaluates the results against
ground truth.
"""
