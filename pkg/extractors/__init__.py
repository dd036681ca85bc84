"""
Feature extractors for SALF-MOS

Cepstral extractors compute MFCC/LFCC from audio; feature-file extractors
ingest SALF-F1 files produced by external SSL models.
"""
