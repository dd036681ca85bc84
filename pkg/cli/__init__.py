# Command-line entry points for SALF-MOS
