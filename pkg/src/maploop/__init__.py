"""maploop: interactive triage of building-footprint annotations.

Ranks map tiles whose annotations likely need correction, aligns footprint
groups to a probability raster with an MRF shift solver, feeds user (or
simulated) edits back into the ranking, and stops once a windowed correction
rate drops below threshold.
"""

__version__ = "0.1.0"
