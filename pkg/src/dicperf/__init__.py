"""Digital image correlation engine with a benchmark harness."""

from .correlation import (CorrelationMemo, DegenerateSubsetError, SubsetStats,
                          WindowOutOfRangeError, subset_stats, zncc, zncc_memo)
from .image_core import (GrayImage, GroundTruth, ImageError, SpeckleParams, SubsetSpec,
                         TexturelessPatternError, WarpOutOfBoundsError, grid_subsets,
                         load_image, load_sequence, save_pgm, synth_sequence,
                         synth_speckle, synth_warped_pair)
from .integer_search import (IntegerResult, SearchConfig, bfs_search, mpso_search,
                             pso_search)
from .pipeline import DisplacementField, PoiRecord, RunConfig, analyze_pair, analyze_sequence
from .subpixel_refine import (DriftError, RefineConfig, SubpixelResult, WarpParams,
                              icgn_precompute, interp_bilinear, refine_icgn, refine_nr)

__version__ = "0.1.0"
