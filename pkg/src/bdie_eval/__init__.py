"""Evaluation toolkit for business document information extraction."""

from .alignment import AlignmentResult, align_rows, bipartite_match
from .backcalc import BackcalcResult, Partition, backcalc_kie, partition_line_items, tighten_bounds
from .core import (
    BBox,
    Cell,
    KieExtraction,
    LineItem,
    LineItemTable,
    OcrDocument,
    OcrPage,
    OcrWord,
    normalize_text,
    parse_extraction,
    parse_ocr_document,
)
from .metrics import GlirmReport, KieReport, glirm, ics, kie_f1
from .promptkit import apply_dummy_key_workaround, build_layout_prompt, lint_schema, strip_dummy_key
from .retrieval import RetrievalIndex, WaveletHash, manhattan_distance, retrieve_nearest, wavelet_hash
from .similarity import BBoxIoU, ExactMatch, NormalizedEdit, cell_count, eval_similarity, row_score

__version__ = "0.1.0"
