"""Clinical pathology report template, extractors and validation."""

from .corpus import (group_by_case, present_values, read_feature_file, read_reports,
                     write_feature_file, write_reports)
from .extractors import OfflineExtractor, RemoteExtractor, extract, self_verify
from .review import spot_check_export, spot_check_import
from .synthetic import SyntheticCase, synth_case, synth_corpus
from .schema import (ASPECT_ABBREV, DIMENSIONS, CprtSchema, ExtractedFeature, PathologyReport,
                     TemplateElement, check_features, load_schema, normalize_answer,
                     schema_from_dict)

__all__ = [
    "ASPECT_ABBREV", "DIMENSIONS", "CprtSchema", "ExtractedFeature", "OfflineExtractor",
    "PathologyReport", "RemoteExtractor", "TemplateElement", "check_features", "extract",
    "group_by_case", "load_schema", "normalize_answer", "present_values", "read_feature_file",
    "read_reports", "schema_from_dict", "self_verify", "spot_check_export", "spot_check_import",
    "SyntheticCase", "synth_case", "synth_corpus",
    "write_feature_file", "write_reports",
]
