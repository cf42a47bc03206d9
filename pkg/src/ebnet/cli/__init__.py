from .bench import BenchCase, BenchResult, parse_geometry, run_bench
from .export import ExportSummary, export_checkpoint, export_model, is_exported, load_exported
from .main import EXIT_DATA, EXIT_FAILURE, EXIT_INFEASIBLE, EXIT_OK, EXIT_USAGE, build_parser, main

__all__ = [
    "BenchCase",
    "BenchResult",
    "parse_geometry",
    "run_bench",
    "ExportSummary",
    "export_checkpoint",
    "export_model",
    "is_exported",
    "load_exported",
    "EXIT_DATA",
    "EXIT_FAILURE",
    "EXIT_INFEASIBLE",
    "EXIT_OK",
    "EXIT_USAGE",
    "build_parser",
    "main",
]
