"""OCL subset: parsing, evaluation and invariant checking."""
from .ast import OclType
from .evaluator import NULL, OclEvaluationError, evaluate
from .parser import OclError, OclSyntaxError, OclTypeError, parse_ocl, tokenize
from .validator import (
    Invariant,
    InvariantError,
    Validator,
    Violation,
    ViolationReport,
    check_instance,
    collect_invariants,
)

__all__ = [
    "NULL",
    "Invariant",
    "InvariantError",
    "OclError",
    "OclEvaluationError",
    "OclSyntaxError",
    "OclType",
    "OclTypeError",
    "Validator",
    "Violation",
    "ViolationReport",
    "check_instance",
    "collect_invariants",
    "evaluate",
    "parse_ocl",
    "tokenize",
]
