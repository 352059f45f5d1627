"""eyedx: desk-scale report-to-diagnosis pipeline.

A small decoder-only language model (numpy, hand-written backward passes)
fine-tuned with low-rank adapters on ophthalmic examination reports, plus
int4 weight quantization, nucleus sampling, and ROUGE evaluation.
"""

from .errors import DataError, EyedxError, NumericError

__version__ = "0.1.0"

__all__ = ["DataError", "EyedxError", "NumericError", "__version__"]
