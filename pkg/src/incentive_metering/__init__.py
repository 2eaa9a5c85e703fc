"""Privacy-preserving incentive programs for smart metering.

Meters enroll anonymously in utility incentive programs, report perturbed
readings under unlinkable pseudonyms through a relaying overlay, and later
redeem blind-signed reward tokens.
"""

from .errors import MeteringError
from .programs import DEFAULT_CATALOG, Program, ProgramSpec, Purpose, compute_reward, generate_program_list

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CATALOG",
    "MeteringError",
    "Program",
    "ProgramSpec",
    "Purpose",
    "compute_reward",
    "generate_program_list",
    "__version__",
]
