"""Single-shot plotting-script runner used by the render supervisor.

The worker applies a canonical non-interactive render configuration,
executes one candidate script, and writes the resulting figure to the
output path supplied on the command line.  All results are encoded in the
exit code:

    0   success (output PNG written)
    10  script syntax error
    12  script produced no figure
    11  script raised at runtime

Timeouts and memory caps are enforced externally by the supervisor.
"""

from .runner import EXIT_NO_FIGURE, EXIT_OK, EXIT_RUNTIME_ERROR, EXIT_SYNTAX_ERROR, main

__all__ = ["main", "EXIT_OK", "EXIT_SYNTAX_ERROR", "EXIT_RUNTIME_ERROR", "EXIT_NO_FIGURE"]
__version__ = "0.1.0"
