"""Run one untrusted plotting script and capture its figure.

The render configuration (Agg backend, fixed canvas, fixed DPI, fixed font)
is applied before the user script executes and cannot be observed
differently across runs, so rendering a fixed seeded script twice yields
byte-identical PNGs.  Network access is denied to the script.

Scripts normally save or show their figure themselves; both paths are
intercepted so the figure always lands at the supervisor's output path.
When a script only draws and exits, a save-on-exit hook captures the last
open figure.  When it saves several times, the last save wins.
"""

from __future__ import annotations

import argparse
import socket
import sys
import traceback
from pathlib import Path

EXIT_OK = 0
EXIT_SYNTAX_ERROR = 10
EXIT_RUNTIME_ERROR = 11
EXIT_NO_FIGURE = 12


def _deny_network() -> None:
    def _blocked(*args, **kwargs):
        raise OSError("network access is disabled inside the render worker")

    socket.socket = _blocked  # type: ignore[misc]
    socket.create_connection = _blocked  # type: ignore[misc]


def _configure_matplotlib(dpi: int, width: float, height: float):
    import matplotlib

    matplotlib.use("Agg", force=True)
    matplotlib.rcParams.update(
        {
            "figure.figsize": (width, height),
            "figure.dpi": dpi,
            "savefig.dpi": dpi,
            "font.family": "DejaVu Sans",
            "interactive": False,
        }
    )
    import matplotlib.pyplot as plt

    return plt


def _install_capture_hooks(plt, output_path: Path, state: dict) -> None:
    """Route every save/show through an extra PNG write to the output path."""
    from matplotlib.figure import Figure

    original_savefig = Figure.savefig

    def capture(figure) -> None:
        original_savefig(figure, output_path, format="png")
        state["saved"] = True

    def hooked_savefig(figure, *args, **kwargs):
        result = original_savefig(figure, *args, **kwargs)
        capture(figure)
        return result

    def hooked_show(*args, **kwargs):
        fignums = plt.get_fignums()
        if fignums:
            capture(plt.figure(fignums[-1]))

    Figure.savefig = hooked_savefig
    plt.show = hooked_show
    state["capture"] = capture


def run_script(script_path: Path, output_path: Path, dpi: int, width: float, height: float) -> int:
    try:
        source = script_path.read_text()
    except OSError as exc:
        print(f"cannot read script: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR

    try:
        code = compile(source, str(script_path), "exec")
    except SyntaxError:
        traceback.print_exc()
        return EXIT_SYNTAX_ERROR

    plt = _configure_matplotlib(dpi, width, height)
    state: dict = {"saved": False}
    _install_capture_hooks(plt, output_path, state)
    _deny_network()

    script_globals = {"__name__": "__main__", "__file__": str(script_path)}
    try:
        exec(code, script_globals)
    except SyntaxError:
        # exec of nested code (e.g. eval/exec inside the script) can still
        # raise SyntaxError at runtime; classify by origin.
        traceback.print_exc()
        return EXIT_SYNTAX_ERROR
    except BaseException:
        traceback.print_exc()
        return EXIT_RUNTIME_ERROR

    if not state["saved"]:
        fignums = plt.get_fignums()
        if fignums:
            state["capture"](plt.figure(fignums[-1]))

    if not state["saved"] or not output_path.exists():
        print("script produced no figure", file=sys.stderr)
        return EXIT_NO_FIGURE
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chart-render-worker",
        description="execute one plotting script and write its figure as PNG",
    )
    parser.add_argument("script", help="path to the plotting script")
    parser.add_argument("output", help="path for the output PNG")
    parser.add_argument("--dpi", type=int, default=100)
    parser.add_argument("--width", type=float, default=6.4)
    parser.add_argument("--height", type=float, default=4.8)
    args = parser.parse_args(argv)

    if args.dpi <= 0:
        parser.error("--dpi must be positive")
    return run_script(Path(args.script), Path(args.output), args.dpi, args.width, args.height)


def entrypoint() -> None:  # pragma: no cover - console script shim
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
