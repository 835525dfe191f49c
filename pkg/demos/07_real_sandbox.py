"""
The real render sandbox
=======================

Everything in the other demos runs against the in-process mock sandbox.
This one drives the actual worker subprocess (install the worker/ package
first): matplotlib scripts execute in isolation with wall-clock and memory
limits, timeouts kill the whole process group, and a fixed render
configuration makes repeated renders byte-identical.
"""

from chartrl.sandbox import ExecutionLimits, SubprocessSandbox, resolve_worker_command

if resolve_worker_command() is None:
    raise SystemExit("render worker not installed -- run: pip install -e worker/")

sandbox = SubprocessSandbox()

scripts = {
    "sine plot": (
        "import numpy as np\nimport matplotlib.pyplot as plt\n"
        "x = np.linspace(0, 6.28, 100)\nplt.plot(x, np.sin(x))\nplt.savefig('sine.png')\n"
    ),
    "show-only script": "import matplotlib.pyplot as plt\nplt.plot([1, 2, 3])\nplt.show()\n",
    "syntax error": "def broken(:\n    pass\n",
    "runtime crash": "raise ValueError('no data')\n",
    "draws nothing": "total = sum(range(10))\n",
    "infinite loop": "while True:\n    pass\n",
}

for name, code in scripts.items():
    limits = ExecutionLimits(wall_clock=3.0 if "loop" in name else 30.0)
    outcome = sandbox.execute_script(code, limits)
    size = f"{len(outcome.image)} bytes" if outcome.image else "-"
    print(f"{name:<18} -> {outcome.status.value:<14} ({outcome.duration:.2f}s, image: {size})")

# Determinism: the same script renders to the same bytes.
code = scripts["sine plot"]
first = sandbox.execute_script(code, ExecutionLimits())
second = sandbox.execute_script(code, ExecutionLimits())
print(f"\ntwo renders byte-identical: {first.image == second.image}")
