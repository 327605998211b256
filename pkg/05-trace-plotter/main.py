import os, sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils import Config
from platoon.cli import main

TRACE_DIR = Config.get_config()["trace_dir"]

# Plot the traces named on the command line, or every CSV in the trace folder
traces = [arg for arg in sys.argv[1:] if arg.endswith(".csv")]
options = [arg for arg in sys.argv[1:] if not arg.endswith(".csv")]
if not traces:
    if not os.path.isdir(TRACE_DIR):
        print(f"⚠️ No trace folder at {TRACE_DIR}; run 02-maneuver-planner or 03-mpc-controller first.")
        sys.exit(2)
    traces = sorted(
        os.path.join(TRACE_DIR, filename) for filename in os.listdir(TRACE_DIR) if filename.endswith(".csv")
    )

exit_code = 0
for trace in traces:
    code = main(["plot", trace] + options)
    if code != 0:
        print(f"⚠️ Skipped {trace}")
        exit_code = code

print(f"\n✅ Plotted {len(traces)} trace(s)")
sys.exit(exit_code)
