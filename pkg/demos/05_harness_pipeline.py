"""The full experiment pipeline through the harness API, at toy scale.

Writes a config file, trains briefly, benchmarks the trained policy against
max-SLNR and weighted MMSE on a shared channel window, and times the
decision path.  The same steps are available from the command line:

    cbflab train <config>
    cbflab bench <config> --schemes=ddcbf,mslnr-ep,wmmse --checkpoint=...
    cbflab timing <config>

Run:  python demos/05_harness_pipeline.py
"""

import json
import tempfile
from pathlib import Path

from cbflab.harness import parse_config, run_benchmark, run_timing, run_train

CONFIG = """
# toy three-cell run (a few seconds)
num_cells = 3
users_per_cell = 2
array_rows = 2
array_cols = 4
noise_dbm = -55
channel_model = gauss-markov

hidden_sizes = 32,16
batch_size = 32
memory_capacity = 256
num_slots = 300
eval_window = 50
bench_slots = 20
bench_offset = 280
wmmse_max_iter = 100

seed = 12
out_dir = {out}
"""

with tempfile.TemporaryDirectory() as tmp:
    cfg_path = Path(tmp) / "toy.cfg"
    cfg_path.write_text(CONFIG.format(out=Path(tmp) / "run"))
    cfg = parse_config(cfg_path)

    summary = run_train(cfg)
    print("training summary:")
    print(json.dumps({k: v for k, v in summary.items() if k != "events"}, indent=2))

    bench = run_benchmark(
        cfg, schemes=("ddcbf", "mslnr-ep", "wmmse"), checkpoint=summary["checkpoint"]
    )
    print("benchmark means over the shared window (bits/s/Hz):")
    for scheme, stats in bench["results"].items():
        print(f"  {scheme:10s}: {stats['mean']:.2f}")

    timing = run_timing(cfg, repeats=5)
    print(f"decision path median: {timing['ddcbf-decision']['median_s'] * 1e3:.2f} ms; "
          f"one WMMSE run: {timing['wmmse']['median_s']:.3f} s; "
          f"speedup {timing['speedup_wmmse_over_decision']:.0f}x")
