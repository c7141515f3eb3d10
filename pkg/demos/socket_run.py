"""Run the same experiment in-process and over local TCP stations.

    python3 demos/socket_run.py [N]
"""

import sys

from bellharness import RunConfig, replay_verify, run_in_process
from bellharness.net import Referee, launch_local_stations

if __name__ == "__main__":
    N = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    cfg = RunConfig(N=N, alice="halfplane", setting_mode="uniform")
    ref = Referee(cfg)
    print(f"referee on {ref.address[0]}:{ref.address[1]}, stations alice, bob and a source")
    workers = launch_local_stations(ref.config, ref.address)
    net = ref.run()
    for w in workers:
        w.join()
    local = run_in_process(cfg)
    print(f"socket digest     {net.digest_hex}")
    print(f"in-process digest {local.digest_hex}")
    print(f"replay verifies: {bool(replay_verify(net))}")
    trial = next(m for m in ref.frames("alice", "send") if m["type"] == "TRIAL")
    print(f"a TRIAL frame as Alice sees it: {trial}")
