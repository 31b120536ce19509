import json
import time

import numpy as np

from seqnrsfm import data as dm, runner

spec = dm.SyntheticSpec(frames=2048, points=15, rank=3,
                        rotation_mode="smooth", noise_sigma=0.01, seed=11,
                        waypoint_spacing=64, orbit_waypoints=6, coeff_period=1024)
d = dm.synth_sequence(spec)
train_d, test_d = dm.split_dataset(d)

steps = 8000
cfg = runner.TrainConfig(seq_len=32, total_steps=steps,
                         decay_steps=runner.default_decay_steps(steps),
                         seed=1)

init_cfg = runner.TrainConfig(seq_len=32, total_steps=0, seed=1)
init_ckpt, _ = runner.train(train_d, init_cfg)
rep0 = runner.evaluate(init_ckpt, test_d)
print("init e3d=%.4f nrmse=%.5f" % (rep0.mean("e3d"), rep0.extras["nrmse"]),
      flush=True)

t = time.time()
ckpt, log = runner.train(train_d, cfg)
print("trained %d steps in %.1f min" % (steps, (time.time() - t) / 60),
      flush=True)
for rec in log[::600]:
    print(json.dumps(rec), flush=True)
print(json.dumps(log[-1]), flush=True)

for split, ds in (("train", train_d), ("test", test_d)):
    rep = runner.evaluate(ckpt, ds)
    print("%s: e3d=%.4f mpjpe=%.4f stress=%.4f nrmse=%.5f flip_ratio=%.3f"
          % (split, rep.mean("e3d"), rep.mean("mpjpe"), rep.mean("stress"),
             rep.extras["nrmse"], rep.metrics["e3d"]["flip_ratio"]),
      flush=True)

rep = runner.evaluate(ckpt, test_d, mode="reverse")
print("reverse: e3d=%.4f" % rep.mean("e3d"), flush=True)
for s in range(3):
    rep = runner.evaluate(ckpt, test_d, mode="shuffle",
                          rng=np.random.default_rng(s))
    print("shuffle[%d]: e3d=%.4f" % (s, rep.mean("e3d")), flush=True)
rep = runner.evaluate(ckpt, test_d, mode="single_frame")
print("single_frame: e3d=%.4f" % rep.mean("e3d"), flush=True)
