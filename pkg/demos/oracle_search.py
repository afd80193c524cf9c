"""Search a one-table room with the true-IoU reward and print the lock."""

import sys

from eyeparse import dqn
from eyeparse.numcore import RngState
from eyeparse.pipeline.synth import ObjectSpec, SceneSpec, generate_synthetic_scene, scene_grid
from eyeparse.voxel import box_iou

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
spec = SceneSpec(room=(2.4, 2.4, 2.4), structure=False, density=80, margin=0.2,
                 objects=[ObjectSpec("table", (0.4, 0.4, 0.4), (0.9, 0.9, 0.9))])
scene = generate_synthetic_scene(spec, seed)
grid = scene_grid(scene.cloud, spec.room, 0.1)
target = scene.object_boxes(0.1)[0][1]

res = dqn.search_class(grid, dqn.QNet(seed=seed), dqn.SearchConfig(max_locks=1), RngState(seed),
                       reward=dqn.iou_reward(target))
print(f"target {target.lo} -> {target.hi}")
for lock in res.locks:
    print(f"lock   {lock.window.lo} -> {lock.window.hi}  IoU {box_iou(lock.window, target):.2f}")
print(f"steps {res.stats['steps']}  random walks {res.stats['random_walks']}  "
      f"winner replays {res.stats['winner_used']}")
