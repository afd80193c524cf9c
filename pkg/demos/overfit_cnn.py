"""Fit the reward CNN on 50 mined windows of one synthetic room."""

from eyeparse import rewardnet as rn
from eyeparse.numcore import RngState
from eyeparse.pipeline.synth import generate_synthetic_scene, scene_grid

scene = generate_synthetic_scene(seed=1)
grid = scene_grid(scene.cloud, scene.spec.room, 0.1, scene.instances >= 0)
xs, ys, _ = rn.make_training_set(grid, scene.object_boxes(0.1), 3, 50, RngState(0))
net = rn.RewardNet(seed=0)
rn.train_reward_net(net, xs, ys, 40, 0.05, RngState(1),
                    log=lambda e, loss, acc: print(f"epoch {e:3d} loss {loss:.4f} acc {acc:.3f}"))
print("final accuracy", rn.accuracy(net, xs, ys))
