"""Short runs of the four ablation configurations on the same synthetic block.

Desk-scale runs this short say nothing about which configuration is better;
the point is that every variant trains and logs the same metrics.
"""
from rffs.data import SceneSpec, synth_scene
from rffs.model import ArchConfig
from rffs.training import TrainConfig, train

cloud, classes = synth_scene(SceneSpec(seed=0))
single = (1.0, 0.0, 0.0, 0.0)
variants = {
    "baseline": (ArchConfig(dense=False, dilations=(1,)), single),
    "+multi-level loss": (ArchConfig(dense=False, dilations=(1,)), None),
    "+fusion, no dense links": (ArchConfig(dense=False), None),
    "+fusion, dense links": (ArchConfig(), None),
}
print(f"{'variant':26s} {'loss':>7s} {'OA':>6s} {'mF1':>6s} {'mIoU':>6s}")
for name, (arch, weights) in variants.items():
    cfg = TrainConfig(epochs=10, batch_size=1, **({"loss_weights": weights} if weights else {}))
    rec = train(arch, cfg, [cloud]).history[-1]
    print(f"{name:26s} {rec['total_loss']:7.3f} {rec['oa']:6.3f} {rec['mf1']:6.3f} {rec['miou']:6.3f}")
