"""Compare tape gradients with central finite differences for each layer."""
import numpy as np

from rffs.gradcheck import gradcheck, project
from rffs.graph import build_fusion_graphs, sparse_knn
from rffs.layers import DAGFusionConfig, DAGFusionParams, DGConvLayer, dagfusion_forward, dgconv_forward
from rffs.tensor import LinearParams, Tensor

rng = np.random.default_rng(0)
pts = rng.normal(size=(32, 3))
x = Tensor(rng.normal(size=(32, 3)), requires_grad=True, dtype=np.float64)

conv = DGConvLayer(LinearParams.init(6, 4, rng, "conv", np.float64))
conv.edge_map.bias.data += 0.1 * rng.normal(size=4)
graph = sparse_knn(pts, pts, 4, 2, 2)
err = gradcheck(lambda: project(dgconv_forward(x, graph, conv)), [x, *conv.parameters()], 1e-6)
print("dgconv   relative errors:", ["%.1e" % e for e in err])

cfg = DAGFusionConfig((1, 2), branch_channels=3, branch_out_channels=4, out_channels=5)
params = DAGFusionParams.init(3, cfg, rng, k=4, step=2, dtype=np.float64)
for p in params.parameters():
    p.data += 0.1 * rng.normal(size=p.shape)
graphs = build_fusion_graphs(pts, 4, 2, (1, 2))
err = gradcheck(lambda: project(dagfusion_forward(x, graphs, params, cfg)), [x, *params.parameters()], 1e-6)
print("fusion   worst relative error: %.1e" % max(err))
