"""Every layer carries a hand-written backward pass. Central differences in
float64 check each one, and a deliberately broken gradient is caught."""
import numpy as np

from mtscyclegan.diffcore import LSTM, Conv1D, Dense, check_layer
from mtscyclegan.nets import GeneratorConfig, build_generator, check_network
from mtscyclegan.synthgen import WindowSpec

rng = np.random.default_rng(0)
x = rng.normal(size=(2, 8, 3))

for layer in (Dense("dense", 3, 4, "linear", rng, np.float64),
              Conv1D("conv1d", 3, 4, 3, "linear", rng, np.float64),
              LSTM("lstm", 3, 4, rng, np.float64)):
    for p in layer.params.values():
        p[...] = rng.normal(0, 0.5, p.shape)
    rep = check_layer(layer, x)
    print(f"{layer.kind:7s} max rel err {rep.max_error:.2e}  passed={rep.passed}")

bad = check_layer(layer, x, corrupt="Wh")
print(f"lstm with sign-flipped dWh: failing={bad.failing}")

# a reduced generator: T=8, hidden=4
spec = WindowSpec(300, 2400, 4)
g = build_generator(GeneratorConfig(conv_filters=4, hidden=4), spec, 1, dtype=np.float64)
for p in g.params.values():
    p[...] = rng.normal(0, 0.3, p.shape)
rep = check_network(g, rng.normal(size=(2, 8, 4)))
print(f"generator: {len(rep.errors)} tensors, max rel err {rep.max_error:.2e}")
