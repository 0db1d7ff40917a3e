"""Short training run on a reduced dataset, then translation of held-out
windows and parameter recovery. A few epochs only show the trend; the
full reproduction lives in 04_reproduction.py."""
import sys
import tempfile

from mtscyclegan.config import config_from_dict
from mtscyclegan.nets import translate
from mtscyclegan.paramrec import build_report, recover_windows
from mtscyclegan.synthgen import generate_dataset
from mtscyclegan.training import fit

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
cfg = config_from_dict({"n_windows": 128, "n_eval_windows": 64, "train": {"epochs": epochs}}, seed=0)
spec = cfg.spec

source = generate_dataset(cfg.source, spec, cfg.n_windows)
target = generate_dataset(cfg.target, spec, cfg.n_windows)
src_eval = generate_dataset(cfg.eval_params("source"), spec, cfg.n_eval_windows)
tgt_eval = generate_dataset(cfg.eval_params("target"), spec, cfg.n_eval_windows)

out = tempfile.mkdtemp(prefix="mtscyclegan-")
res = fit(source, target, cfg.train, cfg.generator, cfg.discriminator, out_dir=out,
          heldout=(src_eval, tgt_eval),
          progress=lambda r: print(f"epoch {r['epoch']}: D_t {r['d_t']:.3f}  D_s {r['d_s']:.3f}  "
                                   f"G_st {r['g_st']['total']:.3f}  held-out cycle {r['heldout_cycle']:.3f}"))
m = res.models
print("checkpoint:", res.last_checkpoint)

s2t = translate(m.g_st, list(src_eval.windows), "source_to_target", m.stats["source"], m.stats["target"])
t2s = translate(m.g_ts, list(tgt_eval.windows), "target_to_source", m.stats["target"], m.stats["source"])
report = build_report({"source_to_target": (recover_windows(s2t, spec), cfg.target),
                       "target_to_source": (recover_windows(t2s, spec), cfg.source)},
                      spec, min_windows=cfg.n_eval_windows)
print(report.table())
