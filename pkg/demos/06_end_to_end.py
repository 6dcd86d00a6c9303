"""A miniature version of the whole workflow in one process.

Pretext training on a tiny cohort, weight transfer, two-stage fine-tuning
and patient-level majority voting. Everything is scaled down to run in
a couple of minutes; the command-line tool runs the same steps at desk scale.

Run: python demos/06_end_to_end.py
"""

import tempfile

from pyramidssl.downstream import DownstreamConfig, tile_rois, tile_test_patients
from pyramidssl.evaluation import evaluate_patients, mean_class_accuracy
from pyramidssl.model import EncoderSpec, SiameseNet, transfer_encoder
from pyramidssl.pretext import SamplerConfig, build_dataset, read_dataset
from pyramidssl.synth import CohortConfig, generate_cohort
from pyramidssl.train import DownstreamSchedule, PretextSchedule, train_downstream, train_pretext

work = tempfile.mkdtemp(prefix="e2e-")
cohort = generate_cohort(CohortConfig(num_classes=2, train_per_class=5, test_per_class=2,
                                      base_size=64, roi_size=256), f"{work}/cohort", seed=0)
spec = EncoderSpec([(8, 1), (16, 1), (32, 1)])

build_dataset(cohort, SamplerConfig(patch_size=32, input_size=32, seed=0), 6000, f"{work}/data")
meta, train, val = read_dataset(f"{work}/data")
siamese = SiameseNet(spec, "location", meta["sampler"]["n"], hidden=64, seed=0)
result = train_pretext(siamese, train, val, PretextSchedule(lr0=1e-3, max_epochs=5), seed=0,
                       out=f"{work}/pretext")
print(f"pretext: best validation accuracy {result.best_val_acc:.3f} (chance 0.0625)")

tiling = DownstreamConfig(tile=32, input_size=32)
patches = tile_rois(cohort, tiling, seed=0)
tr, va = patches.part("train"), patches.part("val")
clf = transfer_encoder(f"{work}/pretext/checkpoint", num_classes=2, spec=spec, seed=0)
result = train_downstream(clf, tr.images, tr.labels, va.images, va.labels,
                 DownstreamSchedule(stage1=[[1, 1e-3]], epochs=10, peak_lr=1e-3, batch=16), seed=0)

preds, cm = evaluate_patients(clf, tile_test_patients(cohort, tiling))
for p in preds:
    print(f"patient {p.patient_id}: true {p.true} predicted {p.final} votes {p.votes.tolist()}")
print("confusion matrix (rows true):", cm.tolist())
print(f"mean class accuracy {mean_class_accuracy(cm):.3f}")
