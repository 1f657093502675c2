"""
Dense labeling of a synthetic scene
===================================

Generate a three-class multi-look scene, train a quarter-width network on
5% of the labels, then label every pixel and score the result.
"""

from fractions import Fraction

import numpy as np

from cvfcn import data as D
from cvfcn import metrics as M
from cvfcn import net as N
from cvfcn.train import TrainConfig, fit

#%%
# Each class is a zero-mean Gaussian with its own coherency matrix,
# averaged over 9 looks.

scene = D.synth_scene(D.demo_scene_spec(size=128, looks=9, seed=1))
print("cube", scene.cube.shape, "classes", np.bincount(scene.labels.ravel())[1:])

#%%
# Keep a random 5% of each class for training.

train_labels = D.sample_labels(scene.labels, 0.05, seed=0)
print("training pixels per class", np.bincount(train_labels.ravel())[1:])

#%%
# A few epochs on 64x64 patches.

cfg = TrainConfig(epochs=6, batch_size=8, lr=1e-3, window=64, stride=32,
                  width_scale=Fraction(1, 4), seed=0)
print("epoch train_loss val_loss val_oa")
result = fit(scene.cube, train_labels, scene.K, cfg,
             on_epoch=lambda r: print(f"{r.epoch:5d} {r.train_loss:10.4f} "
                                      f"{r.val_loss:8.4f} {r.val_oa:6.3f}"))

#%%
# Label the whole image and score only pixels the network never saw.

pred = N.predict_image(result.model, scene.cube)
c = M.confusion(pred, scene.labels, scene.K, eval_mask=train_labels == 0)
print(M.report_json(c))

#%%
# Save the map as an image.

D.write_ppm("synthetic_prediction.ppm", D.colorize(pred, scene.K))
