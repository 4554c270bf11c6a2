"""Inside the network: gradients, one training run, weights round trip.

Everything here runs in seconds: a reduced-width model on a handful of
synthetic patches, with a finite-difference spot check of the manual
backprop before training starts.
"""

import os
import tempfile

import numpy as np

from alschange import segnet, synthgen
from alschange import tensor_nn as nn
from alschange.patches import tile
from alschange.pipeline import model_inputs, rasterize_cloud


def make_patches(seed, n_scenes=3):
    out = []
    cfg_model = segnet.ModelConfig(encoder_widths=(4, 8, 16),
                                   bottleneck_width=32, patch_size=64)
    for i in range(n_scenes):
        cfg = synthgen.SceneConfig(extent=(32.0, 32.0), n_buildings=1,
                                   tree_count=2, seed=seed + i)
        pair = synthgen.generate_scene_pair(cfg, cell_size=0.5)
        for cloud, mask in ((pair.cloud_t1, pair.truth_mask_t1),
                            (pair.cloud_t2, pair.truth_mask_t2)):
            surf = rasterize_cloud(cloud, pair.spec, 3)
            inputs, _ = model_inputs(surf, cfg_model)
            for p in tile(inputs, mask.astype(np.float64), 64, 64):
                out.append((p.data, p.mask))
    return cfg_model, out


def main():
    cfg_model, data = make_patches(seed=11)
    print(f"dataset: {len(data)} patches of "
          f"{cfg_model.patch_size}x{cfg_model.patch_size}")

    model = segnet.build_model(cfg_model, dtype=np.float64)
    print(f"model: {model.param_count()} parameters "
          f"(formula check: {segnet.expected_param_count(cfg_model)})")

    # spot-check the manual backprop against central differences
    x, t = data[0]
    x = x[None]
    t = t[None, None]

    def loss_fn():
        p, _ = segnet.forward(model, x, mode="infer")
        return nn.bce_loss(p, t)[0]

    prob, tape = segnet.forward(model, x, mode="infer")
    _, grad = nn.bce_loss(prob, t)
    grads = segnet.backward(model, grad, tape)
    names = list(model.params)
    err = nn.grad_check(loss_fn, [model.params[k] for k in names],
                        [grads[k] for k in names], n_samples=60,
                        rng=np.random.default_rng(0))
    print(f"gradient check: max relative error {err:.2e}")

    hyper = nn.Hyperparams(epochs=10, batch_size=4)
    trained, history = segnet.train(
        model, data[:-2], data[-2:], hyper, seed=0,
        log=lambda st: print(f"  epoch {st.epoch}: train {st.train_loss:.4f} "
                             f"val {st.val_loss:.4f} IOU {st.val_iou:.3f}"))

    # the weights file stores float32 payloads, so compare at that precision
    path = os.path.join(tempfile.mkdtemp(), "tiny.alsw")
    segnet.save_weights(trained, path)
    again = segnet.load_weights(path)
    same = all(np.array_equal(trained.params[k].astype(np.float32),
                              again.params[k]) for k in trained.params)
    print(f"weights round trip ({os.path.getsize(path)} bytes): "
          f"{'bitwise identical at float32' if same else 'MISMATCH'}")


if __name__ == "__main__":
    main()
