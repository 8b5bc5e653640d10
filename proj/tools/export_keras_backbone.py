#!/usr/bin/env python3
"""Export a tf.keras.applications backbone (include_top=False) to the .bbn
container read by the C++ graph runtime.

The container is: 8-byte magic "MPXNET01", little-endian u64 header length,
UTF-8 JSON header, then the raw tensor payload. Offsets in the header are byte
offsets into the payload.

Usage:
  export_keras_backbone.py --backbone MobileNetV3Small --out mnv3s.bbn \
      [--weights imagenet|none] [--seed 7] [--reference mnv3s.ref]
"""
import argparse
import json
import os
import struct
import sys

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "3")

import numpy as np  # noqa: E402

BACKBONES = {
    # name: (constructor, input size, value range)
    "VGG16": ("VGG16", 224, "caffe"),
    "InceptionResNetV2": ("InceptionResNetV2", 299, "symmetric"),
    "NASNetMobile": ("NASNetMobile", 224, "symmetric"),
    "MobileNetV3Small": ("MobileNetV3Small", 224, "raw255"),
    "MobileNetV3Large": ("MobileNetV3Large", 224, "raw255"),
}

CAFFE_MEAN_BGR = np.array([103.939, 116.779, 123.68], dtype=np.float32)


def normalize(img, value_range):
    if value_range == "raw255":
        return img
    if value_range == "symmetric":
        return img / np.float32(127.5) - np.float32(1.0)
    if value_range == "caffe":
        return img[..., ::-1] - CAFFE_MEAN_BGR
    raise ValueError(value_range)


def calibration_batch(rng, size, value_range, n=8):
    # Smooth random images: 8x8 noise upsampled to full size.
    import tensorflow as tf
    coarse = rng.uniform(0.0, 255.0, size=(n, 8, 8, 3)).astype(np.float32)
    imgs = tf.image.resize(coarse, (size, size), method="bilinear").numpy()
    return np.stack([normalize(im, value_range) for im in imgs]).astype(np.float32)


def calibrate_batch_norm(model, batch):
    """Set BN moving statistics to the statistics of `batch` so randomly
    initialised backbones produce unit-scale activations."""
    import keras
    bns = [L for L in model.layers if isinstance(L, keras.layers.BatchNormalization)]
    if not bns:
        return 0
    for L in bns:
        L.momentum = 0.0
    model(batch, training=True)
    return len(bns)


def inbound_names(layer_cfg):
    names = []

    def walk(obj):
        if isinstance(obj, dict):
            if obj.get("class_name") == "__keras_tensor__":
                names.append(obj["config"]["keras_history"][0])
                return
            for v in obj.values():
                walk(v)
        elif isinstance(obj, (list, tuple)):
            for v in obj:
                walk(v)

    nodes = layer_cfg.get("inbound_nodes", [])
    if len(nodes) > 1:
        raise SystemExit(f"layer {layer_cfg['name']} is shared; not supported")
    for node in nodes:
        walk(node.get("args", []))
    return names


def pair(v):
    if isinstance(v, int):
        return [v, v]
    return [int(v[0]), int(v[1])]


def pad_pairs(v):
    if isinstance(v, int):
        return [v, v, v, v]
    if isinstance(v[0], int):
        return [v[0], v[0], v[1], v[1]]
    return [int(v[0][0]), int(v[0][1]), int(v[1][0]), int(v[1][1])]


def activation_name(a):
    if a is None:
        return "linear"
    if isinstance(a, dict):
        return a.get("config", {}).get("name", a.get("class_name", "linear"))
    return str(a)


def scalar_args(layer_cfg):
    consts = []
    for node in layer_cfg.get("inbound_nodes", []):
        for a in node.get("args", []):
            if isinstance(a, (int, float)) and not isinstance(a, bool):
                consts.append(float(a))
    return consts


def layer_entry(layer, cfg, payload):
    kind = type(layer).__name__
    c = layer.get_config()
    out = {"name": layer.name, "type": kind, "inputs": inbound_names(cfg), "config": {}, "weights": {}}
    conf = out["config"]
    weights = {}

    if str(cfg.get("module", "")).startswith("keras.src.ops"):
        # Raw tensor ops recorded in the functional graph (e.g. x + 3.0).
        consts = scalar_args(cfg)
        if kind not in ("Add", "Multiply"):
            raise SystemExit(f"{layer.name}: op {kind} unsupported")
        if consts:
            if len(consts) != 1 or len(out["inputs"]) != 1:
                raise SystemExit(f"{layer.name}: unsupported op arity")
            out["type"] = "ScalarAdd" if kind == "Add" else "ScalarMultiply"
            conf["value"] = consts[0]
        return out

    if kind == "InputLayer":
        shape = c.get("batch_shape") or c.get("batch_input_shape")
        conf["shape"] = [int(s) for s in shape[1:]]
    elif kind == "Conv2D":
        conf.update(filters=c["filters"], kernel=pair(c["kernel_size"]), strides=pair(c["strides"]),
                    padding=c["padding"], dilation=pair(c["dilation_rate"]), groups=c.get("groups", 1),
                    activation=activation_name(c["activation"]))
        w = layer.get_weights()
        weights["kernel"] = w[0]
        if c["use_bias"]:
            weights["bias"] = w[1]
    elif kind == "DepthwiseConv2D":
        conf.update(kernel=pair(c["kernel_size"]), strides=pair(c["strides"]), padding=c["padding"],
                    dilation=pair(c["dilation_rate"]), depth_multiplier=c["depth_multiplier"],
                    activation=activation_name(c["activation"]))
        w = layer.get_weights()
        weights["depthwise"] = w[0]
        if c["use_bias"]:
            weights["bias"] = w[1]
    elif kind == "SeparableConv2D":
        conf.update(filters=c["filters"], kernel=pair(c["kernel_size"]), strides=pair(c["strides"]),
                    padding=c["padding"], dilation=pair(c["dilation_rate"]),
                    depth_multiplier=c["depth_multiplier"], activation=activation_name(c["activation"]))
        w = layer.get_weights()
        weights["depthwise"] = w[0]
        weights["pointwise"] = w[1]
        if c["use_bias"]:
            weights["bias"] = w[2]
    elif kind == "BatchNormalization":
        axis = c["axis"]
        if isinstance(axis, (list, tuple)):
            axis = axis[0]
        if axis not in (-1, 3):
            raise SystemExit(f"{layer.name}: BatchNormalization axis {axis} unsupported")
        conf["epsilon"] = float(c["epsilon"])
        vals = layer.get_weights()
        i = 0
        ch = vals[-1].shape[0]
        gamma = np.ones(ch, np.float32)
        beta = np.zeros(ch, np.float32)
        if c["scale"]:
            gamma = vals[i]; i += 1
        if c["center"]:
            beta = vals[i]; i += 1
        weights["gamma"] = gamma
        weights["beta"] = beta
        weights["mean"] = vals[i]
        weights["variance"] = vals[i + 1]
    elif kind == "Activation":
        conf["activation"] = activation_name(c["activation"])
    elif kind == "ReLU":
        conf.update(max_value=None if c.get("max_value") is None else float(c["max_value"]),
                    negative_slope=float(c.get("negative_slope", 0.0)), threshold=float(c.get("threshold", 0.0)))
    elif kind in ("Add", "Multiply"):
        pass
    elif kind == "Concatenate":
        if c["axis"] not in (-1, 3):
            raise SystemExit(f"{layer.name}: concat axis {c['axis']} unsupported")
    elif kind == "GlobalAveragePooling2D":
        conf["keepdims"] = bool(c.get("keepdims", False))
    elif kind in ("MaxPooling2D", "AveragePooling2D"):
        conf.update(pool=pair(c["pool_size"]), strides=pair(c["strides"] or c["pool_size"]), padding=c["padding"])
    elif kind == "ZeroPadding2D":
        conf["padding"] = pad_pairs(c["padding"])
    elif kind == "Cropping2D":
        conf["cropping"] = pad_pairs(c["cropping"])
    elif kind == "Rescaling":
        conf.update(scale=float(c["scale"]), offset=float(c["offset"]))
    elif kind == "CustomScaleLayer":
        conf["scale"] = float(c["scale"])
    else:
        raise SystemExit(f"{layer.name}: layer type {kind} unsupported")

    for key, arr in weights.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out["weights"][key] = {"shape": list(arr.shape), "offset": len(payload), "dtype": "f32"}
        payload.extend(arr.tobytes())
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--backbone", required=True, choices=sorted(BACKBONES))
    ap.add_argument("--out", required=True)
    ap.add_argument("--weights", default="none", choices=["none", "imagenet"])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--no-calibrate", action="store_true",
                    help="keep the initial batch-norm statistics of random weights")
    ap.add_argument("--reference", help="also write a forward-pass reference (<path>.json/.in.f32/.out.f32)")
    args = ap.parse_args()

    import keras
    import tensorflow as tf

    keras.utils.set_random_seed(args.seed)
    ctor_name, size, value_range = BACKBONES[args.backbone]
    ctor = getattr(tf.keras.applications, ctor_name)
    model = ctor(input_shape=(size, size, 3), include_top=False,
                 weights=None if args.weights == "none" else "imagenet")

    calibrated = 0
    if args.weights == "none" and not args.no_calibrate:
        calib = calibration_batch(np.random.default_rng(args.seed + 1), size, value_range)
        calibrated = calibrate_batch_norm(model, calib)

    cfg = model.get_config()
    ops = {op.name: op for op in model.operations}
    payload = bytearray()
    layers = [layer_entry(ops[L["name"]], L, payload) for L in cfg["layers"]]

    outputs = cfg["output_layers"]
    if isinstance(outputs[0], str):
        outputs = [outputs]
    header = {
        "format": 1,
        "backbone": args.backbone,
        "weights": args.weights,
        "seed": args.seed,
        "bn_calibrated": bool(calibrated),
        "input_shape": [size, size, 3],
        "value_range": value_range,
        "output": outputs[0][0],
        "feature_dim": int(model.output_shape[-1]),
        "layers": layers,
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(args.out, "wb") as f:
        f.write(b"MPXNET01")
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(payload)

    if args.reference:
        x = calibration_batch(np.random.default_rng(args.seed), size, value_range, n=1)[0]
        y = model(x[None], training=False).numpy()[0].astype("<f4")
        x.astype("<f4").tofile(args.reference + ".in.f32")
        y.tofile(args.reference + ".out.f32")
        with open(args.reference + ".json", "w") as f:
            json.dump({"input_shape": list(x.shape), "output_shape": list(y.shape)}, f)

    print(f"{args.backbone}: {len(layers)} layers, {len(payload)} weight bytes -> {args.out}")


if __name__ == "__main__":
    sys.exit(main())
