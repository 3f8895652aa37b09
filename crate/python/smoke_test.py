"""Smoke test for the orthoplane_py extension module."""

import json
import math
import os
import tempfile

import orthoplane_py as op

W, H, B = 64, 24, 0.54

k = op.Intrinsics.kitti(W, H)
bank = op.PlaneBank.uniform(k, B, n_vertical=12, n_ground=4)
assert len(bank) == 16
assert bank.kinds().count("ground") == 4
for p in bank.planes():
    assert abs(sum(c * c for c in p.normal) - 1.0) < 1e-12

scene = op.Scene.random(bank, k, B, seed=3)
left, depth_gt = scene.render("left")
right, _ = scene.render("right")
field = scene.ideal_field(bank)
assert (field.width, field.height, field.planes) == (W, H, 16)

depth, valid = op.compose_depth(field, bank, k)
m = op.depth_metrics(depth, depth_gt, valid)
print(m)
assert m.abs_rel < 0.05 and m.count > 0

assert op.mmp(field, bank, k) > 0.9

syn, syn_valid = op.synthesize_right(field, left, bank, k, B)
err = [abs(a - b) for a, b, v in zip(syn.tolist(), right.tolist(), [v for v in syn_valid for _ in range(syn.channels)]) if v]
assert sum(err) / len(err) < 0.05
print("synthesis mean abs error", sum(err) / len(err))

rl, lr, r = op.occlusion_masks(field, bank, k, B)
assert all(0.0 <= v <= 1.0 for v in rl.tolist() + lr.tolist() + r.tolist())

disp = op.Map(W, H, 1, [k.fx * B / d for d in depth.tolist()])
label = op.distill_label(disp, disp, rl, lr)
assert max(abs(a - b) for a, b in zip(label.tolist(), disp.tolist())) < 1e-9

loss, gl, gs = op.mll_pixel([0.0, 1.0], [0.1, 0.2], [0.05, 0.3])
h = 1e-6
lp, _, _ = op.mll_pixel([h, 1.0], [0.1, 0.2], [0.05, 0.3])
lm, _, _ = op.mll_pixel([-h, 1.0], [0.1, 0.2], [0.05, 0.3])
assert math.isclose(gl[0], (lp - lm) / (2 * h), rel_tol=1e-5)

rc = op.compute_rc(k, 1.5, k.cx, k.cy)
p = bank.planes()[0]
q = op.rectify_plane(p, rc)
assert abs(sum(c * c for c in q.normal) - 1.0) < 1e-12
hm = op.homography(p, [[1, 0, 0], [0, 1, 0], [0, 0, 1]], [-B, 0, 0], k)
assert len(hm) == 3

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "d.pfm")
    op.write_pfm(path, depth_gt)
    back = op.read_pfm(path)
    assert max(abs(a - b) / b for a, b in zip(back.tolist(), depth_gt.tolist())) < 1e-6
    field.save(os.path.join(tmp, "field"))
    assert op.MixtureField.load(os.path.join(tmp, "field")).planes == 16
    cfg = os.path.join(tmp, "cfg.json")
    with open(cfg, "w") as f:
        json.dump({"planes": {"n_vertical": 10}}, f)
    assert json.loads(op.load_run_config(cfg))["planes"]["n_vertical"] == 10
    with open(cfg, "w") as f:
        json.dump({"planes": {"n_vert": 10}}, f)
    try:
        op.load_run_config(cfg)
    except ValueError as e:
        assert "planes.n_vert" in str(e)
    else:
        raise AssertionError("unknown key accepted")

print("smoke test ok")
