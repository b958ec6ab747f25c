"""Smoke test for the vmprior extension module.

Build the module first, e.g. `maturin develop -m crates/python/pyproject.toml`,
or copy the compiled library next to this file as `vmprior.so`.
"""

import json
import math
import tempfile
from pathlib import Path

import vmprior


def check_rotations():
    m = vmprior.rot6d_to_matrix([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    assert m == [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    m = vmprior.rot6d_to_matrix([2.0, 0.1, -0.3, 0.4, 3.0, 0.2])
    r6 = vmprior.matrix_to_rot6d(m)
    back = vmprior.rot6d_to_matrix(r6)
    assert max(abs(a - b) for ra, rb in zip(m, back) for a, b in zip(ra, rb)) < 1e-12
    try:
        vmprior.rot6d_to_matrix([0.0] * 6)
    except ValueError:
        pass
    else:
        raise AssertionError("degenerate 6D input should raise")


def check_clips(tmp):
    clip = vmprior.MotionClip.generate("oscillate", seed=3)
    assert len(clip) == 16
    assert len(clip.pose[0]) == 24 and len(clip.shape) == 10
    path = tmp / "a.mclip.json"
    clip.save(str(path))
    assert vmprior.MotionClip.load(str(path)) == clip
    assert json.loads(clip.to_json())["version"] == 1

    joints = clip.joints()
    assert len(joints) == 16 and len(joints[0]) == 24
    assert vmprior.mpjpe(joints, joints) == 0.0
    assert vmprior.pa_mpjpe(joints, joints) == 0.0
    assert vmprior.accel_error(joints, joints) == 0.0
    report = vmprior.evaluate(clip, clip)
    assert all(v == 0.0 for v in report.values()), report

    other = vmprior.MotionClip.generate("keyframe_spline", seed=4)
    assert vmprior.apd([joints, joints]) == 0.0
    assert vmprior.apd([joints, other.joints()]) > 0.0

    video = clip.render(scale=0.9, center=[0.0, 0.1])
    assert len(video) == 16
    frame = video.frame(0)
    assert len(frame) == 64 and all(0.0 <= v <= 1.0 for row in frame for v in row)
    assert max(v for row in frame for v in row) > 0.0
    video.save(str(tmp / "video"))
    assert len(vmprior.VideoClip.load(str(tmp / "video"))) == 16
    return clip, other


def check_prior(tmp, clip, other):
    prior = vmprior.MotionPrior([clip, other], latent_dim=16, n_layers=1, n_heads=2, ff_dim=16, seed=1)
    mu, log_var = prior.encode(clip)
    assert len(mu) == 16 and len(log_var) == 16
    decoded = prior.decode(mu)
    assert len(decoded) == 16

    steps = prior.interpolate(clip, other, steps=3)
    assert len(steps) == 3
    assert steps[0] == prior.decode(prior.encode(clip)[0])

    noisy = prior.add_noise(clip, std=2.0, seed=0)
    assert noisy != clip
    assert len(prior.rectify(noisy)) == 16

    report = prior.synthesize(n=4, sigma=1.0, seed=2)
    assert report["n"] == 4 and math.isfinite(report["apd"])
    assert prior.synthesize(n=2, seed=2, same_seed=True)["apd"] == 0.0

    path = tmp / "prior.ckpt"
    prior.save(str(path))
    loaded = vmprior.MotionPrior.load(str(path))
    assert loaded.generator_digest() == prior.generator_digest()
    assert loaded.decode(mu) == decoded


def check_training(clip, other):
    config = json.dumps({
        "epochs": 2,
        "batch_size": 2,
        "deterministic": True,
        "prior": {"latent_dim": 16, "n_layers": 1, "n_heads": 2, "ff_dim": 16, "mapping_depth": 1},
    })
    prior, report = vmprior.train([clip, other], config)
    assert report["steps"] == 2
    assert len(report["epochs"]) == 2
    assert "wall_clock_s" not in report
    assert prior.latent_dim == 16


def main():
    check_rotations()
    with tempfile.TemporaryDirectory() as d:
        tmp = Path(d)
        clip, other = check_clips(tmp)
        check_prior(tmp, clip, other)
        check_training(clip, other)
    print("vmprior smoke test passed")


if __name__ == "__main__":
    main()
