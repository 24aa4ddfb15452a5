"""Smoke test for the invcsi extension module.

Build and install first, e.g. `maturin develop --release` from crates/py,
then run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import invcsi


def check_tpm():
    p = invcsi.tpm(5.0, 2)
    for j in range(4):
        col = sum(p[i][j] for i in range(4))
        assert abs(col - 1.0) < 1e-12, col
    lossless = invcsi.tpm(math.inf, 3)
    assert all(lossless[i][i] == 1.0 for i in range(8))


def check_bits():
    assert invcsi.transmit_bits(5, math.inf, 3, seed=1) == 5
    got = [invcsi.transmit_bits(2, 0.0, 2, seed=s) for s in range(200)]
    assert len(set(got)) > 1


def check_mmd():
    z = [0.1 * k for k in range(8)]
    r = [math.sin(k) for k in range(24)]
    assert invcsi.mmd2_joint(z, r, z, r, 4) == 0.0
    shifted = [v + 3.0 for v in r]
    assert invcsi.mmd2_joint(z, r, z, shifted, 4) > 0.0
    assert abs(invcsi.imq_kernel([0.0], [1.0], 1.0) - 0.5) < 1e-15


def check_model():
    data = invcsi.Dataset.generate(16, seed=3)
    assert len(data) == 16 and data.shape == (4, 8, 16)
    assert len(data.sample(0)) == 4 * 8 * 16

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "d.csid")
        data.save(path)
        again = invcsi.Dataset.load(path)
        assert again.sample(5) == data.sample(5)

    model = invcsi.Model()
    assert model.latent_len == 32 and model.aux_len == 992
    counts = model.param_count()
    assert counts["decoder_exclusive"] == 0

    x = [math.cos(0.01 * k) for k in range(1024)]
    z, r = model.encode(x)
    back = model.decode(z, r)
    err = max(abs(a - b) for a, b in zip(back, x))
    assert err < 1e-10, err

    cfg = "epochs = 2\nbatch = 8\nseed = 4\n"
    trained, lines = invcsi.train(data, cfg)
    assert len(lines) == 2
    assert json.loads(lines[-1])["epoch"] == 2
    a = trained.evaluate(data, seed=9)
    b = trained.evaluate(data, seed=9)
    assert a == b and math.isfinite(a["nmse_db"])


if __name__ == "__main__":
    check_tpm()
    check_bits()
    check_mmd()
    check_model()
    print("smoke test passed")
