"""Checkpoint format, image files, config loading."""

import json
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgan.errors import ContractError, FormatError, ValidationError
from dgan.io import (
    Checkpoint,
    ConfigBundle,
    SampleConfig,
    checkpoint_from_params,
    image_read,
    image_write,
    load_checkpoint,
    load_params_into,
    save_checkpoint,
    to_uint8,
    write_grid,
)
from dgan.tensor import Tensor


def roundtrip(ckpt, tmp_path, name="ck.dgan"):
    path = os.path.join(str(tmp_path), name)
    save_checkpoint(ckpt, path)
    return load_checkpoint(path), path


# -- checkpoint round trips -------------------------------------------------


def test_checkpoint_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ck = Checkpoint(
        tensors={
            "a": rng.standard_normal((3, 4)),
            "b/w": rng.standard_normal((2, 2, 2)),
            "scalarish": np.array([1e-300]),
        }
    )
    back, _ = roundtrip(ck, tmp_path)
    assert set(back.tensors) == {"a", "b/w", "scalarish"}
    for k in ck.tensors:
        assert back.tensors[k].tobytes() == ck.tensors[k].tobytes()
        assert back.tensors[k].shape == ck.tensors[k].shape


def test_checkpoint_zero_dim_and_empty(tmp_path):
    ck = Checkpoint(tensors={"s": np.array(3.5), "e": np.zeros((0, 4))})
    back, _ = roundtrip(ck, tmp_path)
    assert back.tensors["s"].shape == ()
    assert back.tensors["s"] == 3.5
    assert back.tensors["e"].shape == (0, 4)


def test_checkpoint_no_tensors(tmp_path):
    back, _ = roundtrip(Checkpoint(tensors={}), tmp_path)
    assert back.tensors == {}


def test_checkpoint_meta_roundtrip(tmp_path):
    meta = {"kind": "gan", "step": 7, "nested": {"channels": [4, 8]}}
    ck = Checkpoint(tensors={"x": np.ones(2)}, meta=meta)
    back, _ = roundtrip(ck, tmp_path)
    assert back.meta == meta
    assert set(back.tensors) == {"x"}


def test_checkpoint_accepts_live_tensors(tmp_path):
    t = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ck = checkpoint_from_params({"w": t})
    t.data[0, 0] = 99.0  # snapshot must not alias the live tensor
    back, _ = roundtrip(ck, tmp_path)
    assert back.tensors["w"][0, 0] == 0.0


def test_reserved_name_rejected():
    with pytest.raises(ValidationError):
        Checkpoint(tensors={"__meta__/json": np.ones(1)})


@settings(max_examples=25, deadline=None)
@given(
    st.dictionaries(
        st.text(
            alphabet=st.characters(min_codepoint=33, max_codepoint=126),
            min_size=1,
            max_size=12,
        ),
        st.lists(st.integers(min_value=0, max_value=4), min_size=0, max_size=3),
        max_size=4,
    ),
    st.integers(0, 2**31),
)
def test_checkpoint_fuzz_roundtrip(shapes, seed):
    import tempfile

    rng = np.random.default_rng(seed)
    tensors = {
        name: rng.standard_normal(tuple(shape)) for name, shape in shapes.items()
        if name != "__meta__/json"
    }
    with tempfile.TemporaryDirectory() as d:
        back, _ = roundtrip(Checkpoint(tensors=tensors), d, "f.dgan")
    assert set(back.tensors) == set(tensors)
    for k in tensors:
        assert np.array_equal(back.tensors[k], tensors[k])


# -- malformed files --------------------------------------------------------


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.dgan"
    p.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(str(p))


def test_bad_version(tmp_path):
    p = tmp_path / "bad.dgan"
    p.write_bytes(b"DGAN" + struct.pack("<I", 99) + struct.pack("<I", 0))
    with pytest.raises(FormatError, match="version 99"):
        load_checkpoint(str(p))


def test_truncated_reports_offset(tmp_path):
    good = tmp_path / "good.dgan"
    save_checkpoint(Checkpoint(tensors={"w": np.ones((4, 4))}), str(good))
    blob = good.read_bytes()
    bad = tmp_path / "cut.dgan"
    bad.write_bytes(blob[:-10])
    with pytest.raises(FormatError, match="offset"):
        load_checkpoint(str(bad))


def test_trailing_bytes_rejected(tmp_path):
    good = tmp_path / "good.dgan"
    save_checkpoint(Checkpoint(tensors={"w": np.ones(3)}), str(good))
    bad = tmp_path / "pad.dgan"
    bad.write_bytes(good.read_bytes() + b"\x00\x01")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(str(bad))


def test_duplicate_names_rejected(tmp_path):
    # hand-build two tensors with the same name
    def entry(name, arr):
        nb = name.encode()
        out = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        return out + arr.astype("<f8").tobytes()

    arr = np.ones(2)
    blob = b"DGAN" + struct.pack("<I", 1) + struct.pack("<I", 2) + entry("w", arr) + entry("w", arr)
    p = tmp_path / "dup.dgan"
    p.write_bytes(blob)
    with pytest.raises(FormatError, match="duplicate"):
        load_checkpoint(str(p))


def test_missing_file():
    with pytest.raises(FormatError):
        load_checkpoint("/nonexistent/nowhere.dgan")


# -- loading into live parameters -------------------------------------------


def test_load_params_into_mutates_in_place():
    t = Tensor(np.zeros((2, 2)), requires_grad=True)
    ck = Checkpoint(tensors={"w": np.ones((2, 2))})
    load_params_into({"w": t}, ck)
    assert np.array_equal(t.numpy(), np.ones((2, 2)))
    assert t.requires_grad


def test_load_params_into_name_mismatch():
    ck = Checkpoint(tensors={"w": np.ones(2)})
    with pytest.raises(FormatError, match="disagree"):
        load_params_into({"v": Tensor(np.zeros(2))}, ck)


def test_load_params_into_shape_mismatch():
    ck = Checkpoint(tensors={"w": np.ones(3)})
    with pytest.raises(FormatError, match="shape"):
        load_params_into({"w": Tensor(np.zeros(2))}, ck)


# -- images -----------------------------------------------------------------


def test_to_uint8_clamps():
    arr = np.array([-0.5, 0.0, 0.5, 1.0, 2.0])
    assert list(to_uint8(arr)) == [0, 0, 128, 255, 255]


def test_png_roundtrip_lossless_on_grid(tmp_path):
    # values on the exact 8-bit lattice survive write/read untouched
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (3, 9, 7)).astype(np.float64) / 255.0
    p = str(tmp_path / "img.png")
    image_write(img, p)
    back = image_read(p).numpy()
    assert back.shape == (3, 9, 7)
    assert np.array_equal(back, img)


def test_png_write_clamps_out_of_range(tmp_path):
    img = np.full((3, 4, 4), 1.7)
    p = str(tmp_path / "hot.png")
    image_write(img, p)
    assert np.array_equal(image_read(p).numpy(), np.ones((3, 4, 4)))


def test_image_write_shape_check(tmp_path):
    with pytest.raises(ValidationError):
        image_write(np.zeros((1, 4, 4)), str(tmp_path / "x.png"))


@pytest.mark.parametrize("n,rows,cols", [(1, 1, 1), (2, 1, 2), (4, 2, 2), (5, 2, 3), (9, 3, 3), (10, 3, 4)])
def test_grid_arithmetic(tmp_path, n, rows, cols):
    imgs = np.zeros((n, 3, 4, 4))
    got = write_grid(imgs, str(tmp_path / f"g{n}.png"))
    assert got == (rows, cols)


def test_grid_tile_placement(tmp_path):
    rng = np.random.default_rng(5)
    imgs = rng.integers(0, 256, (5, 3, 4, 4)).astype(np.float64) / 255.0
    p = str(tmp_path / "grid.png")
    rows, cols = write_grid(imgs, p)
    back = image_read(p).numpy()
    assert back.shape == (3, rows * 4, cols * 4)
    for i in range(5):
        r, c = divmod(i, cols)
        tile = back[:, r * 4 : (r + 1) * 4, c * 4 : (c + 1) * 4]
        assert np.array_equal(tile, imgs[i])
    # unused cell stays black
    r, c = divmod(5, cols)
    assert np.all(back[:, r * 4 : (r + 1) * 4, c * 4 : (c + 1) * 4] == 0)


# -- config loading ---------------------------------------------------------


def write_cfg(tmp_path, doc):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_defaults_without_file():
    from dgan.io import load_config

    cfg = load_config(None)
    assert isinstance(cfg, ConfigBundle)
    assert cfg.train.weights.lambda_ds == 0.3
    assert cfg.ppl.eps == 1e-4
    assert cfg.sample.psi == 0.7


def test_empty_object_gives_defaults(tmp_path):
    from dgan.io import load_config

    cfg = load_config(write_cfg(tmp_path, {}))
    assert cfg.train.weights.lambda_ds == 0.3
    assert cfg.ppl.eps == 1e-4
    assert cfg.sample.psi == 0.7


def test_nested_overrides(tmp_path):
    from dgan.io import load_config

    cfg = load_config(
        write_cfg(
            tmp_path,
            {
                "train": {"iterations": 7, "weights": {"lambda_ds": 0.5}},
                "generator": {"resolutions": [4, 8], "channels": [6, 6], "dat_max_resolution": 8},
                "synth": {"resolution": 16},
                "sample": {"psi": 0.4},
            },
        )
    )
    assert cfg.train.iterations == 7
    assert cfg.train.weights.lambda_ds == 0.5
    assert cfg.generator.resolutions == (4, 8)
    assert cfg.synth.resolution == 16
    assert cfg.sample.psi == 0.4


def test_typo_key_rejected(tmp_path):
    from dgan.io import load_config

    with pytest.raises(ValidationError, match="lamda_ds"):
        load_config(write_cfg(tmp_path, {"train": {"weights": {"lamda_ds": 0.5}}}))


def test_unknown_section_rejected(tmp_path):
    from dgan.io import load_config

    with pytest.raises(ValidationError, match="trainer"):
        load_config(write_cfg(tmp_path, {"trainer": {}}))


def test_negative_weight_rejected(tmp_path):
    from dgan.io import load_config

    with pytest.raises((ValidationError, ContractError), match="lambda_ds"):
        load_config(write_cfg(tmp_path, {"train": {"weights": {"lambda_ds": -1}}}))


def test_parse_error_reports_line_and_column(tmp_path):
    from dgan.io import load_config

    p = tmp_path / "broken.json"
    p.write_text('{\n  "train": {,}\n}')
    with pytest.raises(ValidationError, match=r"line 2.*column"):
        load_config(str(p))


def test_psi_range_enforced(tmp_path):
    from dgan.io import load_config

    with pytest.raises(ValidationError, match="psi"):
        load_config(write_cfg(tmp_path, {"sample": {"psi": 1.5}}))


def test_config_root_must_be_object(tmp_path):
    from dgan.io import load_config

    p = tmp_path / "arr.json"
    p.write_text("[1, 2]")
    with pytest.raises(ValidationError, match="object"):
        load_config(str(p))


def test_sample_config_validates():
    with pytest.raises(ValidationError):
        SampleConfig(psi=-0.1)
