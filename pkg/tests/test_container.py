"""Container round-trips, member-row bit packing, parse failures."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zeroskip import (ContainerFormatError, LayerDesc, QuantModel,
                      bundle_from_model, calibrate_model, cluster_layer,
                      deserialize_model, load_model, load_tensor, model_hash,
                      save_model, save_tensor, serialize_model)
from zeroskip.container import (ModelBundle, pack_member_row,
                                unpack_member_row)
from zeroskip.synth import random_inputs, random_model


def _calibrated_bundle(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, allow_conv=True)
    samples = random_inputs(rng, model, 16)
    params = calibrate_model(model, samples, 0.7)
    clusters = [cluster_layer(l.weights) for l in model.layers]
    return ModelBundle(model, clusters, params)


def test_minus_five_member_row_byte_fixture():
    # k=1 row: bit0 sign=1, bits1..7 magnitude 5 -> 0b0000101__1 = 0x0B
    packed = pack_member_row(np.array([-5], dtype=np.int8))
    assert packed == bytes([0x0B])
    assert list(unpack_member_row(packed, 1)) == [-5]


def test_member_row_packing_round_trip_all_k():
    rng = np.random.default_rng(1)
    for k in (1, 3, 7, 8, 9, 40, 64, 130):
        w = rng.integers(-127, 128, k).astype(np.int8)
        packed = pack_member_row(w)
        assert len(packed) == k  # never exceeds the plain 8-bit baseline
        assert np.array_equal(unpack_member_row(packed, k), w)


def test_member_row_bitmap_equals_sign_bits():
    w = np.array([-5, 7, 0, -1], dtype=np.int8)
    packed = pack_member_row(w)
    stream = int.from_bytes(packed, "little")
    bitmap = [(stream >> i) & 1 for i in range(4)]
    assert bitmap == [1, 0, 0, 1]


def test_member_row_rejects_minus_128():
    with pytest.raises(ValueError):
        pack_member_row(np.array([-128], dtype=np.int8))


def test_round_trip_bytes_idempotent():
    bundle = _calibrated_bundle(11)
    blob = serialize_model(bundle)
    again = serialize_model(deserialize_model(blob))
    assert again == blob


def test_round_trip_object_equality():
    bundle = _calibrated_bundle(12)
    back = deserialize_model(serialize_model(bundle))
    assert back == bundle


@settings(max_examples=30)
@given(st.integers(0, 2 ** 31))
def test_round_trip_random_models(seed):
    bundle = _calibrated_bundle(seed)
    blob = serialize_model(bundle)
    assert serialize_model(deserialize_model(blob)) == blob


def test_round_trip_preserves_predictor_flags():
    bundle = _calibrated_bundle(13)
    back = deserialize_model(serialize_model(bundle))
    for layer_a, layer_b in zip(bundle.params, back.params):
        for a, b in zip(layer_a, layer_b):
            assert a.enabled == b.enabled
            assert a.fit_valid == b.fit_valid


def test_truncated_container_reports_offset():
    blob = serialize_model(_calibrated_bundle(14))
    with pytest.raises(ContainerFormatError) as exc:
        deserialize_model(blob[: len(blob) // 2])
    assert exc.value.offset <= len(blob) // 2


def test_bad_magic_rejected():
    blob = serialize_model(_calibrated_bundle(15))
    with pytest.raises(ContainerFormatError) as exc:
        deserialize_model(b"XXXX" + blob[4:])
    assert exc.value.offset == 0


def test_trailing_bytes_rejected():
    blob = serialize_model(_calibrated_bundle(16))
    with pytest.raises(ContainerFormatError):
        deserialize_model(blob + b"\x00")


def test_file_round_trip(tmp_path):
    bundle = _calibrated_bundle(17)
    path = tmp_path / "model.mork"
    save_model(bundle, path)
    assert load_model(path) == bundle
    assert model_hash(load_model(path)) == model_hash(bundle)


def test_tensor_file_round_trip(tmp_path):
    rng = np.random.default_rng(18)
    samples = rng.integers(-128, 128, (10, 24)).astype(np.int8)
    path = tmp_path / "samples.qtsr"
    save_tensor(samples, path)
    assert np.array_equal(load_tensor(path), samples)


def test_tensor_bad_magic(tmp_path):
    path = tmp_path / "bad.qtsr"
    path.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(ContainerFormatError):
        load_tensor(path)


def test_weight_byte_neutrality_random_models():
    rng = np.random.default_rng(19)
    for _ in range(20):
        k = int(rng.integers(1, 130))
        w = rng.integers(-127, 128, k).astype(np.int8)
        packed = pack_member_row(w)
        assert len(packed) <= k  # member bytes (signs + magnitudes) <= baseline


def test_bundle_validation():
    rng = np.random.default_rng(20)
    model = QuantModel(
        [LayerDesc("fc", rng.integers(-50, 51, (4, 4)).astype(np.int8))], (4,)
    )
    good = bundle_from_model(model)
    assert len(good.clusters) == 1
    from zeroskip import ClusterPlan, ShapeError
    with pytest.raises(ShapeError):
        ModelBundle(model, [ClusterPlan((0, 1), ((), ()))], good.params)  # missing neurons
    with pytest.raises(ShapeError):
        ModelBundle(model, good.clusters, [good.params[0][:2]])
