import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from loft.analysis import select_dim, separability_report
from loft.dataio import (FeatureMatrix, SyntheticScenario, read_csv, read_fcov, read_features, read_fmat,
                         read_head, read_projector, synth, write_fcov, write_fmat, write_head,
                         write_projector)
from loft.errors import FormatError, InvalidInputError
from loft.matcore import covariance

# FMAT1\n, rows=2, cols=2, flags=0, then 1.0 2.0 3.0 4.0 as little-endian f32
FMAT_2X2 = bytes.fromhex(
    "464d4154310a" "02000000" "02000000" "00"
    "0000803f" "00000040" "00004040" "00008040")


def test_byte_level_fixture(tmp_path):
    p = tmp_path / "m.fmat"
    p.write_bytes(FMAT_2X2)
    fm = read_fmat(p)
    np.testing.assert_array_equal(fm.values, [[1.0, 2.0], [3.0, 4.0]])
    assert fm.labels is None
    write_fmat(tmp_path / "again.fmat", fm)
    assert (tmp_path / "again.fmat").read_bytes() == FMAT_2X2


def test_labels_fixture(tmp_path):
    p = tmp_path / "l.fmat"
    write_fmat(p, FeatureMatrix(np.array([[0.5], [-1.5]]), np.array([7, 0])))
    raw = p.read_bytes()
    assert raw[14] == 1 and raw[-8:] == struct.pack("<II", 7, 0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)),
       st.booleans())
def test_fmat_round_trip(tmp_path_factory, values, with_labels):
    p = tmp_path_factory.mktemp("rt") / "f.fmat"
    labels = np.arange(values.shape[0]) % 3 if with_labels else None
    write_fmat(p, FeatureMatrix(values, labels))
    back = read_fmat(p)
    assert back.values.shape == values.shape
    np.testing.assert_array_equal(back.values, values.astype(np.float32).astype(np.float64))
    if with_labels:
        np.testing.assert_array_equal(back.labels, labels)
    else:
        assert back.labels is None


@pytest.mark.parametrize("data, offset", [
    (b"", 0),
    (b"FMAT2\n" + FMAT_2X2[6:], 0),
    (FMAT_2X2[:10], 6),                        # header cut short
    (FMAT_2X2[:-1], 15),                       # payload shorter than rows*cols
    (FMAT_2X2 + b"\x00", 31),                  # trailing garbage
    (FMAT_2X2[:6] + struct.pack("<IIB", 0, 2, 0), 6),
    (FMAT_2X2[:6] + struct.pack("<IIB", 2, 2, 4) + FMAT_2X2[15:], 14),
    (FMAT_2X2[:6] + struct.pack("<IIB", 2, 2, 1) + FMAT_2X2[15:], 31),  # labels promised, missing
    (FMAT_2X2[:15] + struct.pack("<f", np.inf) + FMAT_2X2[19:], 15),
])
def test_fmat_errors_name_offset(tmp_path, data, offset):
    p = tmp_path / "bad.fmat"
    p.write_bytes(data)
    with pytest.raises(FormatError) as info:
        read_fmat(p)
    assert info.value.offset == offset
    assert f"byte {offset}" in str(info.value) and str(p) in str(info.value)


def test_dimension_overflow(tmp_path):
    p = tmp_path / "huge.fmat"
    p.write_bytes(FMAT_2X2[:6] + struct.pack("<IIB", 2 ** 32 - 1, 2 ** 32 - 1, 0) + b"\x00" * 16)
    with pytest.raises(FormatError, match="exceed"):
        read_fmat(p)


def test_writer_rejects_out_of_range(tmp_path):
    with pytest.raises(InvalidInputError):
        write_fmat(tmp_path / "x", FeatureMatrix(np.array([[1e300]])))


def test_projector_round_trip(tmp_path):
    u, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 2)))
    p = tmp_path / "u.fprj"
    write_projector(p, u)
    assert p.read_bytes()[:6] == b"FPRJ1\n"
    np.testing.assert_array_equal(read_projector(p), u.astype(np.float32).astype(np.float64))
    with pytest.raises(FormatError):
        read_fmat(p)
    write_projector(p, np.ones((2, 3)))
    with pytest.raises(FormatError, match="d >= s"):
        read_projector(p)


def test_fcov_round_trip_and_layout(tmp_path):
    z = np.random.default_rng(1).standard_normal((9, 3))
    cov = covariance(z)
    p = tmp_path / "c.fcov"
    write_fcov(p, cov)
    raw = p.read_bytes()
    assert len(raw) == 6 + 4 + 8 * 9 + 8 + 8 + 8 * 3
    back = read_fcov(p)
    assert back.matrix.tobytes() == cov.matrix.tobytes()
    assert back.mean.tobytes() == cov.mean.tobytes()
    assert back.count == 9 and back.trace == cov.trace and back.centered
    assert not read_fcov(p, centered=False).centered
    p.write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_fcov(p)
    p.write_bytes(raw[:6] + struct.pack("<I", 1000) + raw[10:])
    with pytest.raises(FormatError, match="exceeds"):
        read_fcov(p)


def test_head_round_trip(tmp_path):
    w = np.arange(6.0).reshape(2, 3)
    p = tmp_path / "h.head"
    write_head(p, w, np.array([0.5, -1.0]))
    w2, b2 = read_head(p)
    np.testing.assert_array_equal(w2, w)
    np.testing.assert_array_equal(b2, [0.5, -1.0])
    assert len(p.read_bytes()) == 15 + 24 + 8
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(FormatError):
        read_head(p)
    with pytest.raises(InvalidInputError):
        write_head(p, w, np.zeros(3))


# -- CSV ----------------------------------------------------------------------------

def test_csv_numeric(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,label\n1,2,0\n3,4,1\n5,6.5,1\n")
    fm = read_csv(p, label_column="label")
    np.testing.assert_array_equal(fm.values, [[1, 2], [3, 4], [5, 6.5]])
    np.testing.assert_array_equal(fm.labels, [0, 1, 1])
    assert read_csv(p).values.shape == (3, 3)
    assert read_csv(p, label_column=2).labels.tolist() == [0, 1, 1]


def test_csv_quoted_fields(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text('"feature, one","feature ""two""",label\n"1.5",2,"3"\n-1,"2e-1",0\n')
    fm = read_csv(p, label_column="label")
    np.testing.assert_array_equal(fm.values, [[1.5, 2.0], [-1.0, 0.2]])
    assert fm.labels.tolist() == [3, 0]


def test_csv_without_header(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("1,2\n3,4\n")
    assert read_csv(p, has_header=False).values.tolist() == [[1, 2], [3, 4]]


@pytest.mark.parametrize("text, match", [
    ("a,b\n", "no data rows"),
    ("", "missing header"),
    ("a,b\n1,2\n3\n", "line 3"),
    ("a,b\n1,2\n3,x\n", "line 3: non-numeric"),
    ("a,b\n1,nan\n", "line 2: non-finite"),
])
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(FormatError, match=match):
        read_csv(p)


def test_csv_label_errors(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("a,lab\n1,0.5\n")
    with pytest.raises(FormatError, match="line 2"):
        read_csv(p, label_column="lab")
    with pytest.raises(FormatError, match="not found"):
        read_csv(p, label_column="nope")
    with pytest.raises(FormatError, match="out of range"):
        read_csv(p, label_column=5)


def test_read_features_sniffs_format(tmp_path):
    (tmp_path / "m.bin").write_bytes(FMAT_2X2)
    (tmp_path / "m.csv").write_text("a,b\n1,2\n")
    assert read_features(tmp_path / "m.bin").n == 2
    assert read_features(tmp_path / "m.csv").n == 1


# -- feature matrices and the generator ------------------------------------------------

def test_feature_matrix_validation():
    with pytest.raises(InvalidInputError):
        FeatureMatrix(np.ones(3))
    with pytest.raises(InvalidInputError):
        FeatureMatrix(np.ones((2, 2)), np.array([0, -1]))
    with pytest.raises(InvalidInputError):
        FeatureMatrix(np.ones((2, 2)), np.array([0]))
    fm = FeatureMatrix(np.arange(6.0).reshape(3, 2), np.array([0, 1, 0]))
    assert fm.subset(fm.labels == 0).n == 2
    assert FeatureMatrix.concat([fm, fm]).labels.tolist() == [0, 1, 0, 0, 1, 0]
    assert FeatureMatrix.concat([fm, FeatureMatrix(np.ones((1, 2)))]).labels is None


def test_synth_deterministic_and_shaped():
    sc = SyntheticScenario(d=16, top_dim=4, classes=4, per_class=10, forget=(3,), seed=5)
    rm, fg = synth(sc)
    rm2, fg2 = synth(sc)
    assert rm.values.tobytes() == rm2.values.tobytes() and fg.values.tobytes() == fg2.values.tobytes()
    assert (rm.n, fg.n, rm.d) == (30, 10, 16)
    assert set(fg.labels) == {3} and set(rm.labels) == {0, 1, 2}
    test_rm, _ = synth(SyntheticScenario(d=16, top_dim=4, classes=4, per_class=10, forget=(3,),
                                         seed=5, split="test"))
    assert not np.array_equal(test_rm.values, rm.values)


def test_synth_exact_regime_compact():
    rm, fg = synth(SyntheticScenario(regime="exact", d=32, top_dim=8, seed=0))
    assert select_dim(covariance(rm.values), 0.95) <= 10
    assert separability_report(rm.values, fg.values, 8).error_ratio >= 3


def test_synth_pretrained_regime_matches(rng):
    rm, fg = synth(SyntheticScenario(regime="pretrained", d=32, top_dim=8, seed=0, per_class=2000))
    assert 0.8 <= separability_report(rm.values, fg.values, 8).error_ratio <= 1.25


@pytest.mark.parametrize("kw", [
    dict(regime="other"), dict(split="val"), dict(classes=1), dict(per_class=0), dict(forget=()),
    dict(forget=(9,)), dict(forget=(0, 1, 2, 3, 4, 5)), dict(top_dim=40), dict(top_dim=30),
    dict(alignment=1.5), dict(noise=-1.0), dict(decay=0.0),
])
def test_synth_rejects_infeasible(kw):
    with pytest.raises(InvalidInputError):
        SyntheticScenario(**kw)


def test_synth_regime_defaults():
    assert SyntheticScenario(regime="exact").mean_scale == 3.0
    assert SyntheticScenario(regime="pretrained").mean_scale == 0.2
    assert SyntheticScenario(mean_scale=1.5).mean_scale == 1.5
