import numpy as np
import pytest
from PIL import Image

from facehue.parsing import (
    CELEBAMASK_19,
    COMPONENTS,
    ComponentMasks,
    LabelMapping,
    ParserUnavailableError,
    ParsingError,
    UnknownLabelError,
    downscale_masks,
    fetch_parsing,
    map_labels,
)


def test_all_background():
    raw = np.zeros((8, 8), dtype=np.int64)
    masks = map_labels(raw, CELEBAMASK_19)
    assert masks.mask("background").all()
    for c in COMPONENTS[:-1]:
        assert not masks.mask(c).any()


def test_lip_labels_merge():
    raw = np.array([[11, 12, 13, 1]])
    masks = map_labels(raw, CELEBAMASK_19)
    assert masks.mask("lips")[0, :3].all()
    assert masks.mask("skin")[0, 3]


def test_partition_oracle(rng):
    raw = rng.integers(0, 19, (32, 32))
    masks = map_labels(raw, CELEBAMASK_19)
    total = sum(masks.mask(c).astype(int) for c in COMPONENTS)
    assert (total == 1).all()


def test_unknown_label_named():
    raw = np.array([[0, 42]])
    with pytest.raises(UnknownLabelError, match="42"):
        map_labels(raw, CELEBAMASK_19)


def test_mapping_rejects_bad_component():
    with pytest.raises(ParsingError):
        LabelMapping({0: "nose"})


def test_downscale_identity():
    m = ComponentMasks(np.random.default_rng(0).integers(0, 5, (8, 8)).astype(np.uint8))
    out = downscale_masks(m, 1)
    assert np.array_equal(out.index_map, m.index_map)


def test_downscale_uniform():
    m = ComponentMasks(np.full((8, 8), COMPONENTS.index("skin"), dtype=np.uint8))
    out = downscale_masks(m, 4)
    assert (out.index_map == COMPONENTS.index("skin")).all()


def test_downscale_checkerboard_tiebreak():
    lips, skin = COMPONENTS.index("lips"), COMPONENTS.index("skin")
    idx = np.zeros((8, 8), dtype=np.uint8)
    idx[::2, ::2] = lips
    idx[1::2, 1::2] = lips
    idx[::2, 1::2] = skin
    idx[1::2, ::2] = skin
    # enumerate-cells oracle: every 2x2 cell holds two of each, tie -> lips
    for r in range(0, 8, 2):
        for c in range(0, 8, 2):
            cell = idx[r : r + 2, c : c + 2]
            assert (cell == lips).sum() == 2 and (cell == skin).sum() == 2
    out = downscale_masks(ComponentMasks(idx), 2)
    assert (out.index_map == lips).all()


def test_downscale_partition_and_determinism(rng):
    for _ in range(10):
        idx = rng.integers(0, 5, (16, 16)).astype(np.uint8)
        m = ComponentMasks(idx)
        a = downscale_masks(m, 4)
        b = downscale_masks(m, 4)
        assert np.array_equal(a.index_map, b.index_map)
        total = sum(a.mask(c).astype(int) for c in COMPONENTS)
        assert (total == 1).all()


def test_downscale_bad_factor():
    m = ComponentMasks(np.zeros((6, 6), dtype=np.uint8))
    with pytest.raises(ParsingError):
        downscale_masks(m, 4)


def test_from_masks_partition_enforced():
    good = {c: np.zeros((2, 2), dtype=bool) for c in COMPONENTS}
    good["skin"][:] = True
    m = ComponentMasks.from_masks(good)
    assert m.mask("skin").all()
    bad = {c: np.ones((2, 2), dtype=bool) for c in COMPONENTS}
    with pytest.raises(ParsingError):
        ComponentMasks.from_masks(bad)


def test_fetch_precomputed(tmp_path):
    raw = np.arange(16, dtype=np.uint8).reshape(4, 4)
    p = tmp_path / "labels.png"
    Image.fromarray(raw).save(p)
    image = np.zeros((4, 4, 3), dtype=np.uint8)
    out = fetch_parsing(image, str(p))
    assert np.array_equal(out, raw)


def test_fetch_resizes_on_mismatch(tmp_path, caplog):
    raw = np.zeros((2, 2), dtype=np.uint8)
    raw[0, 0] = 3
    p = tmp_path / "labels.png"
    Image.fromarray(raw).save(p)
    image = np.zeros((4, 4, 3), dtype=np.uint8)
    out = fetch_parsing(image, str(p))
    assert out.shape == (4, 4)
    assert set(np.unique(out)) <= {0, 3}


def test_fetch_unreachable_endpoint():
    image = np.zeros((4, 4, 3), dtype=np.uint8)
    with pytest.raises(ParserUnavailableError):
        fetch_parsing(image, "http://127.0.0.1:9/parse", timeout=0.2)


def test_plain_text_mapping_section():
    from facehue.parsing import load_label_mapping

    mapping = load_label_mapping(
        """
        # two-label toy parser
        0: background
        1: skin
        7: lips   # visor
        """
    )
    assert mapping.table == {0: "background", 1: "skin", 7: "lips"}
    masks = map_labels(np.array([[0, 1, 7]]), mapping)
    assert masks.mask("lips")[0, 2]


def test_plain_text_mapping_rejects_garbage():
    from facehue.parsing import load_label_mapping

    with pytest.raises(ParsingError):
        load_label_mapping("lips before id")
    with pytest.raises(ParsingError):
        load_label_mapping("")
    with pytest.raises(ParsingError):
        load_label_mapping("3: visor")  # unknown component
