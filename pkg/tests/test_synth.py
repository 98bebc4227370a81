import filecmp

import numpy as np

from wsi_pipeline.annotations import TissueClass6, summarize_dataset
from wsi_pipeline.raster import to_luma
from wsi_pipeline.synth import (
    CLASS_TEXTURES,
    SynthSpec,
    generate_synthetic_corpus,
    synth_slide,
)

SMALL = SynthSpec(n_slides_per_class=1, seed=9, slide_px=512, n_classes=6)


class TestSynthSlide:
    def test_deterministic(self):
        a_ann, a_img = synth_slide(SMALL, TissueClass6.TA_LG, 0)
        b_ann, b_img = synth_slide(SMALL, TissueClass6.TA_LG, 0)
        assert np.array_equal(a_img.data, b_img.data)
        assert a_ann == b_ann

    def test_annotation_geometry_inside_slide(self):
        annset, img = synth_slide(SMALL, TissueClass6.HP, 0)
        md = annset.metadata
        assert (img.width, img.height) == (md.width_px, md.height_px)
        for roi in annset.rois:
            min_x, min_y, max_x, max_y = roi.contour.bounds_nm()
            assert 0 <= min_x < max_x <= md.width_px * md.nm_per_px
            assert 0 <= min_y < max_y <= md.height_px * md.nm_per_px

    def test_all_rois_carry_the_slide_class(self):
        annset, _ = synth_slide(SMALL, TissueClass6.TVA_HG, 3)
        assert {r.label for r in annset.rois} == {TissueClass6.TVA_HG}

    def test_tissue_darker_than_glass(self):
        annset, img = synth_slide(SMALL, TissueClass6.TA_HG, 0)
        luma = to_luma(img).data[:, :, 0]
        # glass corners stay bright, tissue center is clearly darker
        assert luma[:24, :24].mean() > 230
        h, w = luma.shape
        assert luma[h // 2 - 16 : h // 2 + 16, w // 2 - 16 : w // 2 + 16].mean() < 200

    def test_color_cast_preserves_luma(self):
        plain_spec = SynthSpec(n_slides_per_class=1, seed=4, slide_px=512, color_cast=False)
        cast_spec = SynthSpec(n_slides_per_class=1, seed=4, slide_px=512, color_cast=True)
        _, plain = synth_slide(plain_spec, TissueClass6.TA_LG, 0)
        _, cast = synth_slide(cast_spec, TissueClass6.TA_LG, 0)
        assert not np.array_equal(plain.data, cast.data)  # chroma moved
        luma_plain = to_luma(plain).data.astype(int)
        luma_cast = to_luma(cast).data.astype(int)
        frac_shifted = np.mean(np.abs(luma_plain - luma_cast) > 2)
        assert frac_shifted < 0.01  # only clamped pixels may drift


class TestCorpus:
    def test_byte_identical_regeneration(self, tmp_path):
        spec = SynthSpec(n_slides_per_class=1, seed=7, slide_px=512, n_classes=2)
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_synthetic_corpus(a, spec)
        generate_synthetic_corpus(b, spec)
        for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
            assert filecmp.cmp(a / rel, b / rel, shallow=False), rel

    def test_summary_matches_requested_counts(self, tmp_path):
        from wsi_pipeline.annotations import load_annotation_set

        spec = SynthSpec(n_slides_per_class=2, seed=5, slide_px=512, n_classes=6)
        root = tmp_path / "corpus"
        index = generate_synthetic_corpus(root, spec)
        assert len(index["slide_ids"]) == 12
        sets = [
            load_annotation_set(
                root / "annotations" / f"{sid}.ndpa.xml", root / "metadata" / f"{sid}.json"
            )
            for sid in index["slide_ids"]
        ]
        summary = summarize_dataset(sets)
        assert summary.total_slides == 12
        for cls in TissueClass6:
            assert summary.per_class[cls].slide_count == 2
            assert summary.per_class[cls].roi_count >= 2

    def test_texture_table_covers_all_classes(self):
        assert set(CLASS_TEXTURES) == set(TissueClass6)
