use std::path::Path;

use ndarray::{Array2, Array3};
use steerseg::backends::{
    load_attention_dump, write_attention_dump, DumpManifest, ForwardRequest, LanguageBackend, SoftPlacement,
    ToyConfig, ToyLvlm,
};
use steerseg::formats::Container;
use steerseg::rollout::query_maps;
use steerseg::Error;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn frames() -> Vec<Array3<f64>> {
    let mut f = Array3::zeros((32, 32, 3));
    for r in 4..14 {
        for c in 6..16 {
            f[[r, c, 0]] = 1.0;
        }
    }
    vec![f]
}

fn toy() -> ToyLvlm {
    ToyLvlm::new(ToyConfig::default()).unwrap()
}

#[test]
fn prepended_soft_prompts_shift_query_index() {
    let m = toy();
    let fr = frames();
    let plain = m.forward(&ForwardRequest::new("the red circle", &fr)).unwrap();
    let p = Array2::from_elem((4, m.embedding_dim()), 0.1);
    let req = ForwardRequest::new("the red circle", &fr).with_soft_prompts(Some(p.view()), SoftPlacement::Prepend);
    let soft = m.forward(&req).unwrap();
    assert_eq!(soft.tokens.len(), plain.tokens.len() + 4);
    assert_eq!(soft.query_index, plain.query_index + 4);
    assert_eq!(soft.tokens.soft_indices(), vec![0, 1, 2, 3]);
    assert_eq!(soft.generated_word, plain.generated_word);
}

#[test]
fn every_attention_row_sums_to_one() {
    let m = toy();
    let fr = frames();
    let p = Array2::from_elem((3, m.embedding_dim()), -0.2);
    let req = ForwardRequest::new("the red circle", &fr).with_soft_prompts(Some(p.view()), SoftPlacement::Prepend);
    let r = m.forward(&req).unwrap();
    for layer in r.attention.layers() {
        for a in layer {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn uniform_attention_has_zero_soft_prompt_gradient() {
    let m = ToyLvlm::new(ToyConfig {
        uniform_attention: true,
        ..ToyConfig::default()
    })
    .unwrap();
    let fr = frames();
    let p = Array2::from_elem((2, m.embedding_dim()), 0.3);
    let req = ForwardRequest::new("the red circle", &fr).with_soft_prompts(Some(p.view()), SoftPlacement::Prepend);
    let d = m.differentiable().unwrap();
    let mut objective = |r: &steerseg::backends::BackendForwardResult| {
        let map = query_maps(r, r.rollout_layers)?;
        let g = map.len() as f64;
        let value = map.sum() / g;
        let grad = steerseg::rollout::rollout_row_vjp(
            &r.attention,
            r.rollout_layers,
            r.query_index,
            ndarray::Array1::from_shape_fn(r.tokens.len(), |i| {
                f64::from(u8::from(r.tokens.visual_indices().contains(&i))) / g
            })
            .view(),
        )?;
        Ok((value, grad))
    };
    let (_, g) = d.soft_prompt_vjp(&req, &mut objective).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn dump_round_trip_and_rewrite_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy();
    let fr = frames();
    let r = m.forward(&ForwardRequest::new("the red circle", &fr)).unwrap();
    let path = dir.path().join("a.ssc");
    write_attention_dump(&path, &r, &DumpManifest::for_result(&r)).unwrap();
    let (back, meta) = load_attention_dump(&path).unwrap();
    assert_eq!(back.query_index, r.query_index);
    assert_eq!(back.tokens, r.tokens);
    assert_eq!(back.generated_word, r.generated_word);
    assert_eq!(back.rollout_layers, r.rollout_layers);
    for (la, lb) in back.attention.layers().iter().zip(r.attention.layers()) {
        for (a, b) in la.iter().zip(lb) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
    }
    let again = dir.path().join("b.ssc");
    write_attention_dump(&again, &back, &meta).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn truncated_dump_is_format_error() {
    let bytes = std::fs::read(fixture("external_dump.ssc")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for cut in [0, 3, 40, bytes.len() / 2, bytes.len() - 1] {
        let p = dir.path().join(format!("t{cut}.ssc"));
        std::fs::write(&p, &bytes[..cut]).unwrap();
        assert!(matches!(load_attention_dump(&p), Err(Error::Format(_))), "cut {cut}");
    }
}

fn rewrite(path: &Path, out: &Path, edit: impl FnOnce(&mut Container)) {
    let mut c = Container::read(path).unwrap();
    edit(&mut c);
    c.write(out).unwrap();
}

#[test]
fn zeroed_row_is_reported_by_position() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z.ssc");
    rewrite(&fixture("external_dump.ssc"), &out, |c| {
        let blob = c.blobs.get_mut("layer_15.bin").unwrap();
        // head 1, row 3 of a 6×6 matrix
        let start = (36 + 3 * 6) * 4;
        blob[start..start + 24].fill(0);
    });
    match load_attention_dump(&out) {
        Err(Error::RowSum { layer, head, row, .. }) => assert_eq!((layer, head, row), (15, 1, 3)),
        other => panic!("expected a row-sum error, got {other:?}"),
    }
}

#[test]
fn seq_len_disagreement_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.ssc");
    rewrite(&fixture("external_dump.ssc"), &out, |c| {
        c.manifest.insert("seq_len".into(), 7.into());
    });
    assert!(matches!(load_attention_dump(&out), Err(Error::Format(_))));
}

#[test]
fn externally_written_dump_loads_with_expected_rollout() {
    let (r, meta) = load_attention_dump(&fixture("external_dump.ssc")).unwrap();
    assert_eq!(meta.layer_start, 14);
    assert_eq!(meta.rollout_layers, (14, 15));
    assert_eq!((r.query_index, r.generated_word.as_str()), (5, "circle"));
    assert_eq!(r.tokens.visual_indices(), vec![1, 2, 3, 4]);
    let map = query_maps(&r, r.rollout_layers).unwrap();
    // Query row over visual tokens computed by the writer script with numpy.
    let want = [0.09847259521484375, 0.11017608642578125, 0.14308929443359375, 0.13846969604492188];
    assert_eq!(map.dim(), (1, 2, 2));
    for (a, b) in map.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    // An in-process writer reproduces a loadable, identical result.
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rt.ssc");
    write_attention_dump(&p, &r, &meta).unwrap();
    assert_eq!(load_attention_dump(&p).unwrap(), (r, meta));
}
