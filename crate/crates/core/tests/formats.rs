use ndarray::Array2;
use steerseg::eval::{read_mask_dir, write_mask_dir};
use steerseg::formats::{read_label_png, read_prob_mask};
use steerseg::prompting::{Branch, SoftPromptBank};
use steerseg::Error;

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["binary", "prob"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn checkpoint_rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let bank = SoftPromptBank {
        branch: Branch::Video,
        seed_text: "track the referred object".into(),
        embeddings: Array2::from_shape_fn((5, 7), |(i, j)| (i as f64 - 2.0) * 0.37 + j as f64 * 1e-3),
        steps: 42,
    };
    let (a, b) = (dir.path().join("a.ssc"), dir.path().join("b.ssc"));
    bank.save(&a).unwrap();
    let back = SoftPromptBank::load(&a).unwrap();
    assert_eq!(back.steps, 42);
    assert_eq!(back.branch, Branch::Video);
    back.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_of_wrong_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ssc");
    std::fs::write(&p, b"not a zip").unwrap();
    assert!(matches!(SoftPromptBank::load(&p), Err(Error::Format(_))));
}

#[test]
fn mask_dir_rewrite_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let masks: Vec<Array2<f64>> = (0..3)
        .map(|t| Array2::from_shape_fn((10, 12), |(r, c)| ((r * 12 + c + t) % 7) as f64 / 6.0))
        .collect();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_mask_dir(&a, &masks, 0.5).unwrap();
    let back = read_mask_dir(&a).unwrap();
    for (x, y) in back.iter().zip(&masks) {
        for (u, v) in x.iter().zip(y.iter()) {
            assert_eq!(*u, f64::from(*v as f32));
        }
    }
    write_mask_dir(&b, &back, 0.5).unwrap();
    assert_eq!(files(&a), files(&b));
    let bin = read_label_png(&a.join("binary/00001.png")).unwrap();
    let prob = read_prob_mask(&a.join("prob/00001.ssc")).unwrap();
    assert_eq!(bin, prob.mapv(|v| u8::from(v >= 0.5)));
}
