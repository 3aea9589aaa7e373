use ndarray::Array3;
use steerseg::backends::{LanguageBackend, ToyConfig, ToyLvlm};
use steerseg::eval::{generate_scenes, SceneSpec};
use steerseg::pipeline::training_sample;
use steerseg::prompting::{init_soft_prompts, Branch, SoftPromptBank};
use steerseg::rollout::RolloutConfig;
use steerseg::steering::{
    finite_difference, loss_gradient, map_loss_grad, prepare_sample, train_soft_prompts, PreparedSample, TrainConfig,
};

#[test]
fn normalized_loss_matches_autograd_oracle() {
    // torch autograd on (x - min) / (max - min), clamped BCE mean plus Dice with sigma 1.
    let x = Array3::from_shape_vec((1, 3, 3), vec![0.10, 0.40, 0.05, 0.90, 0.30, 0.20, 0.60, 0.15, 0.70]).unwrap();
    let g = Array3::from_shape_vec((1, 3, 3), vec![0., 1., 0., 1., 1., 0., 0., 0., 1.]).unwrap();
    let (p, d) = map_loss_grad(&x, g.view(), 1.0).unwrap();
    assert!((p.bce - 0.42230449636191847).abs() < 1e-12);
    assert!((p.dice - 0.29861111111111105).abs() < 1e-12);
    assert!((p.loss - 0.7209156074730295).abs() < 1e-12);
    let want = [
        0.23630401234567902,
        -0.4978229717813051,
        0.0014156481680990263,
        0.26671918767507014,
        -0.6248070987654321,
        0.2561452821869489,
        0.4677854938271604,
        0.24556327160493827,
        -0.35130282526115864,
    ];
    for (a, b) in d.iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn setup(n: usize) -> (ToyLvlm, RolloutConfig, Vec<PreparedSample>) {
    let backend = ToyLvlm::new(ToyConfig::default()).unwrap();
    let rollout = RolloutConfig::default();
    let samples = generate_scenes(9, n, &SceneSpec::default())
        .unwrap()
        .into_iter()
        .map(|s| {
            let t = training_sample(&backend, &s.id, s.video.clone(), &s.expression, s.target_masks(), true).unwrap();
            prepare_sample(&t, &backend, &rollout).unwrap()
        })
        .collect();
    (backend, rollout, samples)
}

fn banks(backend: &ToyLvlm, n_p: usize) -> (SoftPromptBank, SoftPromptBank) {
    let e = |t: &str| backend.embed_text(t);
    (
        init_soft_prompts(Branch::Frame, Branch::Frame.default_seed(), n_p, e).unwrap(),
        init_soft_prompts(Branch::Video, Branch::Video.default_seed(), n_p, e).unwrap(),
    )
}

fn small_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        n_p: 8,
        log_every: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn gradients_match_finite_differences_on_both_branches() {
    let (backend, rollout, samples) = setup(1);
    let (f, v) = banks(&backend, 8);
    let s = &samples[0];
    for (bank, term) in [(&f, s.frame_term(0)), (&v, s.video_term())] {
        let (_, g) = loss_gradient(bank, &term, &backend, &rollout, 1.0).unwrap();
        for entry in [(0, 0), (3, 17), (7, 31), (5, 20)] {
            let fd = finite_difference(&bank.embeddings, entry, 1e-4, &term, &backend, &rollout, 1.0).unwrap();
            let rel = (fd - g[entry]).abs() / fd.abs().max(g[entry].abs()).max(1e-8);
            assert!(rel < 1e-3, "{entry:?}: {fd} vs {}", g[entry]);
        }
    }
}

#[test]
fn zero_steps_return_initialization() {
    let (backend, rollout, samples) = setup(2);
    let init = banks(&backend, 8);
    let out = train_soft_prompts(&samples, &small_cfg(0), &rollout, &backend, init.clone(), |_| {}).unwrap();
    assert_eq!((out.frame, out.video), init);
    assert!(out.records.is_empty());
}

#[test]
fn training_is_deterministic_and_resumable() {
    let (backend, rollout, samples) = setup(2);
    let init = banks(&backend, 8);
    let a = train_soft_prompts(&samples, &small_cfg(3), &rollout, &backend, init.clone(), |_| {}).unwrap();
    let b = train_soft_prompts(&samples, &small_cfg(3), &rollout, &backend, init, |_| {}).unwrap();
    assert_eq!(a.frame, b.frame);
    assert_eq!(a.losses, b.losses);
    assert!(a.losses.iter().all(|l| l.is_finite()));
    assert_eq!(a.frame.steps, 3);
    let resumed = train_soft_prompts(&samples, &small_cfg(5), &rollout, &backend, (a.frame, a.video), |_| {}).unwrap();
    assert_eq!(resumed.frame.steps, 5);
    assert_eq!(resumed.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![4, 5]);
}

#[test]
fn schedule_warms_up_then_decays_to_zero() {
    let c = TrainConfig::default();
    assert_eq!(c.warmup_steps(), 195);
    assert_eq!(c.lr_at(0), 0.0);
    assert!((c.lr_at(195) - c.learning_rate).abs() < 1e-15);
    assert!(c.lr_at(c.steps) < 1e-15);
    assert!((1..c.steps).all(|s| c.lr_at(s) <= c.learning_rate + 1e-15));
}
