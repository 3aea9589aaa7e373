//! Command implementations behind the `steerseg` binary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use steerseg::backends::{LanguageBackend, OracleSegmenter, ToyLvlm};
use steerseg::config::{BackendKind, PipelineConfig};
use steerseg::eval::{
    ablation_csv, alpha_sweep, components_ablation, evaluate, evaluate_ground_truth, generate_scenes, load_vos_directory,
    np_sweep, write_mask_dir, write_vos_directory, AblationRow, EvalItem, EvalReport,
};
use steerseg::formats::{encoding_fields, read_label_png, Container};
use steerseg::pipeline::{make_query, training_sample, Banks, Pipeline, PipelineRun};
use steerseg::prompting::{init_soft_prompts, Branch, SoftPromptBank};
use steerseg::steering::{prepare_sample, train_soft_prompts, PreparedSample, TrainRecord};
use steerseg::video::{list_images, Video};

use crate::error::{input, CliError, CliResult};

pub const CONFIG_ENV: &str = "STEERSEG_CONFIG";
pub const FRAME_CHECKPOINT: &str = "frame_prompts.ssc";
pub const VIDEO_CHECKPOINT: &str = "video_prompts.ssc";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RUN_MANIFEST: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.json";

/// Config from `--config`, else `$STEERSEG_CONFIG`, else built-in defaults.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<PipelineConfig> {
    let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let mut cfg = match path.map(Path::to_path_buf).or(env) {
        Some(p) => PipelineConfig::load(&p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

pub fn build_backend(cfg: &PipelineConfig) -> CliResult<Box<dyn LanguageBackend>> {
    match cfg.backend.kind {
        BackendKind::Toy => Ok(Box::new(ToyLvlm::new(cfg.backend.toy.clone())?)),
        BackendKind::Dump => Err(CliError::Backend(
            "the dump backend replays recorded attention and cannot generate responses; use the toy backend".into(),
        )),
        BackendKind::Plugin => Err(CliError::Backend(format!(
            "no backend plugin named {:?} is registered",
            cfg.backend.plugin.as_deref().unwrap_or_default()
        ))),
    }
}

/// Banks from an explicit checkpoint directory, else from the config paths.
pub fn load_banks(cfg: &PipelineConfig, dir: Option<&Path>) -> CliResult<(Option<SoftPromptBank>, Option<SoftPromptBank>)> {
    let (f, v) = match dir {
        Some(d) => (Some(d.join(FRAME_CHECKPOINT)), Some(d.join(VIDEO_CHECKPOINT))),
        None => (cfg.prompts.frame.clone(), cfg.prompts.video.clone()),
    };
    let load = |p: Option<PathBuf>, branch: Branch| -> CliResult<Option<SoftPromptBank>> {
        let Some(p) = p else { return Ok(None) };
        let bank = SoftPromptBank::load(&p).map_err(|e| input(&p, e))?;
        if bank.branch != branch {
            return Err(input(&p, format!("holds the {} branch, expected {branch}", bank.branch)));
        }
        Ok(Some(bank))
    };
    Ok((load(f, Branch::Frame)?, load(v, Branch::Video)?))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| input(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| input(path, e))
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Input(e.to_string()))
}

fn config_json(cfg: &PipelineConfig) -> CliResult<serde_json::Value> {
    serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))
}

pub fn load_items(data: &Path) -> CliResult<Vec<EvalItem>> {
    let ds = load_vos_directory(data)?;
    ds.iter().map(|s| Ok(EvalItem::from(s?))).collect()
}

/// Writes `count` synthetic scenes in the directory dataset layout.
pub fn cmd_generate(cfg: &PipelineConfig, out: &Path, count: usize, instances: Option<usize>) -> CliResult<usize> {
    let spec = match instances {
        Some(n) => cfg.scenes.clone().with_instances(n),
        None => cfg.scenes.clone(),
    };
    let scenes = generate_scenes(cfg.seed, count, &spec)?;
    create_dir(out)?;
    write_vos_directory(out, &scenes)?;
    Ok(scenes.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainManifest {
    pub start_step: usize,
    pub end_step: usize,
    pub samples: usize,
    pub n_p: usize,
    pub final_record: Option<TrainRecord>,
    pub resumed_from: Option<PathBuf>,
    pub config: serde_json::Value,
}

pub fn prepare_items(
    cfg: &PipelineConfig,
    backend: &dyn LanguageBackend,
    items: &[EvalItem],
) -> CliResult<Vec<PreparedSample>> {
    items
        .iter()
        .map(|it| {
            let s = training_sample(backend, &it.id, it.video.clone(), &it.expression, it.gt_masks(), cfg.use_cot)?;
            Ok(prepare_sample(&s, backend, &cfg.rollout)?)
        })
        .collect()
}

pub fn init_banks(
    cfg: &PipelineConfig,
    backend: &dyn LanguageBackend,
    n_p: usize,
) -> steerseg::Result<(SoftPromptBank, SoftPromptBank)> {
    let embed = |t: &str| backend.embed_text(t);
    Ok((
        init_soft_prompts(Branch::Frame, &cfg.prompts.frame_seed_text, n_p, embed)?,
        init_soft_prompts(Branch::Video, &cfg.prompts.video_seed_text, n_p, embed)?,
    ))
}

fn train_log_line(r: &TrainRecord) -> String {
    format!(
        "{},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
        r.step, r.loss, r.bce, r.dice, r.mean_corr_frame, r.mean_corr_video
    )
}

/// Trains both banks on a directory dataset; `resume` continues from a
/// checkpoint directory written by an earlier run.
pub fn cmd_train(cfg: &PipelineConfig, data: &Path, out: &Path, resume: Option<&Path>) -> CliResult<TrainManifest> {
    let backend = build_backend(cfg)?;
    let items = load_items(data)?;
    let prepared = prepare_items(cfg, backend.as_ref(), &items)?;
    let init = match resume {
        Some(d) => match load_banks(cfg, Some(d))? {
            (Some(f), Some(v)) => (f, v),
            _ => unreachable!("checkpoint directory yields both banks"),
        },
        None => init_banks(cfg, backend.as_ref(), cfg.train.n_p)?,
    };
    let start_step = init.0.steps;
    create_dir(out)?;
    let mut log = String::from("step,loss,bce,dice,mean_corr_frame,mean_corr_video\n");
    let outcome = train_soft_prompts(&prepared, &cfg.train, &cfg.rollout, backend.as_ref(), init, |r| {
        log::info!(
            "step {} loss {:.4} corr frame {:.3} video {:.3}",
            r.step,
            r.loss,
            r.mean_corr_frame,
            r.mean_corr_video
        );
        log.push_str(&train_log_line(r));
    })?;
    outcome.frame.save(&out.join(FRAME_CHECKPOINT))?;
    outcome.video.save(&out.join(VIDEO_CHECKPOINT))?;
    write_text(&out.join(TRAIN_LOG), &log)?;
    let manifest = TrainManifest {
        start_step,
        end_step: outcome.frame.steps,
        samples: prepared.len(),
        n_p: outcome.frame.n_p(),
        final_record: outcome.records.last().cloned(),
        resumed_from: resume.map(Path::to_path_buf),
        config: config_json(cfg)?,
    };
    write_text(&out.join(RUN_MANIFEST), &to_json(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrackletEntry {
    pub index: usize,
    pub seed_frame: usize,
    pub seed_x: f64,
    pub seed_y: f64,
    pub s: f64,
    pub s_frm: f64,
    pub s_vid: f64,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentManifest {
    pub expression: String,
    pub response_word: String,
    pub reasoning: String,
    pub attributes: Vec<String>,
    pub cot_failed: bool,
    pub alpha: f64,
    pub n_candidates: usize,
    pub tracklets: Vec<TrackletEntry>,
    pub chosen: Option<usize>,
    pub frame_keyframes: Vec<usize>,
    pub video_keyframes: Vec<usize>,
    pub config: serde_json::Value,
}

impl SegmentManifest {
    fn new(run: &PipelineRun, cfg: &PipelineConfig) -> CliResult<Self> {
        let c = &run.candidates;
        let tracklets = c
            .tracklets
            .iter()
            .enumerate()
            .map(|(index, t)| {
                let sc = t.scores.expect("selected runs carry scores");
                TrackletEntry {
                    index,
                    seed_frame: t.seed.frame,
                    seed_x: t.seed.x,
                    seed_y: t.seed.y,
                    s: sc.s,
                    s_frm: sc.s_frm,
                    s_vid: sc.s_vid,
                    fingerprint: t.fingerprint(),
                }
            })
            .collect();
        Ok(SegmentManifest {
            expression: c.query.expression.clone(),
            response_word: c.query.response_word.clone(),
            reasoning: c.query.reasoning.clone(),
            attributes: c.query.attributes.clone(),
            cot_failed: c.cot_failed,
            alpha: run.alpha,
            n_candidates: c.tracklets.len(),
            tracklets,
            chosen: run.chosen,
            frame_keyframes: c.maps.frame_keyframes.clone(),
            video_keyframes: c.maps.video_keyframes.clone(),
            config: config_json(cfg)?,
        })
    }
}

fn read_labels(dir: &Path) -> CliResult<Vec<ndarray::Array2<u8>>> {
    let mut paths = list_images(dir).map_err(|e| input(dir, e))?;
    paths.sort();
    paths.iter().map(|p| Ok(read_label_png(p)?)).collect()
}

fn write_maps(path: &Path, run: &PipelineRun) -> CliResult<()> {
    let maps = &run.candidates.maps;
    let mut m = toml::Table::new();
    m.insert("kind".into(), "grounding_maps".into());
    m.insert("version".into(), 1.into());
    let dims = |d: (usize, usize, usize)| toml::Value::Array(vec![(d.0 as i64).into(), (d.1 as i64).into(), (d.2 as i64).into()]);
    m.insert("frame_shape".into(), dims(maps.frame_maps.dim()));
    m.insert("video_shape".into(), dims(maps.video_map.dim()));
    let keys = |k: &[usize]| toml::Value::Array(k.iter().map(|&v| (v as i64).into()).collect());
    m.insert("frame_keyframes".into(), keys(&maps.frame_keyframes));
    m.insert("video_keyframes".into(), keys(&maps.video_keyframes));
    encoding_fields(&mut m);
    let mut c = Container::new(m);
    c.put_f32("frame_maps.bin", maps.frame_maps.iter().copied());
    c.put_f32("video_map.bin", maps.video_map.iter().copied());
    Ok(c.write(path)?)
}

pub struct SegmentArgs<'a> {
    pub video: &'a Path,
    pub labels: Option<&'a Path>,
    pub expression: &'a str,
    pub out: &'a Path,
    pub alpha: Option<f64>,
    pub prompts: Option<&'a Path>,
    pub export_maps: bool,
}

/// Segments one clip. Nothing is written unless the whole run succeeds.
pub fn cmd_segment(cfg: &PipelineConfig, args: &SegmentArgs<'_>) -> CliResult<SegmentManifest> {
    let mut cfg = cfg.clone();
    if let Some(a) = args.alpha {
        cfg.selection.alpha = a;
        cfg.validate()?;
    }
    if !args.video.is_dir() {
        return Err(input(args.video, "video directory not found"));
    }
    let video = Video::load_dir(args.video)?;
    let labels_dir = args
        .labels
        .ok_or_else(|| CliError::Input("the oracle segmenter needs --labels".into()))?;
    let segmenter = OracleSegmenter::new(read_labels(labels_dir)?)?;
    let backend = build_backend(&cfg)?;
    let (frame, video_bank) = load_banks(&cfg, args.prompts)?;
    let pipeline = Pipeline {
        backend: backend.as_ref(),
        rollout: &cfg.rollout,
        selection: &cfg.selection,
        banks: Banks {
            frame: frame.as_ref(),
            video: video_bank.as_ref(),
        },
        use_cot: cfg.use_cot,
    };
    let run = pipeline.run(&video, args.expression, &segmenter)?;
    let manifest = SegmentManifest::new(&run, &cfg)?;
    create_dir(args.out)?;
    write_mask_dir(args.out, &run.masks, cfg.selection.binarize_threshold)?;
    if args.export_maps {
        write_maps(&args.out.join("maps.ssc"), &run)?;
    }
    write_text(&args.out.join(RUN_MANIFEST), &to_json(&manifest)?)?;
    Ok(manifest)
}

/// Evaluates a directory dataset; `self_test` scores the ground truth itself.
pub fn cmd_eval(cfg: &PipelineConfig, data: &Path, prompts: Option<&Path>, report: &Path, self_test: bool) -> CliResult<EvalReport> {
    let items = load_items(data)?;
    let config = config_json(cfg)?;
    let r = if self_test {
        let backend = ToyLvlm::new(cfg.backend.toy.clone())?;
        let it = items.first().ok_or_else(|| CliError::Input("dataset is empty".into()))?;
        let grid = backend.visual_grid(it.video.height(), it.video.width())?;
        evaluate_ground_truth(&items, grid, cfg.rollout.frame_keyframes, config)?
    } else {
        let backend = build_backend(cfg)?;
        let (f, v) = load_banks(cfg, prompts)?;
        let pipeline = Pipeline {
            backend: backend.as_ref(),
            rollout: &cfg.rollout,
            selection: &cfg.selection,
            banks: Banks {
                frame: f.as_ref(),
                video: v.as_ref(),
            },
            use_cot: cfg.use_cot,
        };
        evaluate(&pipeline, &items, config)?
    };
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(report, &r.to_json()?)?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationParam {
    Alpha,
    NP,
    Components,
}

impl std::str::FromStr for AblationParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(AblationParam::Alpha),
            "n_p" => Ok(AblationParam::NP),
            "components" => Ok(AblationParam::Components),
            other => Err(CliError::Config(format!(
                "unknown ablation parameter {other:?} (expected alpha, n_p or components)"
            ))),
        }
    }
}

pub struct AblateArgs<'a> {
    pub param: AblationParam,
    pub data: &'a Path,
    pub prompts: Option<&'a Path>,
    /// Training set for parameters that retrain.
    pub train_data: Option<&'a Path>,
    pub values: Vec<f64>,
    pub out: &'a Path,
}

pub fn cmd_ablate(cfg: &PipelineConfig, args: &AblateArgs<'_>) -> CliResult<Vec<AblationRow>> {
    let backend = build_backend(cfg)?;
    let items = load_items(args.data)?;
    let (f, v) = load_banks(cfg, args.prompts)?;
    let pipeline = Pipeline {
        backend: backend.as_ref(),
        rollout: &cfg.rollout,
        selection: &cfg.selection,
        banks: Banks {
            frame: f.as_ref(),
            video: v.as_ref(),
        },
        use_cot: cfg.use_cot,
    };
    let rows = match args.param {
        AblationParam::Alpha => {
            let alphas = if args.values.is_empty() {
                (0..=10).map(|i| f64::from(i) / 10.0).collect()
            } else {
                args.values.clone()
            };
            if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(CliError::Config(format!("alpha {a} outside [0, 1]")));
            }
            alpha_sweep(&pipeline, &items, &alphas)?.0
        }
        AblationParam::Components => components_ablation(&pipeline, pipeline.banks, &items)?,
        AblationParam::NP => {
            let train = args
                .train_data
                .ok_or_else(|| CliError::Input("the n_p sweep retrains and needs --train-data".into()))?;
            let values: Vec<usize> = if args.values.is_empty() {
                vec![16, 32, 64, 128]
            } else {
                args.values.iter().map(|&v| v as usize).collect()
            };
            let prepared = prepare_items(cfg, backend.as_ref(), &load_items(train)?)?;
            let mut tc = cfg.train.clone();
            let mut retrain = |n: usize| {
                tc.n_p = n;
                let init = init_banks(cfg, backend.as_ref(), n)?;
                let o = train_soft_prompts(&prepared, &tc, &cfg.rollout, backend.as_ref(), init, |_| {})?;
                Ok((o.frame, o.video))
            };
            np_sweep(&pipeline, &values, &items, &mut retrain)?
        }
    };
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(args.out, &ablation_csv(&rows))?;
    Ok(rows)
}

/// One entry of a diagnostic sample directory.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Path of the frame strip, relative to the sample directory.
    pub media: String,
    pub expression: String,
    pub reasoning: String,
    pub attributes: Vec<String>,
}

fn frame_strip(video: &Video, max_frames: usize) -> ndarray::Array3<f64> {
    let n = video.len().min(max_frames);
    let keys = steerseg::rollout::keyframes(video.len(), n);
    let (h, w) = (video.height(), video.width());
    let mut strip = ndarray::Array3::zeros((h, w * keys.len(), 3));
    for (i, &k) in keys.iter().enumerate() {
        strip
            .slice_mut(ndarray::s![.., i * w..(i + 1) * w, ..])
            .assign(video.frame(k));
    }
    strip
}

/// Runs the reasoning step on up to `count` entries and writes a sample
/// directory for the diagnostic service.
pub fn cmd_diagnose_prepare(cfg: &PipelineConfig, data: &Path, out: &Path, count: Option<usize>) -> CliResult<usize> {
    let backend = build_backend(cfg)?;
    let items = load_items(data)?;
    let media = out.join("media");
    create_dir(&media)?;
    let mut samples = Vec::new();
    for (i, it) in items.iter().take(count.unwrap_or(usize::MAX)).enumerate() {
        let (q, _) = make_query(backend.as_ref(), &it.expression, &it.video, true)?;
        let name = format!("{i:05}.png");
        steerseg::video::save_rgb(&media.join(&name), &frame_strip(&it.video, 8))?;
        samples.push(SampleRecord {
            id: format!("s{i:05}"),
            media: format!("media/{name}"),
            expression: q.expression,
            reasoning: q.reasoning,
            attributes: q.attributes,
        });
    }
    write_text(&out.join(SAMPLES_FILE), &to_json(&samples)?)?;
    Ok(samples.len())
}
