use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use steerseg_cli::commands::{
    cmd_ablate, cmd_diagnose_prepare, cmd_eval, cmd_generate, cmd_segment, cmd_train, load_config, AblateArgs,
    AblationParam, SegmentArgs, CONFIG_ENV,
};
use steerseg_cli::service::{router, AppState};
use steerseg_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "steerseg", version, about = "Attention-steered referring video object segmentation")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment the object referred to by an expression in one clip.
    Segment {
        /// Directory of frame images.
        #[arg(long)]
        video: PathBuf,
        /// Directory of instance-label images for the oracle segmenter.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        expression: String,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory with both prompt banks.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Also write the frame and video attention maps.
        #[arg(long)]
        export_maps: bool,
    },
    /// Train the frame and video prompt banks.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total optimizer steps; overrides the configured value.
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate on a directory dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Score the ground truth as the prediction.
        #[arg(long)]
        self_test: bool,
    },
    /// Sweep one parameter and write a comma-separated table.
    Ablate {
        /// alpha, n_p or components.
        #[arg(long)]
        param: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic scenes in the directory dataset layout.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
        /// Fixed instance count per scene.
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Build a diagnostic sample directory from reasoning outputs.
    DiagnosePrepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Serve the diagnostic annotation endpoints.
    DiagnoseServe {
        #[arg(long)]
        samples_dir: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        store: PathBuf,
    },
}

fn serve(samples_dir: PathBuf, port: u16, store: PathBuf) -> anyhow::Result<()> {
    let state = AppState::open(&samples_dir, &store)?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .with_context(|| format!("binding port {port}"))?;
        log::info!("serving on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await.context("serving")
    })
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Segment {
            video,
            labels,
            expression,
            out,
            prompts,
            alpha,
            export_maps,
        } => {
            let m = cmd_segment(
                &cfg,
                &SegmentArgs {
                    video: &video,
                    labels: labels.as_deref(),
                    expression: &expression,
                    out: &out,
                    alpha,
                    prompts: prompts.as_deref(),
                    export_maps,
                },
            )?;
            println!("{} candidates, chosen {:?}", m.n_candidates, m.chosen);
        }
        Command::Train {
            data,
            out,
            steps,
            resume,
        } => {
            let mut cfg = cfg;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let m = cmd_train(&cfg, &data, &out, resume.as_deref())?;
            println!("trained steps {}..{} on {} samples", m.start_step, m.end_step, m.samples);
        }
        Command::Eval {
            data,
            prompts,
            report,
            self_test,
        } => {
            let r = cmd_eval(&cfg, &data, prompts.as_deref(), &report, self_test)?;
            println!("J {:.4} F {:.4} J&F {:.4}", r.mean_j, r.mean_f, r.mean_jf);
        }
        Command::Ablate {
            param,
            data,
            prompts,
            train_data,
            values,
            out,
        } => {
            let rows = cmd_ablate(
                &cfg,
                &AblateArgs {
                    param: param.parse::<AblationParam>()?,
                    data: &data,
                    prompts: prompts.as_deref(),
                    train_data: train_data.as_deref(),
                    values,
                    out: &out,
                },
            )?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
        Command::Generate { out, count, instances } => {
            let n = cmd_generate(&cfg, &out, count, instances)?;
            println!("{n} scenes written to {}", out.display());
        }
        Command::DiagnosePrepare { data, out, count } => {
            let n = cmd_diagnose_prepare(&cfg, &data, &out, count)?;
            println!("{n} samples written to {}", out.display());
        }
        Command::DiagnoseServe {
            samples_dir,
            port,
            store,
        } => serve(samples_dir, port, store).map_err(|e| CliError::Input(format!("{e:#}")))?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("steerseg: {}", e.one_line());
            ExitCode::from(e.exit_code())
        }
    }
}
