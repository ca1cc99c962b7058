//! `axsty`: colourise, train, evaluate, recommend references, check
//! gradients and benchmark attention.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use axsty_core::autodiff::GradFault;
use axsty_core::checkpoint;
use axsty_core::colorspace::{rgb_to_lab, LabImage};
use axsty_core::complexity::{self, BenchSettings};
use axsty_core::config::{AttentionMode, Config};
use axsty_core::data::{load_pairs, synthetic_pairs};
use axsty_core::gradsuite::{run_suite, SuiteOptions};
use axsty_core::image_io::{read_rgb, write_ppm};
use axsty_core::losses::multiscale_ground_truth;
use axsty_core::metrics::{his_score, ssim_lab};
use axsty_core::model::Model;
use axsty_core::network::{render, SCALES};
use axsty_core::recommender::{self, load_manifest};
use axsty_core::trainer::train_loop;
use axsty_core::Error;

#[derive(Parser)]
#[command(name = "axsty", version, about = "Exemplar-based colourisation with axial attention")]
struct Cli {
    /// `key = value` configuration file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Axial,
    Full,
}

impl From<Mode> for AttentionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Axial => AttentionMode::Axial,
            Mode::Full => AttentionMode::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Axial,
    Full,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Colourise a grayscale target with a colour reference.
    Colorize(ColorizeArgs),
    /// Train on image pairs or a synthetic set and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on pairs: CSV `id,his,ssim`.
    Eval(EvalArgs),
    /// Rank and sample references for one corpus entry.
    Recommend(RecommendArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Time the attention core over spans: CSV `mode,m,flops,wall_ms`.
    Bench(BenchArgs),
}

#[derive(Args)]
struct ColorizeArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Checkpoint directory; without it the network is seeded from the config.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    repeats: Option<u8>,
    /// Also write P2..P4 next to the output as `<stem>_p<l>.ppm`.
    #[arg(long)]
    all_scales: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// File of `target<TAB>reference` image paths.
    #[arg(long, conflicts_with = "synthetic")]
    pairs: Option<PathBuf>,
    /// Train on this many seeded synthetic pairs instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side of the synthetic images.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    /// Ablation preset: full, no-adv, no-pix, no-hist, standard-attention, single-module.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    /// File of `target<TAB>reference` image paths; targets are the ground truth.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    target: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// Number of sampled references to print.
    #[arg(long, default_value_t = 1)]
    draws: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the end-to-end instance.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 1e-2)]
    e2e_tol: f64,
    /// Skip the end-to-end network check.
    #[arg(long)]
    ops_only: bool,
    /// Corrupt the conv2d weight gradient to confirm failures are caught.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "both")]
    mode: BenchMode,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Side of the square map; must be at least the largest span.
    #[arg(long, default_value_t = 64)]
    side: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Dimension { .. }) => 2,
        Some(Error::Checkpoint(_)) => 3,
        _ => 1,
    }
}

fn base_config(path: Option<&Path>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn read_lab(path: &Path) -> anyhow::Result<LabImage> {
    let rgb = read_rgb(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(rgb_to_lab(&rgb)?)
}

fn colorize(cli_cfg: Option<&Path>, a: &ColorizeArgs) -> anyhow::Result<()> {
    let target = read_lab(&a.target)?;
    let reference = read_lab(&a.reference)?;
    let mut cfg = match &a.weights {
        Some(dir) => checkpoint::load_config(dir).map_err(|e| match e {
            Error::Io(io) => Error::Checkpoint(format!("{}: {io}", dir.join("config.txt").display())),
            e => e,
        })?,
        None => base_config(cli_cfg)?,
    };
    if let Some(m) = a.mode {
        cfg.model.mode = m.into();
    }
    if let Some(r) = a.repeats {
        cfg.model.repeats = r.into();
    }
    let mut model = Model::new(&cfg, target.height(), target.width())?;
    if let Some(dir) = &a.weights {
        checkpoint::load_weights(dir, &mut model)?;
    }
    let preds = model.colorize(&target, &reference)?;
    write_ppm(&a.out, &render(target.l(), preds.scale(1))?)?;
    if a.all_scales {
        let gt = multiscale_ground_truth(&target, SCALES)?;
        let stem = a.out.file_stem().map_or("out".into(), |s| s.to_string_lossy().into_owned());
        for l in 2..=SCALES {
            let path = a.out.with_file_name(format!("{stem}_p{l}.ppm"));
            write_ppm(&path, &render(gt[l - 1].l(), preds.scale(l))?)?;
        }
    }
    Ok(())
}

fn train(cli_cfg: Option<&Path>, a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(cli_cfg)?;
    if let Some(p) = &a.preset {
        cfg.apply_preset(p)?;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let pairs = match (&a.pairs, a.synthetic) {
        (Some(list), _) => load_pairs(list)?,
        (None, Some(n)) => synthetic_pairs(n, a.size, cfg.train.seed)?,
        (None, None) => bail!("give --pairs or --synthetic"),
    };
    let report = train_loop(&pairs, &cfg, Some(&a.out))?;
    if let Some(last) = report.history.last() {
        println!(
            "trained {} steps; final total {:.6}; checkpoint {}",
            last.step,
            last.breakdown.total,
            a.out.join("checkpoint").display()
        );
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let model = checkpoint::load(&a.weights)?;
    let pairs = load_pairs(&a.pairs)?;
    let mut csv = String::from("id,his,ssim\n");
    for p in &pairs {
        let preds = model.colorize(&p.target, &p.reference)?;
        let pred = p.target.with_ab(preds.scale(1))?;
        let his = his_score(&pred, &p.reference)?;
        let ssim = ssim_lab(&pred, &p.target)?;
        csv.push_str(&format!("{},{his:.6},{ssim:.6}\n", p.id));
    }
    match &a.out {
        Some(path) => std::fs::write(path, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn recommend(a: &RecommendArgs) -> anyhow::Result<()> {
    let pool = load_manifest(&a.manifest)?;
    let target = pool
        .iter()
        .find(|e| e.id == a.target)
        .with_context(|| format!("no entry {:?} in {}", a.target, a.manifest.display()))?;
    let r = recommender::rank(target, &pool, a.patch)?;
    println!("top5\t{}", r.top5.join(","));
    println!("top1\t{}", r.top1);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for _ in 0..a.draws {
        let (cat, id) = recommender::sample_reference(&r, &mut rng);
        println!("sample\t{id}\t{cat:?}");
    }
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> anyhow::Result<bool> {
    let opts = SuiteOptions {
        seed: a.seed,
        size: a.size,
        tol: a.tol,
        e2e_tol: a.e2e_tol,
        end_to_end: !a.ops_only,
        fault: a.inject_fault.then_some(GradFault::ConvWeightScale(1.5)),
        ..SuiteOptions::default()
    };
    let entries = run_suite(&opts)?;
    let mut ok = true;
    println!("op,max_rel_err,points,excluded,status");
    for e in &entries {
        let pass = e.report.passed();
        ok &= pass;
        println!(
            "{},{:.3e},{},{},{}",
            e.name,
            e.report.max_rel_err,
            e.report.points.len(),
            e.report.excluded.len(),
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn bench(a: &BenchArgs) -> anyhow::Result<()> {
    let s = BenchSettings {
        height: a.side,
        width: a.side,
        hidden: a.hidden,
        heads: a.heads,
        ..BenchSettings::default()
    };
    let modes: &[AttentionMode] = match a.mode {
        BenchMode::Axial => &[AttentionMode::Axial],
        BenchMode::Full => &[AttentionMode::Full],
        BenchMode::Both => &[AttentionMode::Axial, AttentionMode::Full],
    };
    println!("{}", complexity::CSV_HEADER);
    for &mode in modes {
        let pts = complexity::sweep(mode, &a.sizes, &s)?;
        for p in &pts {
            println!("{}", complexity::csv_row(p));
        }
        if pts.len() >= 2 {
            eprintln!("{} log-log slope {:.3}", complexity::mode_name(mode), complexity::wall_slope(&pts)?);
        }
    }
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("AXSTY_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("AXSTY_THREADS ignored: {e}");
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = match &cli.command {
        Command::Colorize(a) => colorize(cfg, a).map(|_| true),
        Command::Train(a) => train(cfg, a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Recommend(a) => recommend(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
