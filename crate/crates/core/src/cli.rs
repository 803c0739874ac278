//! Command-line front end. Exit codes: 0 success, 1 validation failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::auxmaps::{AuxMapSet, BinaryMask, EDGE_WIDTHS};
use crate::dcnet::{DCNet, DCNetConfig, TrainConfig};
use crate::erf::{compare_modules, erf_area, erf_map, ErfSubject};
use crate::error::{invalid, Error, Result};
use crate::io;
use crate::metrics::{evaluate, MetricConfig};
use crate::nn::{BlockKind, InferExec, ResAspp2Config};
use crate::ops::bilinear_resize;
use crate::reparam::{bench, merge_dual_encoder, verify_merge};
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dcnet", version, about = "Divide-and-conquer saliency network toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate edge, location, body and detail maps from ground-truth masks.
    Aux(AuxArgs),
    /// Train a network and write a checkpoint.
    Train(TrainArgs),
    /// Predict saliency maps for a directory of images.
    Infer(InferArgs),
    /// Convert a dual-encoder checkpoint to the parallel-encoder form.
    Merge(MergeArgs),
    /// Check that the merged form reproduces the dual-encoder outputs.
    Verify(VerifyArgs),
    /// Time the four inference variants.
    Bench(BenchArgs),
    /// Score predicted maps against ground truth.
    Eval(EvalArgs),
    /// Measure effective receptive fields.
    Erf(ErfArgs),
}

#[derive(Debug, Args)]
pub struct AuxArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Edge band widths to write.
    #[arg(long, value_delimiter = ',', default_values_t = EDGE_WIDTHS.to_vec())]
    pub widths: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with `images/` and `masks/`.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many generated images instead of `--data`.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side of the generated images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Print the loss every this many iterations (0 disables).
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run the parallel-encoder graph with merged pyramid banks.
    #[arg(long)]
    pub merged: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Random test images.
    #[arg(long, default_value_t = 2)]
    pub images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory for `report.txt`, `report.json` and `curves.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ErfArgs {
    /// Blocks to measure; give twice to compare.
    #[arg(long, value_parser = parse_block, default_values = ["resaspp2", "aspp"])]
    pub block: Vec<BlockKind>,
    #[arg(long, default_value_t = crate::erf::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = crate::erf::DEFAULT_SEEDS)]
    pub seeds: usize,
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    #[arg(long, default_value_t = 16)]
    pub c_in: usize,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 16)]
    pub c_out: usize,
    /// Directory for PGM heat maps and `erf.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_block(s: &str) -> std::result::Result<BlockKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (program name first) and runs the command, printing to
/// stdout and stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Aux(a) => aux(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Merge(a) => merge(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Erf(a) => erf(a),
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn aux(a: &AuxArgs) -> Result<()> {
    if let Some(&w) = a.widths.iter().find(|&&w| w == 0) {
        return invalid(format!("edge width must be positive, got {w}"));
    }
    let masks = io::list_files(&a.gt, "pgm")?;
    if masks.is_empty() {
        return invalid(format!("no PGM masks in {}", a.gt.display()));
    }
    let mut outputs = Vec::new();
    for path in &masks {
        let mask = BinaryMask::threshold(&io::read_pgm(path)?)?;
        let set = AuxMapSet::generate(&mask)?;
        let name = file_name(path);
        for &w in &a.widths {
            let edge = match set.edge(w) {
                Some(e) => e.clone(),
                None => crate::auxmaps::edge_map(&mask, w)?,
            };
            outputs.push((format!("edge{w}"), name.clone(), edge.to_tensor()));
        }
        outputs.push(("location".into(), name.clone(), set.location.to_tensor()));
        outputs.push(("body".into(), name.clone(), set.body));
        outputs.push(("detail".into(), name, set.detail));
    }
    for (kind, name, t) in &outputs {
        let dir = a.out.join(kind);
        fs::create_dir_all(&dir)?;
        io::write_pgm(t, &dir.join(name))?;
    }
    println!("wrote auxiliary maps for {} masks to {}", masks.len(), a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let data = match (&a.data, a.synthetic) {
        (Some(dir), _) => io::load_dataset(dir)?,
        (None, Some(n)) => crate::dcnet::synthetic_dataset(n, (a.size, a.size), a.seed)?,
        (None, None) => return invalid("either --data or --synthetic is required"),
    };
    let (_, _, h, w) = data.samples[0].image.dims();
    if data
        .samples
        .iter()
        .any(|s| s.image.dims().2 != h || s.image.dims().3 != w)
    {
        return invalid("all training images must share one size");
    }
    let cfg = DCNetConfig::uniform(a.stages, a.width, (h, w));
    let mut net = DCNet::build(&cfg, a.seed)?;
    let mut tc = TrainConfig::new(a.lr);
    tc.batch_size = a.batch;
    let history = crate::dcnet::train_loop_with(&mut net, &data, a.iters, &tc, |it, report, _| {
        if a.log_every > 0 && (it % a.log_every == 0 || it + 1 == a.iters) {
            println!("iter {it:>5} loss {:.4}", report.total);
        }
        ControlFlow::Continue(())
    })?;
    io::save_checkpoint(&net, &a.out)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("loss {first:.4} -> {last:.4} over {} iterations", history.len());
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn load_images(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut files = io::list_files(dir, "ppm")?;
    files.extend(io::list_files(dir, "pgm")?);
    files.sort();
    if files.is_empty() {
        return invalid(format!("no PPM or PGM images in {}", dir.display()));
    }
    files
        .iter()
        .map(|p| {
            let t = io::read_image(p)?;
            let (_, c, h, w) = t.dims();
            let t = if c == 1 {
                Tensor::from_fn([1, 3, h, w], |_, _, y, x| t.at(0, 0, y, x))
            } else {
                t
            };
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((stem, t))
        })
        .collect()
}

fn infer(a: &InferArgs) -> Result<()> {
    let mut net = io::load_checkpoint(&a.ckpt)?;
    if a.merged && !net.is_merged() {
        net = merge_dual_encoder(&net)?;
    }
    let mut ex = if a.merged {
        InferExec::merged(&net.store)
    } else {
        InferExec::new(&net.store)
    };
    let (nh, nw) = net.config.input_size;
    let images = load_images(&a.input)?;
    let mut maps = Vec::with_capacity(images.len());
    for (name, img) in &images {
        let (_, _, h, w) = img.dims();
        let x = if (h, w) == (nh, nw) {
            img.clone()
        } else {
            bilinear_resize(img, nh, nw)?
        };
        let out = net.forward_with(&mut ex, &x)?;
        let sal = out.saliency();
        let sal = if (h, w) == (nh, nw) {
            sal.clone()
        } else {
            bilinear_resize(sal, h, w)?
        };
        maps.push((name, sal));
    }
    fs::create_dir_all(&a.out)?;
    for (name, sal) in &maps {
        io::write_pgm(sal, &a.out.join(format!("{name}.pgm")))?;
    }
    println!("wrote {} saliency maps to {}", maps.len(), a.out.display());
    Ok(())
}

fn merge(a: &MergeArgs) -> Result<()> {
    let net = io::load_checkpoint(&a.ckpt)?;
    let merged = merge_dual_encoder(&net)?;
    io::save_checkpoint(&merged, &a.out)?;
    println!("merged checkpoint written to {}", a.out.display());
    Ok(())
}

fn random_images(cfg: &DCNetConfig, count: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(0.0f32, 1.0).expect("valid range");
    let (h, w) = cfg.input_size;
    Tensor::from_fn([count.max(1), cfg.in_channels, h, w], |_, _, _, _| {
        dist.sample(&mut rng)
    })
}

fn dual_and_merged(path: &Path) -> Result<(DCNet, DCNet)> {
    let net = io::load_checkpoint(path)?;
    if net.is_merged() {
        return invalid("checkpoint is already merged; pass the dual-encoder checkpoint");
    }
    let merged = merge_dual_encoder(&net)?;
    Ok((net, merged))
}

fn verify(a: &VerifyArgs) -> Result<()> {
    let (dual, merged) = dual_and_merged(&a.ckpt)?;
    let images = random_images(&dual.config, a.images, a.seed);
    let report = verify_merge(&dual, &merged, &images)?;
    let reference = dual.forward(&images)?;
    let banks = merged.forward_with(&mut InferExec::merged(&merged.store), &images)?;
    let banks_diff = banks.max_abs_diff(&reference)?;
    for (i, d) in report.encoder_stages.iter().enumerate() {
        println!("encoder stage {}: max-abs {d:.3e}", i + 1);
    }
    for (i, d) in report.decoder_stages.iter().enumerate() {
        println!("decoder stage {}: max-abs {d:.3e}", i + 1);
    }
    println!("end-to-end: max-abs {:.3e}", report.end_to_end);
    println!("end-to-end with merged banks: max-abs {banks_diff:.3e}");
    let worst = report.end_to_end.max(banks_diff).max(report.stage_max());
    if worst > a.tol {
        return Err(Error::Equivalence {
            diff: worst,
            tol: a.tol,
        });
    }
    println!("ok: all differences within {:e}", a.tol);
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    let (dual, merged) = dual_and_merged(&a.ckpt)?;
    let images = random_images(&dual.config, a.batch, 0);
    let table = bench(&dual, &merged, &images, a.repeats)?;
    print!("{}", table.to_text());
    if let Some(path) = &a.csv {
        io::write_atomic(path, table.to_csv().as_bytes())?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let gts = io::list_files(&a.gt, "pgm")?;
    if gts.is_empty() {
        return invalid(format!("no PGM masks in {}", a.gt.display()));
    }
    let mut pairs = Vec::with_capacity(gts.len());
    for g in &gts {
        let pred_path = a.pred.join(file_name(g));
        if !pred_path.is_file() {
            return invalid(format!("missing prediction {}", pred_path.display()));
        }
        let gt = BinaryMask::threshold(&io::read_pgm(g)?)?;
        pairs.push((io::read_pgm(&pred_path)?, gt));
    }
    let ev = evaluate(&pairs, &MetricConfig::default())?;
    let json = serde_json::to_string_pretty(&ev.report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::create_dir_all(&a.out)?;
    io::write_atomic(&a.out.join("report.txt"), ev.report.to_text().as_bytes())?;
    io::write_atomic(&a.out.join("report.json"), json.as_bytes())?;
    io::write_atomic(&a.out.join("curves.csv"), ev.curve.to_csv().as_bytes())?;
    print!("{}", ev.report.to_text());
    Ok(())
}

fn erf(a: &ErfArgs) -> Result<()> {
    let cfg = ResAspp2Config::new(a.c_in, a.m, a.c_out);
    let size = (a.size, a.size);
    if a.block.len() == 1 {
        let subject = ErfSubject::Block(a.block[0], cfg);
        let map = erf_map(&subject, size, a.seeds)?;
        let area = erf_area(&map, a.tau)?;
        println!(
            "{}: area {area} at tau {}, support {:?}",
            a.block[0].name(),
            a.tau,
            map.support()
        );
        if let Some(dir) = &a.out {
            fs::create_dir_all(dir)?;
            io::write_pgm(&map.to_tensor(), &dir.join(format!("{}.pgm", a.block[0].name())))?;
        }
        return Ok(());
    }
    let subjects: Vec<(String, ErfSubject)> = a
        .block
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let dup = a.block[..i].contains(k);
            let name = if dup {
                format!("{}_{i}", k.name())
            } else {
                k.name().to_string()
            };
            (name, ErfSubject::Block(*k, cfg.clone()))
        })
        .collect();
    let cmp = compare_modules(&subjects, size, a.tau, a.seeds)?;
    print!("{}", cmp.to_csv());
    if let Some(dir) = &a.out {
        cmp.write_maps(dir)?;
        io::write_atomic(&dir.join("erf.csv"), cmp.to_csv().as_bytes())?;
    }
    Ok(())
}
