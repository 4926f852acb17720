mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mriembed::dataset::DatasetLayout;
use mriembed::nifti::{read_nifti, write_nifti_file, NiftiHeader};
use mriembed::synthetic::{patient_seed, synthetic_channels};
use mriembed::{
    embed, emit_table, evaluate_batch, export_png_stack, run_bench, run_pipeline,
    scan_dataset_with, BenchOptions, BenchSource, Combination, DatasetIndex, EmbedConfig,
    EmbedMode, Modality, ModalitySet, StageOrder, TableFormat, Volume,
};

use config::RunConfig;

/// Multi-modal MRI embedding, preprocessing, evaluation and benchmarking.
#[derive(Debug, Parser)]
#[command(name = "mriembed", version, about)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print a NIfTI-1 header summary.
    Inspect { path: PathBuf },
    /// Re-encode a NIfTI-1 file, or export it as a 16-bit PNG stack.
    Convert {
        input: PathBuf,
        /// A `.nii` / `.nii.gz` file, or a directory for `--png`.
        output: PathBuf,
        /// Write a PNG stack plus manifest into OUTPUT.
        #[arg(long)]
        png: bool,
    },
    /// Fuse co-registered channel volumes into one.
    Embed(EmbedArgs),
    /// Run the preprocessing chain over a dataset or synthetic cohort.
    Preprocess(RunArgs),
    /// Score predicted masks against ground truth with Dice.
    Evaluate {
        /// Directory of predicted masks.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth masks; files are paired by relative path.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time both stage orders across modality combinations.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Channel input as `modality=path`, e.g. `flair=p01_flair.nii.gz`.
    #[arg(long = "channel", value_parser = parse_channel, required = true)]
    channels: Vec<(Modality, PathBuf)>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "real-valued")]
    mode: EmbedMode,
    /// Per-channel weight as `modality=w`; unlisted channels weigh 1.
    #[arg(long = "weight", value_parser = parse_weight)]
    weights: Vec<(Modality, f64)>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    offset: f64,
    /// Divisor N; defaults to the number of channels.
    #[arg(long)]
    divisor: Option<u32>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    order: Option<StageOrder>,
    #[arg(long)]
    combo: Option<Combination>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset root; overrides `[dataset].root`.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value = "csv")]
    format: TableFormat,
    /// Comma-separated subset of M1..M9.
    #[arg(long, value_delimiter = ',')]
    combos: Option<Vec<Combination>>,
    #[arg(long)]
    samples: Option<usize>,
    /// Also time runs that reload every channel from disk.
    #[arg(long)]
    with_io: bool,
}

fn parse_channel(s: &str) -> Result<(Modality, PathBuf), String> {
    let (m, p) = s.split_once('=').ok_or("expected modality=path")?;
    Ok((m.parse()?, PathBuf::from(p)))
}

fn parse_weight(s: &str) -> Result<(Modality, f64), String> {
    let (m, w) = s.split_once('=').ok_or("expected modality=weight")?;
    Ok((
        m.parse()?,
        w.parse().map_err(|e| format!("weight `{w}`: {e}"))?,
    ))
}

fn parse_mode(s: &str) -> Result<EmbedMode, String> {
    match s {
        "real-valued" | "real" => Ok(EmbedMode::RealValued),
        "wrapping-u8" | "wrap" => Ok(EmbedMode::WrappingU8),
        "saturating-u8" | "saturate" => Ok(EmbedMode::SaturatingU8),
        other => Err(format!("unknown mode `{other}`")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    let result = match cli.command {
        Command::Inspect { path } => inspect(&path),
        Command::Convert { input, output, png } => convert(&input, &output, png),
        Command::Embed(args) => embed_files(args),
        Command::Preprocess(args) => preprocess(args),
        Command::Evaluate { pred, gt, out } => evaluate(&pred, &gt, &out),
        Command::Bench(args) => bench(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn inspect(path: &Path) -> Result<u8> {
    let img = read_nifti(path)?;
    println!("{}", img.header());
    Ok(0)
}

fn convert(input: &Path, output: &Path, png: bool) -> Result<u8> {
    let img = read_nifti(input)?;
    if png {
        let stem = file_stem(input);
        let manifest = export_png_stack(img.volume(), output, &stem, None)?;
        println!(
            "wrote {} slices to {}",
            manifest.files.len(),
            output.display()
        );
    } else {
        let compress = output.extension().is_some_and(|e| e == "gz");
        write_nifti_file(output, img.header(), img.stored(), compress)?;
        println!("wrote {}", output.display());
    }
    Ok(0)
}

fn file_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.trim_end_matches(".gz")
        .trim_end_matches(".nii")
        .trim_end_matches(".hdr")
        .to_string()
}

fn embed_files(args: EmbedArgs) -> Result<u8> {
    let mut cfg = EmbedConfig::default()
        .with_mode(args.mode)
        .with_offset(args.offset);
    for (m, w) in args.weights {
        cfg = cfg.with_weight(m, w);
    }
    if let Some(n) = args.divisor {
        cfg = cfg.with_divisor(n);
    }
    let members = args
        .channels
        .iter()
        .map(|(m, p)| Ok((*m, read_nifti(p)?.into_parts().1)))
        .collect::<Result<Vec<_>>>()?;
    let fused = embed(&ModalitySet::new(members)?, &cfg)?;
    save(&args.out, &fused, "embedded")?;
    println!(
        "wrote {} ({})",
        args.out.display(),
        shape_text(fused.shape())
    );
    Ok(0)
}

fn save(path: &Path, v: &Volume, description: &str) -> Result<()> {
    let compress = path.extension().is_some_and(|e| e == "gz");
    let header = NiftiHeader::for_volume(v).with_description(description);
    write_nifti_file(path, &header, v, compress)
        .with_context(|| format!("writing {}", path.display()))
}

fn shape_text([x, y, z]: [usize; 3]) -> String {
    format!("{x}x{y}x{z}")
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(order) = args.order {
        cfg.pipeline.order = order;
    }
    if let Some(combo) = args.combo {
        cfg.combo = combo;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(root) = &args.dataset {
        let pattern = cfg.dataset.as_ref().map(|d| d.pattern.clone());
        cfg.dataset = Some(config::DatasetSection {
            root: root.clone(),
            pattern: pattern.unwrap_or_else(|| mriembed::dataset::DEFAULT_PATTERN.to_string()),
        });
    }
    Ok(cfg)
}

fn load_index(cfg: &RunConfig) -> Result<Option<DatasetIndex>> {
    let Some(ds) = &cfg.dataset else {
        return Ok(None);
    };
    let layout = DatasetLayout::new(ds.pattern.clone())?;
    Ok(Some(scan_dataset_with(&ds.root, &layout)?))
}

struct Patient {
    id: String,
    channels: Vec<(Modality, Volume)>,
    ground_truth: Option<Volume>,
}

fn load_patient(cfg: &RunConfig, index: Option<&DatasetIndex>, i: usize) -> Result<Patient> {
    let wanted = cfg.combo.modalities();
    match index {
        Some(index) => {
            let entry = &index.patients[i];
            let channels = wanted
                .iter()
                .map(|m| Ok((*m, read_nifti(&entry.channel_paths[m])?.into_parts().1)))
                .collect::<Result<Vec<_>>>()?;
            let ground_truth = match &entry.ground_truth_path {
                Some(p) => Some(read_nifti(p)?.into_parts().1),
                None => None,
            };
            Ok(Patient {
                id: entry.patient_id.clone(),
                channels,
                ground_truth,
            })
        }
        None => {
            let p = synthetic_channels(&cfg.synthetic.spec(patient_seed(cfg.seed, i)), wanted);
            Ok(Patient {
                id: format!("synthetic_{i:03}"),
                channels: p.channels,
                ground_truth: Some(p.ground_truth),
            })
        }
    }
}

fn preprocess(args: RunArgs) -> Result<u8> {
    let cfg = resolve(&args)?;
    let index = load_index(&cfg)?;
    let count = index.as_ref().map_or(cfg.synthetic.patients, |ix| ix.len());
    let out = &cfg.out_dir;
    cfg.echo(out)?;
    let skipped = index.as_ref().map_or(0, |ix| ix.skipped.len());
    let mut done = 0;
    for i in 0..count {
        match preprocess_one(&cfg, index.as_ref(), i) {
            Ok(id) => {
                done += 1;
                log::info!("{id}: done");
            }
            Err(e) => log::error!("patient {i}: {e:#}"),
        }
    }
    println!(
        "{done} of {} patients preprocessed into {}",
        count + skipped,
        out.display()
    );
    Ok(u8::from(done < count + skipped))
}

fn preprocess_one(cfg: &RunConfig, index: Option<&DatasetIndex>, i: usize) -> Result<String> {
    let patient = load_patient(cfg, index, i)?;
    let set = ModalitySet::new(patient.channels)?;
    let sample = run_pipeline(
        &set,
        patient.ground_truth.as_ref(),
        &cfg.pipeline,
        &cfg.embed,
    )
    .with_context(|| format!("{}: pipeline", patient.id))?;
    let dir = cfg.out_dir.join(&patient.id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let ext = if cfg.export.compress { "nii.gz" } else { "nii" };
    if cfg.export.nifti {
        save(
            &dir.join(format!("embedded.{ext}")),
            &sample.embedded,
            "embedded",
        )?;
        if let Some(gt) = &sample.ground_truth {
            save(&dir.join(format!("ground_truth.{ext}")), gt, "ground truth")?;
        }
    }
    if cfg.export.png {
        let (lo, hi) = cfg.pipeline.slice_range();
        export_png_stack(
            &sample.embedded,
            dir.join("png"),
            "embedded",
            Some([lo, hi]),
        )?;
        if let Some(gt) = &sample.ground_truth {
            export_png_stack(gt, dir.join("png"), "ground_truth", Some([lo, hi]))?;
        }
    }
    let provenance = serde_json::to_string_pretty(&sample.provenance)?;
    fs::write(dir.join("provenance.json"), provenance).context("writing provenance")?;
    Ok(patient.id)
}

fn evaluate(pred: &Path, gt: &Path, out: &Path) -> Result<u8> {
    let mut pairs = Vec::new();
    collect_masks(gt, gt, &mut |rel| {
        let id = file_stem(rel);
        let id = match rel.parent().filter(|p| !p.as_os_str().is_empty()) {
            Some(parent) => format!("{}/{id}", parent.display()),
            None => id,
        };
        pairs.push((id, pred.join(rel), gt.join(rel)));
    })?;
    pairs.sort();
    let report = evaluate_batch(&pairs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("dice.csv"), report.to_csv()).context("writing dice.csv")?;
    fs::write(out.join("dice_report.json"), report.to_json())
        .context("writing dice_report.json")?;
    println!("{}", report.summary());
    Ok(u8::from(!report.failures.is_empty()))
}

fn collect_masks(root: &Path, dir: &Path, found: &mut dyn FnMut(&Path)) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_masks(root, &path, found)?;
        } else {
            let name = path.to_string_lossy();
            if name.ends_with(".nii") || name.ends_with(".nii.gz") {
                found(path.strip_prefix(root).expect("walked from root"));
            }
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<u8> {
    let mut cfg = resolve(&args.run)?;
    if let Some(reps) = args.reps {
        cfg.bench.reps = reps;
    }
    if let Some(combos) = args.combos {
        cfg.bench.combos = combos;
    }
    if let Some(samples) = args.samples {
        cfg.bench.samples = samples;
    }
    cfg.bench.with_io |= args.with_io;
    if cfg.bench.samples == 0 {
        bail!("samples must be at least 1");
    }
    let index = load_index(&cfg)?;
    let source = match &index {
        Some(ix) => BenchSource::Dataset(&ix.patients[..cfg.bench.samples.min(ix.len())]),
        None => BenchSource::Synthetic {
            spec: cfg.synthetic.spec(cfg.seed),
            samples: cfg.bench.samples,
        },
    };
    let opts = BenchOptions {
        reps: cfg.bench.reps,
        with_io: cfg.bench.with_io,
    };
    let report = run_bench(source, &cfg.bench.combos, &cfg.pipeline, &cfg.embed, opts)?;
    let table = emit_table(&report, args.format);
    let out = &cfg.out_dir;
    cfg.echo(out)?;
    let name = match args.format {
        TableFormat::Csv => "bench.csv",
        TableFormat::Markdown => "bench.md",
    };
    fs::write(out.join(name), &table).with_context(|| format!("writing {name}"))?;
    fs::write(
        out.join("bench_report.json"),
        serde_json::to_string_pretty(&report)?,
    )
    .context("writing bench_report.json")?;
    print!("{table}");
    if let Some(faster) = report.faster_order() {
        println!("faster overall (wall-clock): {faster}");
    }
    Ok(u8::from(report.rows.iter().any(|r| r.failed.is_some())))
}
