//! Timing and element-op comparison of the two stage orders across the nine
//! modality combinations M1..M9.
//!
//! Wall-clock numbers are noisy and environment-specific. The element-op
//! counts from each run's provenance are deterministic and carry the
//! comparison: slicing first repeats the slice-window stage once per
//! modality.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::PatientEntry;
use crate::embedding::{EmbedConfig, ModalitySet};
use crate::nifti::{read_nifti, save_volume};
use crate::pipeline::{run_pipeline, PipelineConfig, Stage, StageOrder};
use crate::synthetic::{patient_seed, synthetic_patient, SyntheticSpec};
use crate::volume::{Modality, Volume};

/// The multi-channel combinations benchmarked by the preprocessing-order
/// experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Combination {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
    M9,
}

impl Combination {
    pub const ALL: [Combination; 9] = [
        Combination::M1,
        Combination::M2,
        Combination::M3,
        Combination::M4,
        Combination::M5,
        Combination::M6,
        Combination::M7,
        Combination::M8,
        Combination::M9,
    ];

    pub fn modalities(self) -> &'static [Modality] {
        use Modality::*;
        match self {
            Combination::M1 => &[Flair, T1],
            Combination::M2 => &[Flair, T2],
            Combination::M3 => &[Flair, T1ce],
            Combination::M4 => &[T1, T1ce],
            Combination::M5 => &[T2, T1ce],
            Combination::M6 => &[Flair, T1, T2],
            Combination::M7 => &[Flair, T1, T1ce],
            Combination::M8 => &[Flair, T2, T1ce],
            Combination::M9 => &[Flair, T1, T2, T1ce],
        }
    }

    pub fn modality_label(self) -> String {
        self.modalities()
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Combination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Combination::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown combination `{s}` (expected M1..M9)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("at least 3 repetitions are required, got {0}")]
    TooFewReps(usize),
    #[error("no combinations requested")]
    NoCombinations,
    #[error("no samples to benchmark")]
    NoSamples,
    #[error("loading {path}: {message}")]
    Load { path: PathBuf, message: String },
}

/// Where benchmark patients come from.
#[derive(Debug, Clone)]
pub enum BenchSource<'a> {
    /// `samples` seeded BraTS-shaped patients generated in memory.
    Synthetic { spec: SyntheticSpec, samples: usize },
    /// Patients of an indexed dataset.
    Dataset(&'a [PatientEntry]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub reps: usize,
    /// Also time a variant that loads the channels from disk on every run.
    pub with_io: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 5,
            with_io: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub combination: Combination,
    pub modalities: Vec<Modality>,
    pub order: StageOrder,
    /// Mean in-memory pipeline time per sample.
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Element ops of one pass over all samples.
    pub element_ops: u64,
    pub slice_window_ops: u64,
    pub slice_window_passes: u32,
    pub repetitions: usize,
    pub io_mean_ms: Option<f64>,
    pub io_std_ms: Option<f64>,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderTotal {
    pub order: StageOrder,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub element_ops: u64,
    pub io_mean_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub totals: Vec<OrderTotal>,
    pub seed: Option<u64>,
    pub samples: usize,
    pub pipeline: PipelineConfig,
    pub embed: EmbedConfig,
}

impl BenchReport {
    pub fn row(&self, combination: Combination, order: StageOrder) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.combination == combination && r.order == order)
    }

    pub fn total(&self, order: StageOrder) -> Option<&OrderTotal> {
        self.totals.iter().find(|t| t.order == order)
    }

    /// The order with the lower overall mean wall-clock, if both ran.
    pub fn faster_order(&self) -> Option<StageOrder> {
        let a = self.total(StageOrder::EmbedThenSlice)?;
        let b = self.total(StageOrder::SliceThenEmbed)?;
        Some(if a.mean_ms <= b.mean_ms {
            a.order
        } else {
            b.order
        })
    }

    fn has_io(&self) -> bool {
        self.rows.iter().any(|r| r.io_mean_ms.is_some())
    }
}

#[derive(Default)]
struct RowAcc {
    times: Vec<f64>,
    io_times: Vec<f64>,
    element_ops: u64,
    slice_ops: u64,
    slice_passes: u32,
    failed: Option<String>,
}

struct Sample {
    channels: Vec<(Modality, Volume)>,
    files: Vec<(Modality, PathBuf)>,
}

impl Sample {
    fn set_for(&self, combination: Combination) -> Result<ModalitySet, String> {
        let members = combination
            .modalities()
            .iter()
            .map(|m| {
                self.channels
                    .iter()
                    .find(|(c, _)| c == m)
                    .map(|(_, v)| (*m, v.clone()))
                    .ok_or_else(|| format!("missing {m}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ModalitySet::new(members).map_err(|e| e.to_string())
    }

    fn load_set(&self, combination: Combination) -> Result<ModalitySet, String> {
        let members = combination
            .modalities()
            .iter()
            .map(|m| {
                let (_, path) = self
                    .files
                    .iter()
                    .find(|(c, _)| c == m)
                    .ok_or_else(|| format!("missing {m}"))?;
                let img = read_nifti(path).map_err(|e| e.to_string())?;
                Ok((*m, img.into_parts().1))
            })
            .collect::<Result<Vec<_>, String>>()?;
        ModalitySet::new(members).map_err(|e| e.to_string())
    }
}

/// Runs every requested combination under both stage orders.
///
/// Per row and sample: one discarded warm-up run (first sample only), then
/// `reps` timed runs. A pipeline error marks the row failed and skips its
/// remaining runs. Rows execute sequentially on the calling thread.
pub fn run_bench(
    source: BenchSource<'_>,
    combos: &[Combination],
    pcfg: &PipelineConfig,
    ecfg: &EmbedConfig,
    opts: BenchOptions,
) -> Result<BenchReport, BenchError> {
    if opts.reps < 3 {
        return Err(BenchError::TooFewReps(opts.reps));
    }
    if combos.is_empty() {
        return Err(BenchError::NoCombinations);
    }
    let (sample_count, seed) = match &source {
        BenchSource::Synthetic { spec, samples } => (*samples, Some(spec.seed)),
        BenchSource::Dataset(entries) => (entries.len(), None),
    };
    if sample_count == 0 {
        return Err(BenchError::NoSamples);
    }
    let scratch = if opts.with_io && matches!(source, BenchSource::Synthetic { .. }) {
        Some(tempfile::tempdir().map_err(|e| BenchError::Load {
            path: std::env::temp_dir(),
            message: e.to_string(),
        })?)
    } else {
        None
    };

    let rows_spec: Vec<(Combination, StageOrder)> = combos
        .iter()
        .flat_map(|&c| StageOrder::BOTH.map(|o| (c, o)))
        .collect();
    let mut accs: Vec<RowAcc> = rows_spec.iter().map(|_| RowAcc::default()).collect();

    for s in 0..sample_count {
        let sample = load_sample(&source, s, scratch.as_ref().map(|d| d.path()))?;
        for ((combo, order), acc) in rows_spec.iter().zip(accs.iter_mut()) {
            if acc.failed.is_some() {
                continue;
            }
            if let Err(e) = bench_row(&sample, *combo, *order, pcfg, ecfg, opts, s == 0, acc) {
                log::warn!("{combo} {order}: {e}");
                acc.failed = Some(e);
            }
        }
    }

    let rows: Vec<BenchRow> = rows_spec
        .iter()
        .zip(accs)
        .map(|(&(combination, order), acc)| {
            let (mean_ms, std_ms) = mean_std(&acc.times);
            let io = (!acc.io_times.is_empty()).then(|| mean_std(&acc.io_times));
            BenchRow {
                combination,
                modalities: combination.modalities().to_vec(),
                order,
                mean_ms,
                std_ms,
                element_ops: acc.element_ops,
                slice_window_ops: acc.slice_ops,
                slice_window_passes: acc.slice_passes,
                repetitions: opts.reps,
                io_mean_ms: io.map(|(m, _)| m),
                io_std_ms: io.map(|(_, s)| s),
                failed: acc.failed,
            }
        })
        .collect();

    let totals = StageOrder::BOTH
        .iter()
        .map(|&order| {
            let ok: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.order == order && r.failed.is_none())
                .collect();
            OrderTotal {
                order,
                mean_ms: ok.iter().map(|r| r.mean_ms).sum(),
                std_ms: ok.iter().map(|r| r.std_ms * r.std_ms).sum::<f64>().sqrt(),
                element_ops: ok.iter().map(|r| r.element_ops).sum(),
                io_mean_ms: ok.iter().map(|r| r.io_mean_ms).sum::<Option<f64>>(),
            }
        })
        .collect();

    Ok(BenchReport {
        rows,
        totals,
        seed,
        samples: sample_count,
        pipeline: pcfg.clone(),
        embed: ecfg.clone(),
    })
}

fn load_sample(
    source: &BenchSource<'_>,
    index: usize,
    scratch: Option<&std::path::Path>,
) -> Result<Sample, BenchError> {
    match source {
        BenchSource::Synthetic { spec, .. } => {
            let patient = synthetic_patient(&SyntheticSpec {
                seed: patient_seed(spec.seed, index),
                ..*spec
            });
            let mut files = Vec::new();
            if let Some(dir) = scratch {
                for (m, v) in &patient.channels {
                    let path = dir.join(format!("sample{index:03}_{}.nii.gz", m.token()));
                    save_volume(&path, v).map_err(|e| BenchError::Load {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                    files.push((*m, path));
                }
            }
            Ok(Sample {
                channels: patient.channels,
                files,
            })
        }
        BenchSource::Dataset(entries) => {
            let entry = &entries[index];
            let mut channels = Vec::new();
            let mut files = Vec::new();
            for (&m, path) in &entry.channel_paths {
                let img = read_nifti(path).map_err(|e| BenchError::Load {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                channels.push((m, img.into_parts().1));
                files.push((m, path.clone()));
            }
            Ok(Sample { channels, files })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn bench_row(
    sample: &Sample,
    combo: Combination,
    order: StageOrder,
    pcfg: &PipelineConfig,
    ecfg: &EmbedConfig,
    opts: BenchOptions,
    warm_up: bool,
    acc: &mut RowAcc,
) -> Result<(), String> {
    let set = sample.set_for(combo)?;
    let cfg = pcfg.clone().with_order(order);
    if warm_up {
        run_pipeline(&set, None, &cfg, ecfg).map_err(|e| e.to_string())?;
    }
    let mut sample_ops = None;
    for _ in 0..opts.reps {
        let start = Instant::now();
        let out = run_pipeline(&set, None, &cfg, ecfg).map_err(|e| e.to_string())?;
        acc.times.push(start.elapsed().as_secs_f64() * 1e3);
        let ops = out.provenance.element_ops();
        match sample_ops {
            None => {
                sample_ops = Some(ops);
                acc.element_ops += ops;
                acc.slice_ops += out.provenance.stage_ops(Stage::SliceWindow);
                acc.slice_passes = out
                    .provenance
                    .stage(Stage::SliceWindow)
                    .map_or(0, |r| r.passes);
            }
            Some(prev) if prev != ops => {
                return Err(format!(
                    "element ops changed between repetitions ({prev} vs {ops})"
                ));
            }
            Some(_) => {}
        }
    }
    if !sample.files.is_empty() {
        for _ in 0..opts.reps {
            let start = Instant::now();
            let loaded = sample.load_set(combo)?;
            run_pipeline(&loaded, None, &cfg, ecfg).map_err(|e| e.to_string())?;
            acc.io_times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(())
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "md" | "markdown" => Ok(TableFormat::Markdown),
            other => Err(format!("unknown format `{other}` (expected csv or md)")),
        }
    }
}

pub const CSV_COLUMNS: [&str; 7] = [
    "combination",
    "modalities",
    "order",
    "mean_ms",
    "std_ms",
    "element_ops",
    "reps",
];

/// Renders a report.
///
/// CSV is long-form: one row per combination and order, then one `Overall`
/// row per order. Comment lines (`#`) echo the seed and configuration, and
/// list failed rows. When the with-I/O variant ran, `io_mean_ms` and
/// `io_std_ms` columns are appended.
///
/// Markdown is wide-form like the published table: one row per combination
/// with both orders side by side, then `Overall`.
pub fn emit_table(report: &BenchReport, format: TableFormat) -> String {
    match format {
        TableFormat::Csv => emit_csv(report),
        TableFormat::Markdown => emit_markdown(report),
    }
}

fn emit_csv(report: &BenchReport) -> String {
    let mut out = String::new();
    match report.seed {
        Some(seed) => writeln!(out, "# seed={seed} samples={}", report.samples).unwrap(),
        None => writeln!(out, "# seed=none samples={}", report.samples).unwrap(),
    }
    writeln!(
        out,
        "# pipeline={}",
        serde_json::to_string(&report.pipeline).unwrap()
    )
    .unwrap();
    writeln!(
        out,
        "# embed={}",
        serde_json::to_string(&report.embed).unwrap()
    )
    .unwrap();
    for r in report.rows.iter().filter(|r| r.failed.is_some()) {
        writeln!(
            out,
            "# failed {} {}: {}",
            r.combination,
            r.order,
            r.failed.as_deref().unwrap_or("")
        )
        .unwrap();
    }
    let io = report.has_io();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
    if io {
        header.extend(["io_mean_ms", "io_std_ms"]);
    }
    wtr.write_record(&header).unwrap();
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_default();
    for r in &report.rows {
        let mut rec = vec![
            r.combination.to_string(),
            r.combination.modality_label(),
            r.order.to_string(),
            format!("{:.3}", r.mean_ms),
            format!("{:.3}", r.std_ms),
            r.element_ops.to_string(),
            r.repetitions.to_string(),
        ];
        if io {
            rec.extend([opt(r.io_mean_ms), opt(r.io_std_ms)]);
        }
        wtr.write_record(&rec).unwrap();
    }
    if !report.rows.is_empty() {
        let reps = report.rows[0].repetitions;
        for t in &report.totals {
            let mut rec = vec![
                "Overall".to_string(),
                String::new(),
                t.order.to_string(),
                format!("{:.3}", t.mean_ms),
                format!("{:.3}", t.std_ms),
                t.element_ops.to_string(),
                reps.to_string(),
            ];
            if io {
                rec.extend([opt(t.io_mean_ms), String::new()]);
            }
            wtr.write_record(&rec).unwrap();
        }
    }
    out.push_str(std::str::from_utf8(&wtr.into_inner().unwrap()).unwrap());
    out
}

fn emit_markdown(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str("| Combination | Modalities | embed-first (ms) | slice-first (ms) | embed-first ops | slice-first ops |\n");
    out.push_str("|---|---|---:|---:|---:|---:|\n");
    let mut combos: Vec<Combination> = report.rows.iter().map(|r| r.combination).collect();
    combos.dedup();
    let cell_ms = |r: Option<&BenchRow>| match r {
        Some(r) if r.failed.is_none() => format!("{:.2} ± {:.2}", r.mean_ms, r.std_ms),
        Some(_) => "failed".to_string(),
        None => "-".to_string(),
    };
    let cell_ops = |r: Option<&BenchRow>| match r {
        Some(r) if r.failed.is_none() => r.element_ops.to_string(),
        _ => "-".to_string(),
    };
    for c in &combos {
        let a = report.row(*c, StageOrder::EmbedThenSlice);
        let b = report.row(*c, StageOrder::SliceThenEmbed);
        writeln!(
            out,
            "| {c} | {} | {} | {} | {} | {} |",
            c.modality_label().replace('+', ", "),
            cell_ms(a),
            cell_ms(b),
            cell_ops(a),
            cell_ops(b)
        )
        .unwrap();
    }
    if !combos.is_empty() {
        let t = |o| report.total(o);
        let ms = |o| {
            t(o).map_or("-".to_string(), |t: &OrderTotal| {
                format!("{:.2}", t.mean_ms)
            })
        };
        let ops = |o| t(o).map_or("-".to_string(), |t: &OrderTotal| t.element_ops.to_string());
        writeln!(
            out,
            "| Overall | | {} | {} | {} | {} |",
            ms(StageOrder::EmbedThenSlice),
            ms(StageOrder::SliceThenEmbed),
            ops(StageOrder::EmbedThenSlice),
            ops(StageOrder::SliceThenEmbed)
        )
        .unwrap();
    }
    out
}
