//! Acceptance gate. Runs each criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{dice_oracle, embed_oracle, random_mask, rng};
use mriembed::nifti::ByteOrder;
use mriembed::synthetic::{synthetic_patient, SyntheticSpec};
use mriembed::{
    confusion, dice, dice_loss, embed, emit_table, export_png_stack, import_png_stack, parse_nifti,
    run_bench, run_pipeline, write_nifti, BenchOptions, BenchSource, Combination, ElementKind,
    EmbedConfig, EmbedMode, Modality, ModalitySet, NiftiHeader, PipelineConfig, Stage, StageOrder,
    TableFormat, Volume, VoxelData,
};
use rand::Rng;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn nifti_round_trip() -> Outcome {
    let start = Instant::now();
    let mut r = rng(0x4e49);
    let mut seen = BTreeSet::new();
    for i in 0..100 {
        let shape = [
            r.random_range(1..=16),
            r.random_range(1..=16),
            r.random_range(1..=12),
        ];
        let n: usize = shape.iter().product();
        let data = match i % 3 {
            0 => VoxelData::U8((0..n).map(|_| r.random()).collect()),
            1 => VoxelData::I16((0..n).map(|_| r.random()).collect()),
            _ => VoxelData::F32((0..n).map(|_| f32::from_bits(r.random())).collect()),
        };
        let v = Volume::new(
            shape,
            [r.random_range(0.5..2.0), 1.0, r.random_range(1.0..3.0)],
            data,
        )
        .unwrap();
        let mut h = NiftiHeader::for_volume(&v);
        h.byte_order = if (i / 3) % 2 == 0 {
            ByteOrder::Little
        } else {
            ByteOrder::Big
        };
        seen.insert((v.kind().to_string(), format!("{:?}", h.byte_order)));
        let bytes = write_nifti(&h, &v, false).map_err(|e| e.to_string())?;
        let img = parse_nifti(&bytes).map_err(|e| format!("volume {i}: {e}"))?;
        ensure(img.header() == &h, || format!("volume {i}: header differs"))?;
        ensure(bits(img.volume().data()) == bits(v.data()), || {
            format!("volume {i}: voxels differ")
        })?;
        ensure(
            img.to_bytes(false).map_err(|e| e.to_string())? == bytes,
            || format!("volume {i}: re-encoded stream differs"),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(seen.len() == 6, || {
        format!("only {} kind/endianness pairs covered", seen.len())
    })?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "100 volumes, 3 kinds x 2 byte orders, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn bits(d: &VoxelData) -> Vec<u64> {
    match d {
        VoxelData::U8(v) => v.iter().map(|&x| u64::from(x)).collect(),
        VoxelData::I16(v) => v.iter().map(|&x| x as u16 as u64).collect(),
        VoxelData::F32(v) => v.iter().map(|x| u64::from(x.to_bits())).collect(),
    }
}

fn dice_oracle_equivalence() -> Outcome {
    let mut r = rng(0xd1ce);
    for i in 0..200 {
        let da = r.random_range(0.0..1.0);
        let db = r.random_range(0.0..1.0);
        let a = random_mask(&mut r, 8 * 8 * 4, da);
        let b = random_mask(&mut r, 8 * 8 * 4, db);
        let va = Volume::from_u8([8, 8, 4], a.clone()).unwrap();
        let vb = Volume::from_u8([8, 8, 4], b.clone()).unwrap();
        let c = confusion(&va, &vb).map_err(|e| e.to_string())?;
        let oracle = dice_oracle(&a, &b);
        ensure(c.dice_fraction() == oracle, || {
            format!(
                "pair {i}: fraction {:?} vs oracle {oracle:?}",
                c.dice_fraction()
            )
        })?;
        ensure(dice(&c) + dice_loss(&c) == 1.0, || {
            format!("pair {i}: dice + loss != 1")
        })?;
    }
    let empty = Volume::from_u8([8, 8, 4], vec![0; 256]).unwrap();
    let c = confusion(&empty, &empty).map_err(|e| e.to_string())?;
    ensure(dice(&c) == 1.0, || format!("both-empty dice {}", dice(&c)))?;
    Ok("200 pairs exact, dice + loss == 1, both-empty = 1.0".into())
}

fn embedding_semantics() -> Outcome {
    let set = ModalitySet::new(vec![
        (
            Modality::Flair,
            Volume::from_u8([4, 4, 2], vec![200; 32]).unwrap(),
        ),
        (
            Modality::T1,
            Volume::from_u8([4, 4, 2], vec![100; 32]).unwrap(),
        ),
    ])
    .map_err(|e| e.to_string())?;
    let cfg = EmbedConfig::default().with_divisor(2);
    let run = |mode| embed(&set, &cfg.clone().with_mode(mode)).map_err(|e| e.to_string());
    let wrap = run(EmbedMode::WrappingU8)?;
    let sat = run(EmbedMode::SaturatingU8)?;
    let real = run(EmbedMode::RealValued)?;
    ensure(wrap.as_u8() == Some(&[22; 32][..]), || {
        format!("wrapping gave {:?}", wrap.data().get_f64(0))
    })?;
    ensure(sat.as_u8() == Some(&[127; 32][..]), || {
        format!("saturating gave {:?}", sat.data().get_f64(0))
    })?;
    ensure(real.as_f32() == Some(&[150.0; 32][..]), || {
        format!("real gave {:?}", real.data().get_f64(0))
    })?;

    let mut r = rng(0xe3bd);
    for s in 0..50 {
        let members: Vec<(Modality, Volume)> = Modality::CHANNELS
            .iter()
            .map(|&m| {
                let n = 16 * 16 * 10;
                let data = match s % 3 {
                    0 => VoxelData::U8((0..n).map(|_| r.random()).collect()),
                    1 => VoxelData::I16((0..n).map(|_| r.random_range(0..4000)).collect()),
                    _ => VoxelData::F32((0..n).map(|_| r.random_range(-100.0..2500.0)).collect()),
                };
                (m, Volume::new([16, 16, 10], [1.0; 3], data).unwrap())
            })
            .collect();
        let oracle_in: Vec<Vec<f64>> = members
            .iter()
            .map(|(_, v)| (0..v.len()).map(|i| v.data().get_f64(i)).collect())
            .collect();
        let set = ModalitySet::new(members).map_err(|e| e.to_string())?;
        let out = embed(&set, &EmbedConfig::default()).map_err(|e| e.to_string())?;
        let expect = embed_oracle(&oracle_in, &[1.0; 4], 4, 0.0);
        let got = out.as_f32().ok_or("real-valued output is not f32")?;
        let same = got
            .iter()
            .zip(&expect)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("set {s}: differs from scalar-loop oracle"))?;
    }
    Ok("200/100 -> 22 / 127 / 150; 50 random 16x16x10 sets match oracle exactly".into())
}

fn order_equivalence(patient: &mriembed::synthetic::SyntheticPatient) -> Outcome {
    let start = Instant::now();
    let pcfg = PipelineConfig::default();
    let ecfg = EmbedConfig::default();
    let mut ms = [0.0f64; 2];
    let mut ops = [0u64; 2];
    for combo in Combination::ALL {
        let members = combo
            .modalities()
            .iter()
            .map(|&m| (m, patient.channel(m).unwrap().clone()))
            .collect();
        let set = ModalitySet::new(members).map_err(|e| e.to_string())?;
        let k = set.len() as u64;
        let run = |order| {
            run_pipeline(
                &set,
                Some(&patient.ground_truth),
                &pcfg.clone().with_order(order),
                &ecfg,
            )
            .map_err(|e| format!("{combo} {order}: {e}"))
        };
        let a = run(StageOrder::EmbedThenSlice)?;
        let b = run(StageOrder::SliceThenEmbed)?;
        ensure(bits(a.embedded.data()) == bits(b.embedded.data()), || {
            format!("{combo}: outputs differ")
        })?;
        ensure(a.ground_truth == b.ground_truth, || {
            format!("{combo}: masks differ")
        })?;
        let sa = a.provenance.stage_ops(Stage::SliceWindow);
        let sb = b.provenance.stage_ops(Stage::SliceWindow);
        ensure(sb == k * sa, || {
            format!("{combo}: slice ops {sb} != {k} x {sa}")
        })?;
        ms[0] += a.provenance.total_ms();
        ms[1] += b.provenance.total_ms();
        ops[0] += a.provenance.element_ops();
        ops[1] += b.provenance.element_ops();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    let faster = if ms[0] <= ms[1] {
        "embed-first"
    } else {
        "slice-first"
    };
    Ok(format!(
        "M1-M9 bit-identical, slice ops exactly K x; wall-clock (report only) embed-first {:.1} ms vs slice-first {:.1} ms, {faster} faster; total ops {} vs {}; reference totals 74059.46 vs 74492.84 ms; {:.1} s",
        ms[0],
        ms[1],
        ops[0],
        ops[1],
        elapsed.as_secs_f64()
    ))
}

fn shape_contract(patient: &mriembed::synthetic::SyntheticPatient) -> Outcome {
    let set = ModalitySet::new(patient.channels.clone()).map_err(|e| e.to_string())?;
    let out = run_pipeline(
        &set,
        Some(&patient.ground_truth),
        &PipelineConfig::default(),
        &EmbedConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure(out.embedded.shape() == [192, 192, 90], || {
        format!("embedded {:?}", out.embedded.shape())
    })?;
    let gt = out.ground_truth.ok_or("no ground truth")?;
    ensure(gt.shape() == [192, 192, 90], || {
        format!("mask {:?}", gt.shape())
    })?;
    let before: BTreeSet<u8> = patient
        .ground_truth
        .as_u8()
        .ok_or("mask not u8")?
        .iter()
        .copied()
        .collect();
    let after: BTreeSet<u8> = gt.as_u8().ok_or("mask not u8")?.iter().copied().collect();
    ensure(after.is_subset(&before), || {
        format!("labels {after:?} not within {before:?}")
    })?;
    Ok(format!(
        "192x192x90, mask labels {after:?} within {before:?}"
    ))
}

fn png_losslessness() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(0x9e9);
    let cases = [
        Volume::from_u8([64, 48, 5], (0..64 * 48 * 5).map(|_| r.random()).collect()).unwrap(),
        Volume::from_i16([64, 48, 5], (0..64 * 48 * 5).map(|_| r.random()).collect()).unwrap(),
        Volume::from_f32(
            [64, 48, 5],
            (0..64 * 48 * 5)
                .map(|_| r.random_range(0.0..65535.0f32).round())
                .collect(),
        )
        .unwrap(),
    ];
    for (i, v) in cases.iter().enumerate() {
        let stem = format!("int{i}");
        export_png_stack(v, tmp.path(), &stem, None).map_err(|e| e.to_string())?;
        let back = import_png_stack(tmp.path().join(format!("{stem}.manifest.json")))
            .map_err(|e| e.to_string())?;
        ensure(back == v.to_f32(), || format!("integer case {i} not exact"))?;
    }
    let mut worst = 0.0f64;
    for s in 0..5 {
        let lo = r.random_range(-1e4f32..0.0);
        let hi = r.random_range(1.0f32..1e4);
        let values: Vec<f32> = (0..64 * 48 * 5).map(|_| r.random_range(lo..hi)).collect();
        let v = Volume::from_f32([64, 48, 5], values.clone()).unwrap();
        let stem = format!("float{s}");
        export_png_stack(&v, tmp.path(), &stem, None).map_err(|e| e.to_string())?;
        let back = import_png_stack(tmp.path().join(format!("{stem}.manifest.json")))
            .map_err(|e| e.to_string())?;
        let min = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let tol = (max - min) / 65535.0;
        for (a, b) in values.iter().zip(back.as_f32().unwrap()) {
            let err = (f64::from(*a) - f64::from(*b)).abs();
            ensure(err <= tol, || {
                format!("float case {s}: error {err} > {tol}")
            })?;
            worst = worst.max(err / tol);
        }
    }
    Ok(format!(
        "3 integer volumes exact; 5 float volumes worst error {worst:.3} of (max-min)/65535"
    ))
}

fn bench_output() -> Outcome {
    let start = Instant::now();
    let run = || {
        run_bench(
            BenchSource::Synthetic {
                spec: SyntheticSpec {
                    seed: 7,
                    ..SyntheticSpec::default()
                },
                samples: 1,
            },
            &Combination::ALL,
            &PipelineConfig::default(),
            &EmbedConfig::default(),
            BenchOptions {
                reps: 3,
                with_io: false,
            },
        )
        .map_err(|e| e.to_string())
    };
    let parse = |csv_text: &str| -> Result<Vec<(String, String, u64)>, String> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(csv_text.as_bytes());
        rdr.records()
            .map(|rec| {
                let rec = rec.map_err(|e| e.to_string())?;
                let ops = rec[5].parse::<u64>().map_err(|e| e.to_string())?;
                Ok((rec[0].to_string(), rec[2].to_string(), ops))
            })
            .collect()
    };
    let first = emit_table(&run()?, TableFormat::Csv);
    let second = emit_table(&run()?, TableFormat::Csv);
    let a = parse(&first)?;
    let b = parse(&second)?;
    let combo_rows = a.iter().filter(|(c, _, _)| c.starts_with('M')).count();
    let totals = a.iter().filter(|(c, _, _)| c == "Overall").count();
    ensure(combo_rows == 18, || {
        format!("{combo_rows} combination rows")
    })?;
    ensure(totals == 2, || format!("{totals} total rows"))?;
    ensure(a == b, || "element_ops differ between runs".to_string())?;
    Ok(format!(
        "18 rows + 2 Overall, element_ops identical on rerun, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let patient = synthetic_patient(&SyntheticSpec {
        shape: [240, 240, 155],
        kind: ElementKind::I16,
        seed: 20,
    });
    let criteria: Vec<(&str, Check)> = vec![
        ("nifti round-trip", Box::new(nifti_round_trip)),
        ("dice oracle equivalence", Box::new(dice_oracle_equivalence)),
        ("embedding semantics", Box::new(embedding_semantics)),
        (
            "order equivalence + cost asymmetry",
            Box::new(|| order_equivalence(&patient)),
        ),
        ("shape contract", Box::new(|| shape_contract(&patient))),
        ("png losslessness", Box::new(png_losslessness)),
        ("bench output", Box::new(bench_output)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
