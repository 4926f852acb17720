use mriembed::dataset::SkippedPatient;
use mriembed::synthetic::{write_synthetic_dataset, SyntheticSpec};
use mriembed::{read_nifti, scan_dataset, ElementKind, Grade, Modality};

#[test]
fn synthetic_tree_keeps_grades() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        shape: [20, 20, 12],
        kind: ElementKind::I16,
        seed: 4,
    };
    let ids = write_synthetic_dataset(tmp.path(), 2, 2, &spec).unwrap();
    assert_eq!(
        ids,
        [
            "Synth_HGG_000",
            "Synth_HGG_001",
            "Synth_LGG_000",
            "Synth_LGG_001"
        ]
    );
    let index = scan_dataset(tmp.path()).unwrap();
    assert_eq!(index.len(), 4);
    assert_eq!(index.by_grade(Grade::Hgg).count(), 2);
    assert_eq!(index.by_grade(Grade::Lgg).count(), 2);
    for p in &index.patients {
        assert_eq!(
            p.grade,
            if p.patient_id.contains("HGG") {
                Grade::Hgg
            } else {
                Grade::Lgg
            }
        );
        assert_eq!(
            p.channel_paths.keys().copied().collect::<Vec<_>>(),
            Modality::CHANNELS
        );
        let gt = read_nifti(p.ground_truth_path.as_ref().unwrap()).unwrap();
        assert_eq!(gt.volume().shape(), [20, 20, 12]);
    }
    assert!(index.skipped.is_empty());
}

#[test]
fn removing_a_channel_skips_the_patient() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        shape: [8, 8, 4],
        kind: ElementKind::U8,
        seed: 1,
    };
    write_synthetic_dataset(tmp.path(), 3, 0, &spec).unwrap();
    std::fs::remove_file(
        tmp.path()
            .join("HGG/Synth_HGG_002/Synth_HGG_002_t1ce.nii.gz"),
    )
    .unwrap();
    let index = scan_dataset(tmp.path()).unwrap();
    assert_eq!(index.len(), 2);
    assert_eq!(
        index.skipped,
        vec![SkippedPatient {
            patient_id: "Synth_HGG_002".into(),
            grade: Grade::Hgg,
            missing: vec![Modality::T1ce],
        }]
    );
}

#[test]
fn same_seed_same_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        shape: [10, 10, 6],
        kind: ElementKind::F32,
        seed: 99,
    };
    write_synthetic_dataset(a.path(), 1, 1, &spec).unwrap();
    write_synthetic_dataset(b.path(), 1, 1, &spec).unwrap();
    let rel = "LGG/Synth_LGG_000/Synth_LGG_000_flair.nii.gz";
    assert_eq!(
        std::fs::read(a.path().join(rel)).unwrap(),
        std::fs::read(b.path().join(rel)).unwrap()
    );
}
