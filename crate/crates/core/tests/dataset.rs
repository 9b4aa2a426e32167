use fpm_core::data::augment::Complexity;
use fpm_core::data::dataset::*;
use fpm_core::field::RealGrid;
use fpm_core::forward::NoiseModel;
use fpm_core::patterns::PatternSet;
use fpm_core::OpticalConfig;

fn small() -> (OpticalConfig, DatasetConfig) {
    let cfg = OpticalConfig::usaf_system().with_hr_size(64);
    let dcfg = DatasetConfig {
        count: 12,
        seed: 5,
        noise: NoiseModel {
            gaussian_sigma: 0.01,
            photons_per_unit: 0.0,
        },
        phase: PhaseMode::Smooth { peak: 0.5 },
        ..DatasetConfig::default()
    };
    (cfg, dcfg)
}

#[test]
fn split_arithmetic() {
    assert_eq!(split_sizes(24, [4, 1, 1]).unwrap(), [16, 4, 4]);
    assert_eq!(split_sizes(6, [4, 1, 1]).unwrap(), [4, 1, 1]);
    assert_eq!(split_sizes(7, [4, 1, 1]).unwrap(), [4, 1, 2]);
    assert!(split_sizes(5, [0, 0, 0]).is_err());
}

#[test]
fn generation_is_seeded_and_resimulates() {
    let (cfg, dcfg) = small();
    let pats = PatternSet::bundled_ten().patterns;
    let a = generate_dataset::<f64>(&cfg, &pats, &dcfg).unwrap();
    let b = generate_dataset::<f64>(&cfg, &pats, &dcfg).unwrap();
    assert_eq!(a.len(), 12);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.stack, y.stack);
        assert_eq!(x.target, y.target);
        assert!(resimulates_exactly(x).unwrap());
        assert_eq!(x.stack.len(), 10);
        let want = if x.rois <= dcfg.simple_threshold {
            Complexity::Simple
        } else {
            Complexity::Complex
        };
        assert_eq!(x.complexity, want);
    }
    let counts = [Split::Train, Split::Val, Split::Test].map(|s| a.iter().filter(|x| x.split == s).count());
    assert_eq!(counts, [8, 2, 2]);
    let other = generate_dataset::<f64>(&cfg, &pats, &DatasetConfig { seed: 6, ..dcfg }).unwrap();
    assert_ne!(other[0].target, a[0].target);
}

#[test]
fn written_dataset_reads_back() {
    let (cfg, dcfg) = small();
    let dcfg = DatasetConfig { count: 3, ..dcfg };
    let pats = PatternSet::bundled_ten().patterns;
    let a = generate_dataset::<f64>(&cfg, &pats, &dcfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &a).unwrap();
    assert!(dir.path().join("sample_0000").join("meta").exists());
    let b = read_dataset::<f64>(dir.path()).unwrap();
    assert_eq!(b.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.target, y.target);
        assert_eq!((x.seed, x.rois, x.split, x.complexity, x.noise), (y.seed, y.rois, y.split, y.complexity, y.noise));
        assert!(resimulates_exactly(y).unwrap());
    }
    assert!(read_dataset::<f64>(&dir.path().join("sample_0000")).is_err());
}

#[test]
fn tiles_and_contrast_filter() {
    let img = RealGrid::from_fn(64, 64, |i, j| (i * 64 + j) as f64);
    let tiles = tile_split(&img, 4).unwrap();
    assert_eq!(tiles.len(), 16);
    assert!(tiles.iter().all(|t| t.dims() == (16, 16)));
    assert_eq!(tiles[5][(0, 0)], img[(16, 16)]);
    assert!(tile_split(&img, 3).is_err());

    let flat = vec![RealGrid::filled(4, 4, 1.0); 5];
    assert_eq!(contrast_rank(&flat, 0.5), vec![0, 1, 2]);

    let mut mixed = vec![RealGrid::filled(4, 4, 0.3); 4];
    mixed[1] = RealGrid::from_fn(4, 4, |i, j| ((i + j) % 2) as f64);
    mixed[3] = RealGrid::from_fn(4, 4, |i, _| i as f64 * 0.1);
    let kept = contrast_filter(&mixed, 0.5);
    assert_eq!(kept, vec![mixed[1].clone(), mixed[3].clone()]);
}
