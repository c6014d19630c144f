use std::fs;
use std::sync::OnceLock;

use nalgebra::DVector;
use phdict::dictionary::{
    build, dce_samples, dce_statistics, generate, AtomCache, BuildSettings, DceMode, DceOptions, DictionaryBundle, GridSpec,
};
use phdict::{Error, ForwardConfig, Simulator};

fn sim() -> &'static Simulator {
    static SIM: OnceLock<Simulator> = OnceLock::new();
    SIM.get_or_init(|| Simulator::new(&ForwardConfig::default()).unwrap())
}

fn small_settings() -> BuildSettings {
    BuildSettings {
        grid: GridSpec::standard(3),
        k: 3,
        rank: Some(2),
        dce_samples: 24,
        restarts: 2,
        elbow_ks: vec![1, 2, 3, 4],
        ..Default::default()
    }
}

fn small_bundle() -> &'static DictionaryBundle {
    static B: OnceLock<DictionaryBundle> = OnceLock::new();
    B.get_or_init(|| build(&ForwardConfig::default(), &small_settings(), None).unwrap())
}

#[test]
fn two_by_two_by_two_dictionary_shape_and_sign() {
    let grid = GridSpec::standard(2);
    let d = generate(&grid, sim(), None).unwrap();
    assert_eq!(d.atoms.shape(), (1001, 8));
    assert!(d.atoms.iter().all(|&v| v >= 0.0));
    for (j, col) in d.atoms.column_iter().enumerate() {
        assert!(col.max() > 0.0, "atom {j} never rises above the background");
        assert_eq!(d.labels[j], grid.label(j));
    }
}

#[test]
fn cached_atoms_match_fresh_ones_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::standard(2);
    let cache = AtomCache::open(dir.path(), sim()).unwrap();
    let fresh = generate(&grid, sim(), None).unwrap();
    let first = generate(&grid, sim(), Some(&cache)).unwrap();
    let second = generate(&grid, sim(), Some(&cache)).unwrap();
    let bits = |m: &nalgebra::DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&fresh.atoms), bits(&first.atoms));
    assert_eq!(bits(&first.atoms), bits(&second.atoms));
}

#[test]
fn subdictionaries_partition_the_atoms() {
    let b = small_bundle();
    let p = b.dictionary.n_atoms();
    let mut count = vec![0; p];
    for (i, s) in b.subs.iter().enumerate() {
        assert!(!s.columns.is_empty());
        assert!(s.columns.contains(&s.medoid));
        assert_eq!(b.clustering.medoids[i], s.medoid);
        for &j in &s.columns {
            count[j] += 1;
            assert_eq!(b.clustering.assignment[j], i);
        }
        assert_eq!(s.w.shape(), (1001, s.rank()));
        assert_eq!(s.h.shape(), (s.rank(), s.columns.len()));
        assert!(s.w.iter().chain(s.h.iter()).all(|&v| v >= 0.0));
    }
    assert!(count.iter().all(|&c| c == 1));
    for w in b.elbow.windows(2) {
        assert!(w[1].1 <= w[0].1, "elbow costs {:?}", b.elbow);
    }
}

#[test]
fn diagonal_dce_whitens_held_out_errors() {
    let b = small_bundle();
    let labels = b.block_labels(0);
    let spacing = b.settings.grid.spacing();
    let w = &b.subs[0].w;
    let train = DceOptions { samples: 200, mode: DceMode::Diagonal, seed: 17, ..Default::default() };
    let e = dce_samples(sim(), w, &labels, spacing, 0, &train).unwrap();
    let stats = dce_statistics(&e, DceMode::Diagonal).unwrap();
    let held = dce_samples(sim(), w, &labels, spacing, 0, &DceOptions { samples: 40, seed: 18, ..train }).unwrap();
    let m = w.nrows() as f64;
    let mean: f64 = held.column_iter().map(|c| stats.mahalanobis_sq(&(c - &stats.mean))).sum::<f64>() / held.ncols() as f64;
    assert!(mean >= 0.5 * m && mean <= 2.0 * m, "mean squared Mahalanobis distance {mean:.1} for m = {m}");
}

#[test]
fn dce_samples_do_not_depend_on_thread_count() {
    let b = small_bundle();
    let labels = b.block_labels(1);
    let opts = DceOptions { samples: 12, seed: 5, ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| dce_samples(sim(), &b.subs[1].w, &labels, b.settings.grid.spacing(), 1, &opts).unwrap())
    };
    let a = run(1);
    let c = run(3);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), c.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(dce_statistics(&a, DceMode::Full).unwrap(), dce_statistics(&c, DceMode::Full).unwrap());
}

#[test]
fn bundle_round_trips_bit_exactly() {
    let b = small_bundle();
    let dir = tempfile::tempdir().unwrap();
    b.save(dir.path()).unwrap();
    let back = DictionaryBundle::load(dir.path(), Some(&ForwardConfig::default())).unwrap();
    assert_eq!(&back, b);
    for (x, y) in b.dictionary.atoms.iter().zip(back.dictionary.atoms.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    for (s, t) in b.subs.iter().zip(&back.subs) {
        for (x, y) in s.w.iter().chain(s.h.iter()).zip(t.w.iter().chain(t.h.iter())) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let e = DVector::from_element(s.dce.mean.len(), 0.01);
        assert_eq!(s.dce.mahalanobis_sq(&e).to_bits(), t.dce.mahalanobis_sq(&e).to_bits());
    }
}

#[test]
fn damaged_bundles_are_rejected() {
    let b = small_bundle();
    let dir = tempfile::tempdir().unwrap();
    b.save(dir.path()).unwrap();

    let mut other = ForwardConfig::default();
    other.measurement.precision = 0.01;
    assert!(matches!(DictionaryBundle::load(dir.path(), Some(&other)), Err(Error::Bundle(_))));

    let atoms = dir.path().join("atoms.f64");
    let mut bytes = fs::read(&atoms).unwrap();
    bytes[100] ^= 1;
    fs::write(&atoms, &bytes).unwrap();
    let err = DictionaryBundle::load(dir.path(), None).unwrap_err();
    assert!(matches!(err, Error::Bundle(ref s) if s.contains("checksum")), "{err}");

    let manifest = dir.path().join("manifest.toml");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, &text[..text.len() / 2]).unwrap();
    assert!(matches!(DictionaryBundle::load(dir.path(), None), Err(Error::Bundle(_))));
    fs::remove_file(&manifest).unwrap();
    assert!(matches!(DictionaryBundle::load(dir.path(), None), Err(Error::Bundle(_))));
}

#[test]
fn unchanged_rebuild_reuses_the_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ForwardConfig::default();
    let settings = BuildSettings { grid: GridSpec::standard(2), k: 2, rank: Some(1), dce_samples: 8, ..Default::default() };
    let first = build(&cfg, &settings, Some(dir.path())).unwrap();
    let manifest = dir.path().join("manifest.toml");
    let stamp = fs::metadata(&manifest).unwrap().modified().unwrap();
    let again = build(&cfg, &settings, Some(dir.path())).unwrap();
    assert_eq!(first, again);
    assert_eq!(fs::metadata(&manifest).unwrap().modified().unwrap(), stamp);

    let changed = BuildSettings { k: 3, ..settings };
    let third = build(&cfg, &changed, Some(dir.path())).unwrap();
    assert_eq!(third.subs.len(), 3);
    assert_eq!(third.dictionary.atoms, first.dictionary.atoms);
    assert_eq!(phdict::dictionary::read_manifest(dir.path()).unwrap().settings.k, 3);
}

#[test]
fn grid_with_zero_count_is_rejected() {
    let grid = GridSpec { counts: [2, 0, 2], ..GridSpec::standard(2) };
    assert!(matches!(generate(&grid, sim(), None), Err(Error::Config(_))));
}
