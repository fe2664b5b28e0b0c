use std::fs;
use std::path::Path;

use icrlsm_core::dataset::{
    generate_synthetic, load_all, load_dataset, load_meta, save_dataset, GraphSource, Split, SplitCounts, SyntheticSpec,
    META_FILE,
};
use icrlsm_core::scm::ScmInit;
use icrlsm_core::Error;
use sha2::{Digest, Sha256};

fn spec(graph: &str, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        graph: GraphSource::Registry(graph.into()),
        scm: ScmInit::default(),
        counts: SplitCounts { train: 300, val: 40, test: 40 },
        seed,
    }
}

fn write(dir: &Path, graph: &str, seed: u64) {
    let (a, b, c) = generate_synthetic(&spec(graph, seed)).unwrap();
    save_dataset(dir, &[&a, &b, &c]).unwrap();
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val, test) = generate_synthetic(&spec("G3", 11)).unwrap();
    save_dataset(dir.path(), &[&train, &val, &test]).unwrap();
    let (lt, lv, ls) = load_all(dir.path()).unwrap();
    for (orig, back) in [(&train, &lt), (&val, &lv), (&test, &ls)] {
        assert_eq!(orig.samples.len(), back.samples.len());
        for (a, b) in orig.samples.iter().zip(&back.samples) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.x), bits(&b.x));
            assert_eq!(bits(&a.x_tilde), bits(&b.x_tilde));
            assert_eq!(a.target, b.target);
            let (ta, tb) = (a.truth.as_ref().unwrap(), b.truth.as_ref().unwrap());
            assert_eq!(bits(&ta.z), bits(&tb.z));
            assert_eq!(bits(&ta.z_tilde), bits(&tb.z_tilde));
            assert_eq!(bits(&ta.e), bits(&tb.e));
            assert_eq!(bits(&ta.e_tilde), bits(&tb.e_tilde));
        }
    }
    let meta = load_meta(dir.path()).unwrap();
    assert_eq!(meta.adjacency, train.meta.adjacency);
    assert_eq!(meta.mixing, train.meta.mixing);
    assert_eq!(meta.seed, 11);
    assert_eq!(meta.graph().unwrap().edge_count(), 4);
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write(a.path(), "G6", 5);
    write(b.path(), "G6", 5);
    for name in [META_FILE, "train.csv", "val.csv", "test.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn width_mismatch_is_a_schema_error() {
    let (small, wide) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write(small.path(), "G3", 1);
    let (train, _, _) = generate_synthetic(&SyntheticSpec {
        graph: GraphSource::Random { n: 5, edge_prob: 0.5 },
        ..spec("G3", 1)
    })
    .unwrap();
    save_dataset(wide.path(), &[&train]).unwrap();
    // swap in a 5-variable table but keep a checksum that matches it
    let bytes = fs::read(wide.path().join("train.csv")).unwrap();
    fs::write(small.path().join("train.csv"), &bytes).unwrap();
    let meta_path = small.path().join(META_FILE);
    let mut meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    meta["files"]["train"]["sha256"] = digest.into();
    meta["files"]["train"]["rows"] = 300.into();
    fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
    assert!(matches!(load_dataset(small.path(), Split::Train), Err(Error::Schema(_))));
}

#[test]
fn truncated_split_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "G3", 2);
    let path = dir.path().join("val.csv");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    match load_dataset(dir.path(), Split::Val) {
        Err(Error::Io { path: p, .. }) => assert!(p.ends_with("val.csv")),
        other => panic!("expected an io error, got {other:?}"),
    }
    // other splits are untouched
    assert_eq!(load_dataset(dir.path(), Split::Test).unwrap().len(), 40);
}

#[test]
fn truncated_meta_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "G1", 3);
    let path = dir.path().join(META_FILE);
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 3]).unwrap();
    assert!(matches!(load_meta(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn missing_directory_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_meta(dir.path().join("nope")).unwrap_err();
    assert!(err.to_string().contains(META_FILE), "{err}");
}
