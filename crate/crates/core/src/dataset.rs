//! Synthetic interventional datasets and their on-disk layout.
//!
//! A dataset directory holds `meta.json` plus one CSV per split. CSV columns are
//! `x_1..x_n, xt_1..xt_n, target` followed, when ground truth is kept, by
//! `z_*, zt_*, e_*, et_*`. Floats are written with 17 significant digits so they
//! parse back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{graph_from_registry, sample_dag, CausalGraph};
use crate::rng::{substream, Stream};
use crate::scm::{init_scm_with, sample_pair, sample_rotation, InterventionalSample, LocationScaleScm, MixingMap, ScmInit, Truth};

pub const FORMAT_VERSION: u32 = 1;
pub const GENERATOR_VERSION: &str = concat!("icrlsm-core/", env!("CARGO_PKG_VERSION"));
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.name())
    }

    fn stream(self) -> Stream {
        match self {
            Split::Train => Stream::Train,
            Split::Val => Stream::Val,
            Split::Test => Stream::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const PAPER: SplitCounts = SplitCounts {
        train: 100_000,
        val: 10_000,
        test: 10_000,
    };
    /// Scaled-down default for single-machine runs.
    pub const DESK: SplitCounts = SplitCounts {
        train: 20_000,
        val: 2_000,
        test: 2_000,
    };

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub generator_version: String,
    pub n: usize,
    pub adjacency: Vec<Vec<bool>>,
    /// Rotation rows.
    pub mixing: Vec<Vec<f64>>,
    pub seed: u64,
    pub counts: SplitCounts,
    pub has_truth: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scm: Option<LocationScaleScm>,
    /// Per-split checksums, filled in by [`save_dataset`].
    #[serde(default)]
    pub files: std::collections::BTreeMap<Split, SplitFile>,
}

impl DatasetMeta {
    pub fn graph(&self) -> Result<CausalGraph> {
        CausalGraph::from_adjacency(self.adjacency.clone())
    }

    pub fn mixing_map(&self) -> Result<MixingMap> {
        MixingMap::from_row_major(self.n, self.mixing.iter().flatten().copied().collect())
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.n == 0 {
            return Err(Error::Schema("n must be positive".into()));
        }
        let g = self.graph()?;
        if g.n() != self.n {
            return Err(Error::Schema(format!(
                "adjacency is {0}x{0} but n = {1}",
                g.n(),
                self.n
            )));
        }
        if self.mixing.len() != self.n || self.mixing.iter().any(|r| r.len() != self.n) {
            return Err(Error::Schema(format!("mixing must be {0}x{0}", self.n)));
        }
        if let Some(scm) = &self.scm {
            if scm.n() != self.n {
                return Err(Error::Schema(format!("scm has {} variables but n = {}", scm.n(), self.n)));
            }
        }
        Ok(())
    }
}

/// One split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub split: Split,
    pub samples: Vec<InterventionalSample>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_truth(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.truth.is_some())
    }

    /// Copy without ground-truth latents.
    pub fn without_truth(&self) -> Dataset {
        let mut out = self.clone();
        out.meta.has_truth = false;
        for s in &mut out.samples {
            s.truth = None;
        }
        out
    }
}

/// How to build a synthetic dataset from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub graph: GraphSource,
    #[serde(default)]
    pub scm: ScmInit,
    pub counts: SplitCounts,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Registry(String),
    Random { n: usize, edge_prob: f64 },
    Explicit(CausalGraph),
}

impl GraphSource {
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CausalGraph> {
        match self {
            GraphSource::Registry(name) => graph_from_registry(name),
            GraphSource::Random { n, edge_prob } => sample_dag(*n, *edge_prob, rng),
            GraphSource::Explicit(g) => Ok(g.clone()),
        }
    }
}

/// Graph, SCM and rotation drawn from independent substreams of `spec.seed`,
/// then the three splits.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let graph = spec.graph.resolve(&mut substream(spec.seed, Stream::Graph, 0))?;
    let n = graph.n();
    let scm = init_scm_with(graph, &spec.scm, &mut substream(spec.seed, Stream::Scm, 0));
    let mix = sample_rotation(n, &mut substream(spec.seed, Stream::Rotation, 0))?;
    generate_dataset(&scm, &mix, spec.counts, spec.seed)
}

/// Targets are uniform over all variables; sample `k` of a split uses its own
/// `(seed, split, k)` substream, so output is independent of thread count.
pub fn generate_dataset(
    scm: &LocationScaleScm,
    mix: &MixingMap,
    counts: SplitCounts,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(Error::InvalidArgument("split counts must be positive".into()));
    }
    let n = scm.n();
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        generator_version: GENERATOR_VERSION.to_string(),
        n,
        adjacency: scm.graph.adjacency().to_vec(),
        mixing: mix.row_major().chunks(n).map(|r| r.to_vec()).collect(),
        seed,
        counts,
        has_truth: true,
        scm: Some(scm.clone()),
        files: Default::default(),
    };
    let build = |split: Split| -> Result<Dataset> {
        let samples = (0..counts.get(split) as u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = substream(seed, split.stream(), k);
                let target = rng.random_range(0..n);
                sample_pair(scm, mix, target, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            meta: meta.clone(),
            split,
            samples,
        })
    };
    Ok((build(Split::Train)?, build(Split::Val)?, build(Split::Test)?))
}

fn header(n: usize, truth: bool) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    for prefix in ["x", "xt"] {
        cols.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    cols.push("target".into());
    if truth {
        for p in ["z", "zt", "e", "et"] {
            cols.extend((1..=n).map(|i| format!("{p}_{i}")));
        }
    }
    cols
}

fn encode_split(ds: &Dataset, truth: bool) -> String {
    let n = ds.n();
    let mut out = header(n, truth).join(",");
    out.push('\n');
    for s in &ds.samples {
        let mut first = true;
        let mut put = |out: &mut String, v: f64| {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v:.16e}").unwrap();
        };
        for &v in s.x.iter().chain(&s.x_tilde) {
            put(&mut out, v);
        }
        write!(out, ",{}", s.target).unwrap();
        if truth {
            let t = s.truth.as_ref().expect("has_truth checked");
            for &v in t.z.iter().chain(&t.z_tilde).chain(&t.e).chain(&t.e_tilde) {
                write!(out, ",{v:.16e}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `meta.json` and one CSV per given split into `dir`.
///
/// All splits must share the same metadata. Ground truth is written only if
/// every split carries it.
pub fn save_dataset(dir: impl AsRef<Path>, splits: &[&Dataset]) -> Result<()> {
    let dir = dir.as_ref();
    let first = splits
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to save".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let truth = splits.iter().all(|d| d.has_truth());
    let mut meta = first.meta.clone();
    meta.has_truth = truth;
    meta.files.clear();
    let reference = meta.clone();
    for ds in splits {
        let mut other = ds.meta.clone();
        other.files.clear();
        other.has_truth = truth;
        if other != reference {
            return Err(Error::InvalidArgument("splits disagree on metadata".into()));
        }
        if ds.samples.iter().any(|s| s.x.len() != meta.n || s.x_tilde.len() != meta.n || s.target >= meta.n) {
            return Err(Error::Schema(format!("{} split has samples inconsistent with n = {}", ds.split.name(), meta.n)));
        }
        let text = encode_split(ds, truth);
        write_atomic(&dir.join(ds.split.file_name()), text.as_bytes())?;
        meta.files.insert(
            ds.split,
            SplitFile {
                rows: ds.len(),
                sha256: sha256_hex(text.as_bytes()),
            },
        );
    }
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_atomic(&dir.join(META_FILE), json.as_bytes())
}

pub fn load_meta(dir: impl AsRef<Path>) -> Result<DatasetMeta> {
    let path = dir.as_ref().join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| {
        if e.is_data() {
            Error::Schema(format!("{}: {e}", path.display()))
        } else {
            Error::io(&path, format!("malformed meta.json: {e}"))
        }
    })?;
    meta.validate()?;
    Ok(meta)
}

/// Load one split. Nothing is returned unless every row parses and the file
/// matches the checksum recorded in `meta.json`.
pub fn load_dataset(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta = load_meta(dir)?;
    let path: PathBuf = dir.join(split.file_name());
    let record = meta
        .files
        .get(&split)
        .ok_or_else(|| Error::io(&path, format!("meta.json lists no `{}` split", split.name())))?
        .clone();
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if sha256_hex(&bytes) != record.sha256 {
        return Err(Error::io(&path, "checksum mismatch (file truncated or modified)"));
    }
    let samples = parse_split(&path, &bytes, meta.n, meta.has_truth)?;
    if samples.len() != record.rows {
        return Err(Error::io(
            &path,
            format!("expected {} rows, found {}", record.rows, samples.len()),
        ));
    }
    Ok(Dataset { meta, split, samples })
}

pub fn load_all(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((
        load_dataset(dir, Split::Train)?,
        load_dataset(dir, Split::Val)?,
        load_dataset(dir, Split::Test)?,
    ))
}

fn parse_split(path: &Path, bytes: &[u8], n: usize, truth: bool) -> Result<Vec<InterventionalSample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let expected = header(n, truth);
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != expected {
        return Err(Error::Schema(format!(
            "{}: header has {} columns ({}) but meta.json implies {} for n = {n}",
            path.display(),
            found.len(),
            found.first().map(String::as_str).unwrap_or(""),
            expected.len()
        )));
    }
    let mut samples = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::io(path, format!("row {}: {e}", row + 1)))?;
        let field = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|e| {
                Error::io(path, format!("row {}, field `{}`: {e}", row + 1, expected[k]))
            })
        };
        let read = |start: usize| -> Result<Vec<f64>> { (start..start + n).map(field).collect() };
        let x = read(0)?;
        let x_tilde = read(n)?;
        let target: usize = rec[2 * n].parse().map_err(|e| {
            Error::io(path, format!("row {}, field `target`: {e}", row + 1))
        })?;
        if target >= n {
            return Err(Error::Schema(format!(
                "{}: row {} has target {target} outside [0, {n})",
                path.display(),
                row + 1
            )));
        }
        let truth = if truth {
            let base = 2 * n + 1;
            Some(Truth {
                z: read(base)?,
                z_tilde: read(base + n)?,
                e: read(base + 2 * n)?,
                e_tilde: read(base + 3 * n)?,
            })
        } else {
            None
        };
        samples.push(InterventionalSample { x, x_tilde, target, truth });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            graph: GraphSource::Registry("G3".into()),
            scm: ScmInit::default(),
            counts: SplitCounts {
                train: 400,
                val: 50,
                test: 50,
            },
            seed,
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let mut spec = small_spec(0);
        spec.counts.val = 0;
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small_spec(3)).unwrap();
        let b = generate_synthetic(&small_spec(3)).unwrap();
        let c = generate_synthetic(&small_spec(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.samples, c.0.samples);
    }

    #[test]
    fn splits_use_disjoint_streams() {
        let (train, val, _) = generate_synthetic(&small_spec(5)).unwrap();
        assert_ne!(train.samples[0], val.samples[0]);
    }

    #[test]
    fn targets_roughly_uniform() {
        let mut spec = small_spec(8);
        spec.counts.train = 8000;
        let (train, _, _) = generate_synthetic(&spec).unwrap();
        let mut hist = [0usize; 4];
        for s in &train.samples {
            hist[s.target] += 1;
        }
        // multinomial: each count ~ Binomial(8000, 1/4)
        let expect = 2000.0;
        let se = (8000.0 * 0.25 * 0.75f64).sqrt();
        for h in hist {
            assert!((h as f64 - expect).abs() < 3.0 * se, "{hist:?}");
        }
    }

    #[test]
    fn csv_header_layout() {
        let h = header(2, true);
        assert_eq!(
            h,
            ["x_1", "x_2", "xt_1", "xt_2", "target", "z_1", "z_2", "zt_1", "zt_2", "e_1", "e_2", "et_1", "et_2"]
        );
    }
}
