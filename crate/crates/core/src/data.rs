//! Triple datasets: loading, vocabularies, inverse augmentation, the ranking
//! filter, negative sampling and relation-category statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub h: usize,
    pub r: usize,
    pub t: usize,
}

impl Triple {
    pub fn new(h: usize, r: usize, t: usize) -> Self {
        Triple { h, r, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Bidirectional string/id map; ids follow first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }
}

/// Known true tails per `(head, relation)` over all splits, in augmented form.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex(HashMap<(usize, usize), HashSet<usize>>);

impl FilterIndex {
    pub fn insert(&mut self, triple: Triple) {
        self.0.entry((triple.h, triple.r)).or_default().insert(triple.t);
    }

    pub fn contains(&self, triple: Triple) -> bool {
        self.0
            .get(&(triple.h, triple.r))
            .is_some_and(|tails| tails.contains(&triple.t))
    }

    pub fn tails(&self, h: usize, r: usize) -> Option<&HashSet<usize>> {
        self.0.get(&(h, r))
    }

    pub fn len(&self) -> usize {
        self.0.values().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct KgDataset {
    pub entities: Vocab,
    /// Base relations only; inverse of `r` has id `r + relations.len()`.
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    /// Duplicate lines dropped while loading, per split in train/valid/test order.
    pub duplicates: [usize; 3],
    pub augmented_train: Vec<Triple>,
    pub filter_index: FilterIndex,
    augmented: bool,
}

impl KgDataset {
    /// Builds a dataset from string triples, interning names in split order.
    pub fn from_named<S: AsRef<str>>(
        train: &[(S, S, S)],
        valid: &[(S, S, S)],
        test: &[(S, S, S)],
    ) -> Self {
        let mut ds = KgDataset::default();
        for (i, rows) in [train, valid, test].into_iter().enumerate() {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(rows.len());
            for (h, r, t) in rows {
                let triple = ds.intern(h.as_ref(), r.as_ref(), t.as_ref());
                if seen.insert(triple) {
                    out.push(triple);
                } else {
                    ds.duplicates[i] += 1;
                }
            }
            *ds.split_mut(Split::ALL[i]) = out;
        }
        ds
    }

    /// Builds a dataset over anonymous ids `e0..`, `r0..`.
    pub fn from_ids(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let mut ds = KgDataset::default();
        for e in 0..n_entities {
            ds.entities.intern(&format!("e{e}"));
        }
        for r in 0..n_relations {
            ds.relations.intern(&format!("r{r}"));
        }
        for triple in train.iter().chain(&valid).chain(&test) {
            if triple.h >= n_entities || triple.t >= n_entities {
                return Err(Error::Lookup {
                    kind: "entity",
                    id: triple.h.max(triple.t),
                    size: n_entities,
                });
            }
            if triple.r >= n_relations {
                return Err(Error::Lookup {
                    kind: "relation",
                    id: triple.r,
                    size: n_relations,
                });
            }
        }
        ds.train = train;
        ds.valid = valid;
        ds.test = test;
        Ok(ds)
    }

    fn intern(&mut self, h: &str, r: &str, t: &str) -> Triple {
        let h = self.entities.intern(h);
        let r = self.relations.intern(r);
        let t = self.entities.intern(t);
        Triple { h, r, t }
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Triple> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_base_relations(&self) -> usize {
        self.relations.len()
    }

    /// Relation count after inverse augmentation.
    pub fn n_relations(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn inverse(&self, triple: Triple) -> Triple {
        Triple {
            h: triple.t,
            r: triple.r + self.relations.len(),
            t: triple.h,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// SHA-256 over entity names then relation names, in id order.
    pub fn vocab_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (tag, vocab) in [(b"E", &self.entities), (b"R", &self.relations)] {
            hasher.update(tag);
            hasher.update((vocab.len() as u64).to_le_bytes());
            for name in vocab.names() {
                hasher.update((name.len() as u64).to_le_bytes());
                hasher.update(name.as_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Writes the three split files back out using the vocabulary names.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(split.file_name());
            let mut out = Vec::new();
            for t in self.split(split) {
                let name = |v: &Vocab, id| v.name(id).unwrap_or_default().to_owned();
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    name(&self.entities, t.h),
                    name(&self.relations, t.r),
                    name(&self.entities, t.t)
                )
                .expect("write to Vec");
            }
            fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn parse_split(path: &Path) -> Result<Vec<(String, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.iter().filter(|f| !f.is_empty()).count()
                ),
            });
        }
        rows.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(rows)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir` (not augmented).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<KgDataset> {
    let dir = dir.as_ref();
    let paths: Vec<PathBuf> = Split::ALL.iter().map(|s| dir.join(s.file_name())).collect();
    for path in &paths {
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found"),
            ));
        }
    }
    let splits = paths
        .iter()
        .map(|p| parse_split(p))
        .collect::<Result<Vec<_>>>()?;
    let ds = KgDataset::from_named(&splits[0], &splits[1], &splits[2]);
    for (split, &dups) in Split::ALL.iter().zip(&ds.duplicates) {
        if dups > 0 {
            log::warn!("{}: dropped {dups} duplicate triples", dir.join(split.file_name()).display());
        }
    }
    Ok(ds)
}

/// Adds `(t, r + |R|, h)` for every training triple and builds the filter index.
pub fn augment_inverse(mut ds: KgDataset) -> Result<KgDataset> {
    if ds.augmented {
        return Err(Error::AlreadyAugmented);
    }
    let mut augmented = Vec::with_capacity(2 * ds.train.len());
    augmented.extend_from_slice(&ds.train);
    augmented.extend(ds.train.iter().map(|&t| ds.inverse(t)));
    let mut filter = FilterIndex::default();
    for split in Split::ALL {
        for &t in ds.split(split) {
            filter.insert(t);
            filter.insert(ds.inverse(t));
        }
    }
    ds.augmented_train = augmented;
    ds.filter_index = filter;
    ds.augmented = true;
    Ok(ds)
}

/// Loads and augments in one go.
pub fn load_augmented(dir: impl AsRef<Path>) -> Result<KgDataset> {
    augment_inverse(load_dataset(dir)?)
}

/// Corrupts the head or the tail (fair coin) of `triple` with a uniformly drawn different entity.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    triple: Triple,
    k: usize,
    n_entities: usize,
) -> Result<Vec<Triple>> {
    let mut out = Vec::with_capacity(k);
    sample_negatives_into(rng, triple, k, n_entities, &mut out)?;
    Ok(out)
}

pub fn sample_negatives_into<R: Rng + ?Sized>(
    rng: &mut R,
    triple: Triple,
    k: usize,
    n_entities: usize,
    out: &mut Vec<Triple>,
) -> Result<()> {
    if n_entities < 2 {
        return Err(Error::Unsatisfiable(format!(
            "cannot corrupt a triple with only {n_entities} entities"
        )));
    }
    out.clear();
    for _ in 0..k {
        let corrupt_head = rng.random_bool(0.5);
        let original = if corrupt_head { triple.h } else { triple.t };
        let mut e = rng.random_range(0..n_entities - 1);
        if e >= original {
            e += 1;
        }
        out.push(if corrupt_head {
            Triple { h: e, ..triple }
        } else {
            Triple { t: e, ..triple }
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "1-N")]
    OneToMany,
    #[serde(rename = "N-1")]
    ManyToOne,
    #[serde(rename = "N-N")]
    ManyToMany,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::OneToOne,
        Category::OneToMany,
        Category::ManyToOne,
        Category::ManyToMany,
    ];

    pub const THRESHOLD: f64 = 1.5;

    /// `eta_h`: mean heads per tail; `eta_t`: mean tails per head. Values at
    /// the threshold count as "many".
    pub fn classify(eta_h: f64, eta_t: f64) -> Self {
        match (eta_h < Self::THRESHOLD, eta_t < Self::THRESHOLD) {
            (true, true) => Category::OneToOne,
            (true, false) => Category::OneToMany,
            (false, true) => Category::ManyToOne,
            (false, false) => Category::ManyToMany,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::OneToOne => "1-1",
            Category::OneToMany => "1-N",
            Category::ManyToOne => "N-1",
            Category::ManyToMany => "N-N",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which triples define the per-relation degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaSource {
    Train,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCategory {
    pub relation: usize,
    pub name: String,
    /// `None` when the relation never occurs in the source triples.
    pub eta_h: Option<f64>,
    pub eta_t: Option<f64>,
    pub category: Option<Category>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub eta_source: EtaSource,
    pub relations: Vec<RelationCategory>,
    /// Test triples per category.
    pub test_counts: BTreeMap<Category, usize>,
    /// Test triples whose relation has no category.
    pub test_uncategorized: usize,
}

impl CategoryReport {
    pub fn category_of(&self, relation: usize) -> Option<Category> {
        self.relations.get(relation).and_then(|r| r.category)
    }

    pub fn count(&self, category: Category) -> usize {
        self.test_counts.get(&category).copied().unwrap_or(0)
    }
}

pub fn categorize_relations(ds: &KgDataset, source: EtaSource) -> CategoryReport {
    let n_rel = ds.n_base_relations();
    let mut counts = vec![0usize; n_rel];
    let mut heads: Vec<HashSet<usize>> = vec![HashSet::new(); n_rel];
    let mut tails: Vec<HashSet<usize>> = vec![HashSet::new(); n_rel];
    let triples: Vec<&Triple> = match source {
        EtaSource::Train => ds.train.iter().collect(),
        EtaSource::All => ds.train.iter().chain(&ds.valid).chain(&ds.test).collect(),
    };
    for t in triples {
        counts[t.r] += 1;
        heads[t.r].insert(t.h);
        tails[t.r].insert(t.t);
    }
    let relations: Vec<RelationCategory> = (0..n_rel)
        .map(|r| {
            let (eta_h, eta_t) = if counts[r] == 0 {
                (None, None)
            } else {
                let n = counts[r] as f64;
                (Some(n / tails[r].len() as f64), Some(n / heads[r].len() as f64))
            };
            RelationCategory {
                relation: r,
                name: ds.relations.name(r).unwrap_or_default().to_owned(),
                eta_h,
                eta_t,
                category: eta_h.zip(eta_t).map(|(h, t)| Category::classify(h, t)),
            }
        })
        .collect();
    let mut test_counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    let mut test_uncategorized = 0;
    for t in &ds.test {
        match relations[t.r].category {
            Some(c) => *test_counts.entry(c).or_default() += 1,
            None => test_uncategorized += 1,
        }
    }
    CategoryReport {
        eta_source: source,
        relations,
        test_counts,
        test_uncategorized,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub duplicates_dropped: [usize; 3],
    /// Mean of `eta_h` / `eta_t` over relations present in train.
    pub mean_eta_h: f64,
    pub mean_eta_t: f64,
    /// Number of relations in each category (degrees from train).
    pub relation_categories: BTreeMap<Category, usize>,
}

pub fn dataset_stats(ds: &KgDataset) -> DatasetStats {
    let report = categorize_relations(ds, EtaSource::Train);
    let present: Vec<&RelationCategory> =
        report.relations.iter().filter(|r| r.category.is_some()).collect();
    let mean = |f: fn(&RelationCategory) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|r| f(r)).sum::<f64>() / present.len() as f64
        }
    };
    let mut relation_categories: BTreeMap<Category, usize> =
        Category::ALL.iter().map(|&c| (c, 0)).collect();
    for r in &present {
        *relation_categories.entry(r.category.unwrap()).or_default() += 1;
    }
    DatasetStats {
        entities: ds.n_entities(),
        relations: ds.n_base_relations(),
        train: ds.train.len(),
        valid: ds.valid.len(),
        test: ds.test.len(),
        duplicates_dropped: ds.duplicates,
        mean_eta_h: mean(|r| r.eta_h.unwrap_or(0.0)),
        mean_eta_t: mean(|r| r.eta_t.unwrap_or(0.0)),
        relation_categories,
    }
}
