//! Synthetic scene corpora with controllable context informativeness and
//! visual ambiguity, the class-split rules, and the JSON-lines corpus format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_similarity, WordTable};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CORPUS_SCHEMA: &str = "cuefsl.corpus.v1";

/// One focal object: its class, raw features, co-occurring labels and
/// optional size (relative bounding-box area).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub class: String,
    pub features: Vec<f64>,
    pub context: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<f64>,
}

/// Log-uniform object areas; features of small objects get extra noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSpec {
    pub min_area: f64,
    pub max_area: f64,
    /// Extra noise multiplier at the smallest area, fading to zero at the largest.
    pub degrade: f64,
}

impl Default for SizeSpec {
    fn default() -> Self {
        SizeSpec {
            min_area: 1e-3,
            max_area: 1.0,
            degrade: 1.0,
        }
    }
}

/// Every context set holds exactly `informative` affinity labels and
/// `decoys` labels from outside the focal class's group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedContext {
    pub informative: usize,
    pub decoys: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_classes: usize,
    pub instances_per_class: usize,
    pub d_f: usize,
    pub d_w: usize,
    pub n_s_min: usize,
    pub n_s_max: usize,
    /// Probability that a context label comes from the focal class's affinity set.
    pub rho: f64,
    /// Fraction of classes placed in visually indistinguishable pairs.
    pub alpha: f64,
    /// Classes per affinity group; a class's affinity set is the rest of its group.
    pub group_size: usize,
    /// Squared cosine between a word and its group centroid; also the
    /// within-group pairwise cosine.
    pub group_cohesion: f64,
    pub word_norm: f64,
    /// Standard deviation of the visual cluster centres.
    pub cluster_scale: f64,
    /// Base feature noise standard deviation.
    pub feature_noise: f64,
    pub size: SizeSpec,
    pub fixed_context: Option<FixedContext>,
    pub test_fraction: f64,
    pub sim_threshold: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_classes: 60,
            instances_per_class: 100,
            d_f: 32,
            d_w: 16,
            n_s_min: 3,
            n_s_max: 8,
            rho: 0.95,
            alpha: 0.8,
            group_size: 2,
            group_cohesion: 0.55,
            word_norm: 1.0,
            cluster_scale: 1.0,
            feature_noise: 0.8,
            size: SizeSpec::default(),
            fixed_context: None,
            test_fraction: 1.0 / 3.0,
            sim_threshold: 0.75,
            min_count: 10,
            seed: 0,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Spec(format!("{name} = {v} outside [0, 1]")))
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Spec(format!(
                "n_classes = {} (need at least 2)",
                self.n_classes
            )));
        }
        if self.instances_per_class == 0 || self.d_f == 0 || self.d_w == 0 {
            return Err(Error::Spec(
                "instances_per_class, d_f and d_w must be positive".into(),
            ));
        }
        unit_interval("rho", self.rho)?;
        unit_interval("alpha", self.alpha)?;
        unit_interval("group_cohesion", self.group_cohesion)?;
        unit_interval("test_fraction", self.test_fraction)?;
        if self.n_s_min > self.n_s_max {
            return Err(Error::Spec(format!(
                "context size range [{}, {}] is empty",
                self.n_s_min, self.n_s_max
            )));
        }
        if self.group_size < 2 || self.group_size > self.n_classes / 2 {
            return Err(Error::Spec(format!(
                "group_size = {} must lie in [2, n_classes / 2 = {}]",
                self.group_size,
                self.n_classes / 2
            )));
        }
        if self.alpha == 1.0 && self.n_classes % 2 == 1 {
            return Err(Error::Spec(format!(
                "alpha = 1 needs an even class count, got {}",
                self.n_classes
            )));
        }
        let s = &self.size;
        if !(s.min_area > 0.0 && s.min_area <= s.max_area) || s.degrade < 0.0 {
            return Err(Error::Spec(format!("invalid size spec {s:?}")));
        }
        if !(self.word_norm > 0.0 && self.feature_noise >= 0.0 && self.cluster_scale >= 0.0) {
            return Err(Error::Spec("word_norm, feature_noise and cluster_scale must be nonnegative (word_norm positive)".into()));
        }
        if let Some(fc) = self.fixed_context {
            if fc.informative + fc.decoys == 0 {
                return Err(Error::Spec("fixed context of size zero".into()));
            }
            if fc.informative > 0 && self.group_size < 2 {
                return Err(Error::Spec(
                    "informative labels need an affinity set".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Where a corpus came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub source: String,
    #[serde(default)]
    pub spec: Option<CorpusSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub provenance: Provenance,
    /// Focal classes, `train` followed by `test`.
    pub classes: Vec<String>,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub min_count: usize,
    pub words: WordTable,
    pub instances: Vec<SceneInstance>,
}

impl Corpus {
    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instances {
            *counts.entry(inst.class.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn train_set(&self) -> HashSet<String> {
        self.train.iter().cloned().collect()
    }

    pub fn test_set(&self) -> HashSet<String> {
        self.test.iter().cloned().collect()
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let train = self.train_set();
        if let Some(c) = self.test.iter().find(|c| train.contains(*c)) {
            return Err(Error::Integrity(format!(
                "class {c:?} is both train and test"
            )));
        }
        let expected: Vec<String> = self.train.iter().chain(&self.test).cloned().collect();
        if self.classes != expected {
            return Err(Error::Integrity(
                "class list differs from train followed by test".into(),
            ));
        }
        let focal: HashSet<&str> = self.classes.iter().map(String::as_str).collect();
        if focal.len() != self.classes.len() {
            return Err(Error::Integrity("duplicate class names".into()));
        }
        if let Some(c) = self.classes.iter().find(|c| !self.words.contains(c)) {
            return Err(Error::Integrity(format!("class {c:?} has no word vector")));
        }
        let d_f = self.instances.first().map(|i| i.features.len());
        for (n, inst) in self.instances.iter().enumerate() {
            if !focal.contains(inst.class.as_str()) {
                return Err(Error::Integrity(format!(
                    "instance {n} has unknown focal class {:?}",
                    inst.class
                )));
            }
            if Some(inst.features.len()) != d_f {
                return Err(Error::Integrity(format!(
                    "instance {n} has {} features, expected {}",
                    inst.features.len(),
                    d_f.unwrap_or(0)
                )));
            }
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integrity(format!(
                    "instance {n} has non-finite features"
                )));
            }
            if let Some(l) = inst.context.iter().find(|l| !self.words.contains(l)) {
                return Err(Error::Integrity(format!(
                    "instance {n} context label {l:?} is not in the word table"
                )));
            }
            if let Some(s) = inst.size {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::Integrity(format!("instance {n} has size {s}")));
                }
            }
        }
        let counts = self.class_counts();
        for c in &self.classes {
            let n = counts.get(c.as_str()).copied().unwrap_or(0);
            if n < self.min_count {
                return Err(Error::Integrity(format!(
                    "class {c:?} has {n} instances, fewer than {}",
                    self.min_count
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Corpus::read(BufReader::new(File::open(path)?))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            schema: CORPUS_SCHEMA.to_string(),
            provenance: self.provenance.clone(),
            classes: self.classes.clone(),
            train: self.train.clone(),
            test: self.test.clone(),
            min_count: self.min_count,
            n_instances: self.instances.len(),
            words: WordsBlock {
                vocabulary: self.words.vocabulary().to_vec(),
                vectors: (0..self.words.len())
                    .map(|i| self.words.vectors().row_slice(i).to_vec())
                    .collect(),
            },
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for inst in &self.instances {
            serde_json::to_writer(&mut out, inst)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parses and validates a corpus. Malformed lines and truncation are
    /// parse errors carrying the 1-based line number.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty corpus file".into(),
        })??;
        let header: Header = serde_json::from_str(&first).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
        if header.schema != CORPUS_SCHEMA {
            return Err(Error::Parse {
                line: 1,
                message: format!("schema {:?}, expected {CORPUS_SCHEMA:?}", header.schema),
            });
        }
        let d_w = header.words.vectors.first().map_or(0, Vec::len);
        let words = WordTable::new(
            header.words.vocabulary,
            Tensor::from_rows(&header.words.vectors).map_err(|e| Error::Parse {
                line: 1,
                message: format!("word vectors: {e}"),
            })?,
        )
        .map_err(|e| Error::Parse {
            line: 1,
            message: format!("word table (d_w = {d_w}): {e}"),
        })?;
        let mut instances = Vec::with_capacity(header.n_instances);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let inst: SceneInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            instances.push(inst);
        }
        if instances.len() != header.n_instances {
            return Err(Error::Parse {
                line: instances.len() + 2,
                message: format!(
                    "truncated corpus: header declares {} instances, found {}",
                    header.n_instances,
                    instances.len()
                ),
            });
        }
        let corpus = Corpus {
            provenance: header.provenance,
            classes: header.classes,
            train: header.train,
            test: header.test,
            min_count: header.min_count,
            words,
            instances,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    provenance: Provenance,
    classes: Vec<String>,
    train: Vec<String>,
    test: Vec<String>,
    min_count: usize,
    n_instances: usize,
    words: WordsBlock,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordsBlock {
    vocabulary: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

/// Random partition with `round(n * test_fraction)` test classes, after which
/// every test class whose cosine similarity to some train class is strictly
/// above `sim_threshold` is dropped. Both lists keep the input order.
pub fn split_classes(
    classes: &[String],
    words: &WordTable,
    test_fraction: f64,
    sim_threshold: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<String>, Vec<String>)> {
    unit_interval("test_fraction", test_fraction)?;
    let n_test = (classes.len() as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.shuffle(rng);
    let mut is_test = vec![false; classes.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let train: Vec<String> = classes
        .iter()
        .zip(&is_test)
        .filter(|(_, &t)| !t)
        .map(|(c, _)| c.clone())
        .collect();
    let candidates: Vec<String> = classes
        .iter()
        .zip(&is_test)
        .filter(|(_, &t)| t)
        .map(|(c, _)| c.clone())
        .collect();
    let test = filter_similar(&train, &candidates, words, sim_threshold)?;
    if test.is_empty() {
        return Err(Error::Spec(format!(
            "no test class survives the similarity filter (threshold {sim_threshold}, \
             test fraction {test_fraction}); raise the threshold or the fraction"
        )));
    }
    Ok((train, test))
}

/// The candidates whose similarity to every train class is at most `threshold`.
pub fn filter_similar(
    train: &[String],
    candidates: &[String],
    words: &WordTable,
    threshold: f64,
) -> Result<Vec<String>> {
    let train_vecs = train
        .iter()
        .map(|c| words.lookup(c))
        .collect::<Result<Vec<_>>>()?;
    let mut kept = Vec::new();
    for c in candidates {
        let v = words.lookup(c)?;
        let mut ok = true;
        for t in &train_vecs {
            if cosine_similarity(v, t)? > threshold {
                ok = false;
                break;
            }
        }
        if ok {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

/// Removes classes with fewer than `min_count` instances as focal classes.
/// Context labels are left untouched.
pub fn filter_rare(mut corpus: Corpus, min_count: usize) -> Corpus {
    let counts: HashMap<String, usize> = corpus
        .class_counts()
        .into_iter()
        .map(|(c, n)| (c.to_string(), n))
        .collect();
    let keep = |c: &String| counts.get(c).copied().unwrap_or(0) >= min_count;
    corpus.train.retain(keep);
    corpus.test.retain(keep);
    corpus.classes = corpus.train.iter().chain(&corpus.test).cloned().collect();
    let kept: HashSet<&String> = corpus.classes.iter().collect();
    corpus.instances.retain(|i| kept.contains(&i.class));
    corpus.min_count = corpus.min_count.max(min_count);
    corpus
}

pub fn class_name(i: usize) -> String {
    format!("c{i:03}")
}

/// Latent structure behind a generated corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub names: Vec<String>,
    /// Affinity group of each class.
    pub group_of: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
    /// Visual cluster of each class; ambiguous pairs share one.
    pub cluster_of: Vec<usize>,
    pub ambiguous_pairs: Vec<(usize, usize)>,
}

impl Layout {
    pub fn affinity(&self, class: usize) -> Vec<usize> {
        self.groups[self.group_of[class]]
            .iter()
            .copied()
            .filter(|&c| c != class)
            .collect()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Groups are consecutive runs of a shuffled class order; ambiguous pairs
/// join position `i` with `i + n/2` in a second shuffled group order, which
/// never pairs two members of one group because `group_size <= n/2`.
pub fn layout(spec: &CorpusSpec) -> Result<Layout> {
    spec.validate()?;
    let n = spec.n_classes;
    let mut rng = stream(spec.seed, 1);
    let names: Vec<String> = (0..n).map(class_name).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = order
        .chunks(spec.group_size)
        .map(<[usize]>::to_vec)
        .collect();
    if groups.len() > 1 && groups.last().is_some_and(|g| g.len() < 2) {
        let tail = groups.pop().unwrap_or_default();
        if let Some(g) = groups.last_mut() {
            g.extend(tail);
        }
    }
    let mut group_of = vec![0; n];
    for (gi, g) in groups.iter().enumerate() {
        for &c in g {
            group_of[c] = gi;
        }
    }

    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    group_order.shuffle(&mut rng);
    let seq: Vec<usize> = group_order
        .iter()
        .flat_map(|&g| groups[g].iter().copied())
        .collect();
    let half = n / 2;
    let mut pairs: Vec<(usize, usize)> = (0..half)
        .map(|i| (seq[i], seq[i + half]))
        .filter(|(a, b)| group_of[*a] != group_of[*b])
        .collect();
    pairs.shuffle(&mut rng);
    let n_pairs = (spec.alpha * n as f64 / 2.0).round() as usize;
    if n_pairs > pairs.len() {
        return Err(Error::Spec(format!(
            "alpha = {} needs {n_pairs} cross-group pairs but only {} exist",
            spec.alpha,
            pairs.len()
        )));
    }
    pairs.truncate(n_pairs);
    pairs.sort_unstable();
    let mut cluster_of: Vec<usize> = (0..n).collect();
    for &(a, b) in &pairs {
        cluster_of[b] = a;
    }
    Ok(Layout {
        names,
        group_of,
        groups,
        cluster_of,
        ambiguous_pairs: pairs,
    })
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Words `w = norm * (a u_g + b e_i)` with unit centroid `u_g`, `e_i`
/// orthonormal within the group and orthogonal to `u_g`, `a^2 = cohesion`.
/// Members of one group therefore have pairwise cosine exactly `cohesion`.
pub fn word_vectors(spec: &CorpusSpec, layout: &Layout) -> Result<WordTable> {
    let mut rng = stream(spec.seed, 2);
    let d = spec.d_w;
    let a = spec.group_cohesion.sqrt();
    let b = (1.0 - spec.group_cohesion).sqrt();
    let mut rows = vec![Vec::new(); spec.n_classes];
    for group in &layout.groups {
        if group.len() + 1 > d {
            return Err(Error::Spec(format!(
                "a group of {} classes needs d_w > {}, got {d}",
                group.len(),
                group.len()
            )));
        }
        let mut centroid = gaussian(&mut rng, d);
        normalize(&mut centroid);
        let mut basis: Vec<Vec<f64>> = vec![centroid.clone()];
        for &c in group {
            let mut e = loop {
                let mut e = gaussian(&mut rng, d);
                for q in &basis {
                    let p = dot(&e, q);
                    e.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
                }
                if dot(&e, &e) > 1e-12 {
                    break e;
                }
            };
            normalize(&mut e);
            rows[c] = centroid
                .iter()
                .zip(&e)
                .map(|(u, v)| spec.word_norm * (a * u + b * v))
                .collect();
            basis.push(e);
        }
    }
    WordTable::new(layout.names.clone(), Tensor::from_rows(&rows)?)
}

fn context_for(
    spec: &CorpusSpec,
    layout: &Layout,
    class: usize,
    rng: &mut impl Rng,
) -> Vec<String> {
    let n = spec.n_classes;
    let affinity = layout.affinity(class);
    let labels: Vec<usize> = match spec.fixed_context {
        Some(fc) => {
            let outside: Vec<usize> = (0..n)
                .filter(|&c| layout.group_of[c] != layout.group_of[class])
                .collect();
            let mut picked: Vec<usize> = (0..fc.informative)
                .map(|i| {
                    if i < affinity.len() {
                        affinity[i]
                    } else {
                        affinity[rng.random_range(0..affinity.len())]
                    }
                })
                .collect();
            picked.extend((0..fc.decoys).map(|_| outside[rng.random_range(0..outside.len())]));
            picked.shuffle(rng);
            picked
        }
        None => {
            let n_s = rng.random_range(spec.n_s_min..=spec.n_s_max);
            (0..n_s)
                .map(|_| {
                    let informative: f64 = rng.random();
                    if informative < spec.rho {
                        affinity[rng.random_range(0..affinity.len())]
                    } else {
                        rng.random_range(0..n)
                    }
                })
                .collect()
        }
    };
    labels
        .into_iter()
        .map(|c| layout.names[c].clone())
        .collect()
}

/// Generates instances, splits classes and filters rare ones.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let layout = layout(spec)?;
    let words = word_vectors(spec, &layout)?;

    let mut rng = stream(spec.seed, 3);
    let centres: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            gaussian(&mut rng, spec.d_f)
                .into_iter()
                .map(|v| v * spec.cluster_scale)
                .collect()
        })
        .collect();

    let mut rng = stream(spec.seed, 4);
    let mut ctx_rng = stream(spec.seed, 6);
    let (lo, hi) = (spec.size.min_area.ln(), spec.size.max_area.ln());
    let mut instances = Vec::with_capacity(spec.n_classes * spec.instances_per_class);
    for class in 0..spec.n_classes {
        let centre = &centres[layout.cluster_of[class]];
        for _ in 0..spec.instances_per_class {
            let t: f64 = rng.random();
            let size = (lo + t * (hi - lo)).exp();
            let sigma = spec.feature_noise * (1.0 + spec.size.degrade * (1.0 - t));
            let features = centre
                .iter()
                .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let context = context_for(spec, &layout, class, &mut ctx_rng);
            instances.push(SceneInstance {
                class: layout.names[class].clone(),
                features,
                context,
                size: Some(size),
            });
        }
    }

    let mut rng = stream(spec.seed, 5);
    let (train, test) = split_classes(
        &layout.names,
        &words,
        spec.test_fraction,
        spec.sim_threshold,
        &mut rng,
    )?;
    let classes: Vec<String> = train.iter().chain(&test).cloned().collect();
    let focal: HashSet<&String> = classes.iter().collect();
    instances.retain(|i| focal.contains(&i.class));
    let corpus = Corpus {
        provenance: Provenance {
            source: "synthetic".into(),
            spec: Some(spec.clone()),
        },
        classes,
        train,
        test,
        min_count: 1,
        words,
        instances,
    };
    let corpus = filter_rare(corpus, spec.min_count);
    if corpus.test.is_empty() || corpus.train.is_empty() {
        return Err(Error::Spec(format!(
            "min_count {} leaves {} train and {} test classes",
            spec.min_count,
            corpus.train.len(),
            corpus.test.len()
        )));
    }
    corpus.validate()?;
    Ok(corpus)
}

/// Plug-in estimate (nats) of the mutual information between the focal class
/// and a context label drawn from its context set, pooling all labels.
pub fn context_mutual_information(instances: &[SceneInstance]) -> f64 {
    let mut joint: HashMap<(&str, &str), f64> = HashMap::new();
    let mut px: HashMap<&str, f64> = HashMap::new();
    let mut py: HashMap<&str, f64> = HashMap::new();
    let mut total = 0.0;
    for inst in instances {
        for l in &inst.context {
            *joint
                .entry((inst.class.as_str(), l.as_str()))
                .or_insert(0.0) += 1.0;
            *px.entry(inst.class.as_str()).or_insert(0.0) += 1.0;
            *py.entry(l.as_str()).or_insert(0.0) += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    joint
        .iter()
        .map(|(&(x, y), &n)| {
            let p = n / total;
            p * (p * total * total / (px[x] * py[y])).ln()
        })
        .sum()
}
