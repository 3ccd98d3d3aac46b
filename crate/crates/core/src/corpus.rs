//! Corpus ingestion and synthesis.
//!
//! A corpus is one family's worth of timestamped opcode sequences, sorted by
//! creation date. Corpora come from a CSV manifest pointing at opcode text
//! files, or from a synthetic generator that plants known evolution points
//! for end-to-end validation.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calendar month, the resolution of all windowing downstream.
///
/// Stored as a flat month count (`year * 12 + month0`) so that window
/// arithmetic is plain integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Month(i32);

impl Month {
    pub fn new(year: i32, month: u32) -> Month {
        assert!((1..=12).contains(&month), "month must be 1..=12");
        Month(year * 12 + month as i32 - 1)
    }

    pub fn of(date: NaiveDate) -> Month {
        Month::new(date.year(), date.month())
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn offset(self, months: i32) -> Month {
        Month(self.0 + months)
    }

    /// Whole months from `earlier` to `self` (negative when self is earlier).
    pub fn since(self, earlier: Month) -> i32 {
        self.0 - earlier.0
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year(), self.month(), 1).expect("valid month")
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

/// One program's opcode sequence plus its family label and creation date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub family: String,
    pub created: NaiveDate,
    pub opcodes: Vec<String>,
}

impl Sample {
    pub fn month(&self) -> Month {
        Month::of(self.created)
    }
}

/// A family's samples sorted ascending by creation date.
#[derive(Debug, Clone)]
pub struct Corpus {
    family: String,
    samples: Vec<Sample>,
    span: (Month, Month),
}

impl Corpus {
    /// Builds a corpus from samples of a single family, sorting by
    /// (created, id) for a deterministic total order.
    pub fn from_samples(family: impl Into<String>, mut samples: Vec<Sample>) -> Result<Corpus> {
        let family = family.into();
        if samples.is_empty() {
            return Err(Error::EmptyCorpus { path: PathBuf::from(format!("<family {family}>")) });
        }
        if let Some(s) = samples.iter().find(|s| s.family != family) {
            return Err(Error::MalformedSample {
                source_name: s.id.clone(),
                reason: format!("family {} does not match corpus family {}", s.family, family),
            });
        }
        samples.sort_by(|a, b| a.created.cmp(&b.created).then_with(|| a.id.cmp(&b.id)));
        let span = (
            samples.first().map(|s| s.month()).unwrap(),
            samples.last().map(|s| s.month()).unwrap(),
        );
        Ok(Corpus { family, samples, span })
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// (first month, last month), inclusive.
    pub fn span(&self) -> (Month, Month) {
        self.span
    }

    pub fn span_months(&self) -> u32 {
        (self.span.1.since(self.span.0) + 1) as u32
    }

    /// Samples created within [from, to] (month-inclusive range).
    pub fn samples_in(&self, from: Month, to: Month) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| {
            let m = s.month();
            m >= from && m <= to
        })
    }
}

/// Outcome of a corpus load: what survived, what was dropped and why.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub dropped: usize,
    /// One human-readable line per dropped sample.
    pub drop_reasons: Vec<String>,
    /// Samples whose opcode sequence is byte-identical to an earlier one.
    /// Duplicates are kept; this is informational only.
    pub duplicate_sequences: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "loaded={} dropped={}", self.loaded, self.dropped)
    }
}

/// Validity bounds for sample creation dates. Samples outside the window are
/// treated as having altered timestamps and dropped.
#[derive(Debug, Clone, Serialize)]
pub struct DateBounds {
    pub min: NaiveDate,
    pub max_year: i32,
}

impl Default for DateBounds {
    fn default() -> Self {
        DateBounds {
            min: NaiveDate::from_ymd_opt(1990, 1, 1).unwrap(),
            max_year: chrono::Utc::now().year(),
        }
    }
}

/// Parses opcode text: one token per nonblank line, trimmed and lower-cased.
/// Lines starting with `;` or `#` are comments. A token containing internal
/// whitespace violates the sample invariant and is rejected.
pub fn parse_opcode_file(text: &str, source_name: &str) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        if line.contains(char::is_whitespace) {
            return Err(Error::MalformedSample {
                source_name: source_name.to_string(),
                reason: format!("line {}: token contains whitespace: {:?}", lineno + 1, line),
            });
        }
        tokens.push(line.to_lowercase());
    }
    if tokens.is_empty() {
        return Err(Error::MalformedSample {
            source_name: source_name.to_string(),
            reason: "no opcode tokens".to_string(),
        });
    }
    Ok(tokens)
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    family: String,
    created: String,
    path: String,
}

/// Loads a corpus from a CSV manifest (`id,family,created,path`).
///
/// Relative opcode paths resolve against the manifest's directory. Samples
/// with unparseable or out-of-bounds dates, missing files, or malformed
/// opcode text are dropped and recorded in the report; only a corpus with
/// zero valid samples is fatal.
pub fn load_corpus(manifest_path: &Path, bounds: &DateBounds) -> Result<(Corpus, LoadReport)> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(manifest_path)
        .map_err(|e| Error::Manifest { path: manifest_path.to_path_buf(), reason: e.to_string() })?;

    let mut report = LoadReport::default();
    let mut samples = Vec::new();
    let mut families: Vec<String> = Vec::new();
    let mut seen_sequences: HashMap<u64, usize> = HashMap::new();

    for row in reader.deserialize::<ManifestRow>() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.dropped += 1;
                report.drop_reasons.push(format!("unparseable manifest row: {e}"));
                continue;
            }
        };
        let created = match NaiveDate::parse_from_str(&row.created, "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) => {
                report.dropped += 1;
                report.drop_reasons.push(format!("{}: invalid date {:?}", row.id, row.created));
                continue;
            }
        };
        if created < bounds.min || created.year() > bounds.max_year {
            report.dropped += 1;
            report
                .drop_reasons
                .push(format!("{}: date {} outside plausible bounds (altered timestamp?)", row.id, created));
            continue;
        }
        let opcode_path = base.join(&row.path);
        let text = match fs::read_to_string(&opcode_path) {
            Ok(t) => t,
            Err(e) => {
                report.dropped += 1;
                report.drop_reasons.push(format!("{}: cannot read {}: {e}", row.id, opcode_path.display()));
                continue;
            }
        };
        let opcodes = match parse_opcode_file(&text, &row.id) {
            Ok(o) => o,
            Err(e) => {
                report.dropped += 1;
                report.drop_reasons.push(e.to_string());
                continue;
            }
        };
        let hash = sequence_hash(&opcodes);
        if let Some(count) = seen_sequences.get_mut(&hash) {
            *count += 1;
            report.duplicate_sequences += 1;
        } else {
            seen_sequences.insert(hash, 1);
        }
        if !families.contains(&row.family) {
            families.push(row.family.clone());
        }
        samples.push(Sample { id: row.id, family: row.family, created, opcodes });
    }

    if samples.is_empty() {
        return Err(Error::EmptyCorpus { path: manifest_path.to_path_buf() });
    }
    if families.len() > 1 {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            reason: format!("manifest mixes families {:?}; one corpus per family", families),
        });
    }
    report.loaded = samples.len();
    let corpus = Corpus::from_samples(families.remove(0), samples)?;
    Ok((corpus, report))
}

fn sequence_hash(opcodes: &[String]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    opcodes.hash(&mut h);
    h.finish()
}

/// Writes a corpus to `dir` in manifest format: `manifest.csv` plus one
/// opcode text file per sample under `opcodes/`. Returns the manifest path.
pub fn write_manifest(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    let opcode_dir = dir.join("opcodes");
    fs::create_dir_all(&opcode_dir).map_err(|e| Error::io(format!("create {}", opcode_dir.display()), e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path)
        .map_err(|e| Error::Manifest { path: manifest_path.clone(), reason: e.to_string() })?;
    writer
        .write_record(["id", "family", "created", "path"])
        .map_err(|e| Error::Manifest { path: manifest_path.clone(), reason: e.to_string() })?;
    for sample in corpus.samples() {
        let rel = format!("opcodes/{}.txt", sample.id);
        let file = dir.join(&rel);
        fs::write(&file, sample.opcodes.join("\n") + "\n")
            .map_err(|e| Error::io(format!("write {}", file.display()), e))?;
        writer
            .write_record([
                sample.id.as_str(),
                sample.family.as_str(),
                &sample.created.format("%Y-%m-%d").to_string(),
                &rel,
            ])
            .map_err(|e| Error::Manifest { path: manifest_path.clone(), reason: e.to_string() })?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(format!("flush {}", manifest_path.display()), e))?;
    Ok(manifest_path)
}

/// A distribution shift planted into a synthetic corpus.
///
/// `month` is the boundary: months up to and including it draw from the
/// distribution active before the point; months after it draw from the
/// blended distribution. A detector should therefore flag month `month + 1`,
/// the first month generated under the new regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionPoint {
    pub month: u32,
    pub replacement: Vec<f64>,
    pub blend: f64,
}

/// Recipe for a synthetic corpus with known evolution points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_family")]
    pub family: String,
    pub months: u32,
    pub samples_per_month: u32,
    /// Opcode alphabet; `base_distribution` and every replacement
    /// distribution index into it.
    pub vocab: Vec<String>,
    pub base_distribution: Vec<f64>,
    #[serde(default)]
    pub evolution_points: Vec<EvolutionPoint>,
    pub sequence_length_range: (usize, usize),
    #[serde(default = "default_start_year")]
    pub start_year: i32,
    #[serde(default = "default_start_month")]
    pub start_month: u32,
    pub rng_seed: u64,
}

fn default_family() -> String {
    "synthetic".to_string()
}
fn default_start_year() -> i32 {
    2015
}
fn default_start_month() -> u32 {
    1
}

const DIST_SUM_TOL: f64 = 1e-9;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidSynthSpec(msg));
        if self.months == 0 || self.samples_per_month == 0 {
            return err("months and samples_per_month must be positive".into());
        }
        if self.vocab.is_empty() {
            return err("vocab must be nonempty".into());
        }
        if !(1..=12).contains(&self.start_month) {
            return err(format!("start_month {} not in 1..=12", self.start_month));
        }
        check_distribution(&self.base_distribution, self.vocab.len(), "base_distribution")?;
        for (i, point) in self.evolution_points.iter().enumerate() {
            if point.month == 0 || point.month >= self.months {
                return err(format!(
                    "evolution point {i}: month {} not strictly inside (0, {})",
                    point.month, self.months
                ));
            }
            if !(0.0..=1.0).contains(&point.blend) {
                return err(format!("evolution point {i}: blend {} not in [0,1]", point.blend));
            }
            check_distribution(&point.replacement, self.vocab.len(), "replacement")?;
        }
        let (lo, hi) = self.sequence_length_range;
        if lo == 0 || lo > hi {
            return err(format!("sequence_length_range ({lo}, {hi}) invalid"));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<SynthSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| Error::InvalidSynthSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

impl SynthSpec {
    /// Canonical planted-change corpus: 80% of the token mass Zipf-shaped
    /// over one half of the alphabet and 20% spread uniformly, with the
    /// replacement distribution mirroring the Zipf mass onto the other
    /// half. One full-blend evolution point sits at `boundary_month`, so a
    /// detector should flag `boundary_month + 1`. Pass no boundary for a
    /// no-change control corpus.
    pub fn benchmark(
        months: u32,
        samples_per_month: u32,
        vocab_size: usize,
        boundary_month: Option<u32>,
        blend: f64,
        rng_seed: u64,
    ) -> SynthSpec {
        let vocab: Vec<String> = (0..vocab_size).map(|i| format!("op{i:02}")).collect();
        let half = (vocab_size / 2).max(1);
        let zipf: Vec<f64> = (1..=half).map(|r| 1.0 / r as f64).collect();
        let zipf_total: f64 = zipf.iter().sum();
        let mut base = vec![0.2 / vocab_size as f64; vocab_size];
        let mut replacement = base.clone();
        for (i, z) in zipf.iter().enumerate() {
            base[i] += 0.8 * z / zipf_total;
            replacement[vocab_size - 1 - i] += 0.8 * z / zipf_total;
        }
        let renormalize = |d: &mut Vec<f64>| {
            let sum: f64 = d.iter().sum();
            d.iter_mut().for_each(|x| *x /= sum);
        };
        renormalize(&mut base);
        renormalize(&mut replacement);
        SynthSpec {
            family: "synthetic".into(),
            months,
            samples_per_month,
            vocab,
            base_distribution: base,
            evolution_points: boundary_month
                .map(|month| vec![EvolutionPoint { month, replacement, blend }])
                .unwrap_or_default(),
            sequence_length_range: (60, 120),
            start_year: 2015,
            start_month: 1,
            rng_seed,
        }
    }
}

fn check_distribution(dist: &[f64], expected_len: usize, what: &str) -> Result<()> {
    if dist.len() != expected_len {
        return Err(Error::InvalidSynthSpec(format!(
            "{what} has {} entries, vocab has {expected_len}",
            dist.len()
        )));
    }
    if dist.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
        return Err(Error::InvalidSynthSpec(format!("{what} entries must be finite probabilities")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > DIST_SUM_TOL {
        return Err(Error::InvalidSynthSpec(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Generates a synthetic corpus. Pure function of the spec: the same spec
/// (seed included) always yields a byte-identical corpus.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let start = Month::new(spec.start_year, spec.start_month);
    let (min_len, max_len) = spec.sequence_length_range;

    let mut points = spec.evolution_points.clone();
    points.sort_by_key(|p| p.month);

    let mut samples = Vec::with_capacity((spec.months * spec.samples_per_month) as usize);
    let mut active = spec.base_distribution.clone();
    let mut next_point = 0;
    for m in 0..spec.months {
        // A point at month p shifts the distribution for months strictly
        // after p; month p itself is the last month of the old regime.
        while next_point < points.len() && m > points[next_point].month {
            let p = &points[next_point];
            for (a, r) in active.iter_mut().zip(&p.replacement) {
                *a = (1.0 - p.blend) * *a + p.blend * r;
            }
            next_point += 1;
        }
        let sampler = WeightedIndex::new(active.iter().copied())
            .map_err(|e| Error::InvalidSynthSpec(format!("month {m}: {e}")))?;
        let month = start.offset(m as i32);
        for j in 0..spec.samples_per_month {
            let len = rng.random_range(min_len..=max_len);
            let opcodes: Vec<String> = (0..len).map(|_| spec.vocab[sampler.sample(&mut rng)].clone()).collect();
            let day = 1 + (j * 7) % 28;
            let created = NaiveDate::from_ymd_opt(month.year(), month.month(), day).expect("day <= 28");
            samples.push(Sample {
                id: format!("synth-{m:03}-{j:03}"),
                family: spec.family.clone(),
                created,
                opcodes,
            });
        }
    }
    Corpus::from_samples(spec.family.clone(), samples)
}
