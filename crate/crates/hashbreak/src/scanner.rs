//! Detection-system simulator: hash database persistence, threshold
//! matching by exact linear scan, FPR/FNR estimation, daily false-flag
//! projection, and the binomial/convolution model of how many of a user's
//! images get flagged.

use std::fmt::Write as _;
use std::path::Path;

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::imagecore::{distance, format_f64, DistanceMetric, Hash, HashAlgorithm};

#[derive(Debug, Error)]
pub enum ScannerError {
    #[error("database is empty")]
    EmptyDb,
    #[error("query set is empty")]
    EmptyQuerySet,
    #[error("algorithm mismatch: database holds {db}, query is {query}")]
    AlgorithmMismatch {
        db: HashAlgorithm,
        query: HashAlgorithm,
    },
    #[error("unknown record id: {0}")]
    UnknownId(String),
    #[error("duplicate record id: {0}")]
    DuplicateId(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("malformed database file: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Detection thresholds commonly paired with each algorithm, smallest first.
/// The first two are practical operating points; the larger two trade many
/// more false positives for attack resistance.
pub fn standard_thresholds(algo: HashAlgorithm) -> [f64; 4] {
    match algo {
        HashAlgorithm::PHashContinuous => [0.05, 0.6, 1.1, 1.6],
        HashAlgorithm::PHash => [2.0, 6.0, 10.0, 14.0],
        HashAlgorithm::AHash => [1.0, 3.0, 5.0, 7.0],
        HashAlgorithm::DHash => [1.0, 4.0, 9.0, 12.0],
        HashAlgorithm::PdqLite => [30.0, 70.0, 85.0, 90.0],
    }
}

/// A persisted collection of (id, hash) records with a detection threshold.
/// All records share the database's algorithm; ids are unique.
#[derive(Debug, Clone)]
pub struct HashDb {
    algorithm: HashAlgorithm,
    threshold: f64,
    records: Vec<(String, Hash)>,
}

impl HashDb {
    pub fn new(
        algorithm: HashAlgorithm,
        threshold: f64,
        records: Vec<(String, Hash)>,
    ) -> Result<HashDb, ScannerError> {
        if !(threshold >= 0.0) {
            return Err(ScannerError::OutOfRange(format!(
                "threshold must be >= 0, got {threshold}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, hash) in &records {
            if hash.algorithm() != algorithm {
                return Err(ScannerError::AlgorithmMismatch {
                    db: algorithm,
                    query: hash.algorithm(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(ScannerError::DuplicateId(id.clone()));
            }
        }
        Ok(HashDb {
            algorithm,
            threshold,
            records,
        })
    }

    pub fn algorithm(&self) -> HashAlgorithm {
        self.algorithm
    }

    pub fn metric(&self) -> DistanceMetric {
        self.algorithm.metric()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(String, Hash)] {
        &self.records
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.records.iter().any(|(rid, _)| rid == id)
    }

    /// Serializes as one header line (`#metric=...<TAB>threshold=...`)
    /// followed by one `id<TAB>algorithm<TAB>payload` line per record.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "#metric={}\tthreshold={}",
            self.metric().name(),
            format_f64(self.threshold)
        );
        for (id, hash) in &self.records {
            let _ = writeln!(out, "{id}\t{}\t{}", hash.algorithm().name(), hash.payload_string());
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScannerError> {
        Ok(std::fs::write(path, self.to_file_string())?)
    }

    pub fn parse(text: &str) -> Result<HashDb, ScannerError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| ScannerError::Parse("empty file".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| ScannerError::Parse("missing header line".into()))?;
        let mut metric = None;
        let mut threshold = None;
        for field in header.split('\t') {
            match field.split_once('=') {
                Some(("metric", v)) => {
                    metric = Some(DistanceMetric::parse(v).ok_or_else(|| {
                        ScannerError::Parse(format!("unknown metric {v:?}"))
                    })?);
                }
                Some(("threshold", v)) => {
                    threshold = Some(v.parse::<f64>().map_err(|e| {
                        ScannerError::Parse(format!("bad threshold {v:?}: {e}"))
                    })?);
                }
                _ => return Err(ScannerError::Parse(format!("unknown header field {field:?}"))),
            }
        }
        let metric = metric.ok_or_else(|| ScannerError::Parse("header lacks metric".into()))?;
        let threshold =
            threshold.ok_or_else(|| ScannerError::Parse("header lacks threshold".into()))?;

        let mut algorithm = None;
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (id, algo_s, payload) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c), None) => (a, b, c),
                _ => {
                    return Err(ScannerError::Parse(format!(
                        "record line {} is not id<TAB>algorithm<TAB>hash",
                        lineno + 2
                    )))
                }
            };
            let algo = HashAlgorithm::parse(algo_s)
                .ok_or_else(|| ScannerError::Parse(format!("unknown algorithm {algo_s:?}")))?;
            match algorithm {
                None => algorithm = Some(algo),
                Some(prev) if prev != algo => {
                    return Err(ScannerError::AlgorithmMismatch {
                        db: prev,
                        query: algo,
                    })
                }
                _ => {}
            }
            let hash = Hash::parse_payload(algo, payload)
                .map_err(|e| ScannerError::Parse(e.to_string()))?;
            records.push((id.to_string(), hash));
        }
        let algorithm = algorithm.ok_or_else(|| ScannerError::Parse("no records".into()))?;
        if algorithm.metric() != metric {
            return Err(ScannerError::Parse(format!(
                "metric {} does not match algorithm {}",
                metric.name(),
                algorithm
            )));
        }
        HashDb::new(algorithm, threshold, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<HashDb, ScannerError> {
        HashDb::parse(&std::fs::read_to_string(path)?)
    }
}

/// Result of matching one query hash against a database.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub flagged: bool,
    pub min_distance: f64,
    pub nearest_id: String,
}

/// Exact linear scan: flagged iff some record is within the database
/// threshold. Ties on the minimum distance break toward the lowest record
/// index.
pub fn match_query(db: &HashDb, query: &Hash) -> Result<MatchResult, ScannerError> {
    match_query_at(db, query, db.threshold)
}

/// Linear scan against an explicit threshold.
pub fn match_query_at(db: &HashDb, query: &Hash, threshold: f64) -> Result<MatchResult, ScannerError> {
    if db.is_empty() {
        return Err(ScannerError::EmptyDb);
    }
    if query.algorithm() != db.algorithm {
        return Err(ScannerError::AlgorithmMismatch {
            db: db.algorithm,
            query: query.algorithm(),
        });
    }
    let mut best_idx = 0;
    let mut best = f64::INFINITY;
    for (i, (_, hash)) in db.records.iter().enumerate() {
        let d = distance(hash, query).expect("algorithms checked");
        if d < best {
            best = d;
            best_idx = i;
        }
    }
    Ok(MatchResult {
        flagged: best <= threshold,
        min_distance: best,
        nearest_id: db.records[best_idx].0.clone(),
    })
}

/// Fraction of out-of-database queries flagged at threshold `t`.
pub fn estimate_fpr(db: &HashDb, queries: &[Hash], t: f64) -> Result<f64, ScannerError> {
    if queries.is_empty() {
        return Err(ScannerError::EmptyQuerySet);
    }
    let mut flagged = 0usize;
    for q in queries {
        if match_query_at(db, q, t)?.flagged {
            flagged += 1;
        }
    }
    Ok(flagged as f64 / queries.len() as f64)
}

/// Fraction of modified images that evade the database entirely at
/// threshold `t`: a modified image within `t` of any record counts as
/// caught, not only its own original.
pub fn estimate_fnr(
    db: &HashDb,
    attacked: &[(String, Hash)],
    t: f64,
) -> Result<f64, ScannerError> {
    if attacked.is_empty() {
        return Err(ScannerError::EmptyQuerySet);
    }
    for (id, _) in attacked {
        if !db.contains_id(id) {
            return Err(ScannerError::UnknownId(id.clone()));
        }
    }
    let mut missed = 0usize;
    for (_, hash) in attacked {
        if !match_query_at(db, hash, t)?.flagged {
            missed += 1;
        }
    }
    Ok(missed as f64 / attacked.len() as f64)
}

/// Expected number of wrongly detected images per day:
/// `fpr * (1 - prevalence) * daily_volume`.
pub fn daily_false_flags(fpr: f64, daily_volume: f64, prevalence: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&fpr));
    debug_assert!((0.0..=1.0).contains(&prevalence));
    debug_assert!(daily_volume >= 0.0);
    fpr * (1.0 - prevalence) * daily_volume
}

/// One row of a threshold sweep.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: Option<f64>,
}

/// Threshold-sweep outcome with the sample counts it was estimated from.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    /// Database size N.
    pub db_size: usize,
    /// Out-of-database query count M.
    pub query_count: usize,
    /// Attacked-image count N'.
    pub attacked_count: usize,
}

impl EvalResult {
    /// CSV with 17-significant-digit floats; the fnr column is omitted when
    /// no attacked corpus was supplied.
    pub fn to_csv(&self) -> String {
        let with_fnr = self.rows.iter().any(|r| r.fnr.is_some());
        let mut out = String::new();
        if with_fnr {
            out.push_str("threshold,fpr,fnr,n,m\n");
        } else {
            out.push_str("threshold,fpr,n,m\n");
        }
        for row in &self.rows {
            let _ = write!(out, "{},{}", format_f64(row.threshold), format_f64(row.fpr));
            if with_fnr {
                let _ = write!(out, ",{}", format_f64(row.fnr.expect("uniform rows")));
            }
            let _ = writeln!(out, ",{},{}", self.db_size, self.query_count);
        }
        out
    }
}

/// Runs the FPR (and optionally FNR) estimate across a threshold list.
pub fn evaluate(
    db: &HashDb,
    queries: &[Hash],
    attacked: Option<&[(String, Hash)]>,
    thresholds: &[f64],
) -> Result<EvalResult, ScannerError> {
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let fpr = estimate_fpr(db, queries, t)?;
        let fnr = match attacked {
            Some(a) => Some(estimate_fnr(db, a, t)?),
            None => None,
        };
        rows.push(EvalRow { threshold: t, fpr, fnr });
    }
    Ok(EvalResult {
        rows,
        db_size: db.len(),
        query_count: queries.len(),
        attacked_count: attacked.map_or(0, <[_]>::len),
    })
}

/// Per-user flagging model: `n_images` shared, of which offenders share
/// `illegal` adversarially modified ones.
#[derive(Debug, Clone, Copy)]
pub struct FlagModel {
    pub n_images: usize,
    pub illegal: usize,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserKind {
    NonOffender,
    Offender,
}

impl FlagModel {
    pub fn new(n_images: usize, illegal: usize, fpr: f64, fnr: f64) -> Result<FlagModel, ScannerError> {
        if illegal > n_images {
            return Err(ScannerError::OutOfRange(format!(
                "illegal count {illegal} exceeds image count {n_images}"
            )));
        }
        for (name, v) in [("fpr", fpr), ("fnr", fnr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ScannerError::OutOfRange(format!("{name} must be in [0,1], got {v}")));
            }
        }
        Ok(FlagModel {
            n_images,
            illegal,
            fpr,
            fnr,
        })
    }
}

/// `ln P(X = x)` for `X ~ Bin(n, p)`, with the degenerate p in {0, 1} cases
/// handled exactly.
fn ln_binomial_pmf(n: usize, p: f64, x: usize) -> f64 {
    debug_assert!(x <= n);
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let (n_f, x_f) = (n as f64, x as f64);
    let ln_choose = ln_gamma(n_f + 1.0) - ln_gamma(x_f + 1.0) - ln_gamma(n_f - x_f + 1.0);
    ln_choose + x_f * p.ln() + (n_f - x_f) * (1.0 - p).ln()
}

/// Probability that the scanner flags exactly `k` of the user's images.
///
/// Non-offenders follow `Bin(N, FPR)`; offenders follow the convolution of
/// `Bin(l, 1 - FNR)` over the modified illegal images and `Bin(N - l, FPR)`
/// over the rest. Terms are computed in log space so the pmf stays accurate
/// at N = 1000.
pub fn flag_pmf(model: &FlagModel, user: UserKind, k: usize) -> Result<f64, ScannerError> {
    if k > model.n_images {
        return Err(ScannerError::OutOfRange(format!(
            "k = {k} exceeds the number of images {}",
            model.n_images
        )));
    }
    match user {
        UserKind::NonOffender => Ok(ln_binomial_pmf(model.n_images, model.fpr, k).exp()),
        UserKind::Offender => {
            let l = model.illegal;
            let rest = model.n_images - l;
            let tpr = 1.0 - model.fnr;
            let mut total = 0.0;
            let lo = k.saturating_sub(rest);
            for i in lo..=l.min(k) {
                let ln_term =
                    ln_binomial_pmf(l, tpr, i) + ln_binomial_pmf(rest, model.fpr, k - i);
                total += ln_term.exp();
            }
            Ok(total)
        }
    }
}

/// Tail probability `P(at least k images flagged)`.
pub fn flag_tail(model: &FlagModel, user: UserKind, k: usize) -> Result<f64, ScannerError> {
    if k > model.n_images {
        return Err(ScannerError::OutOfRange(format!(
            "k = {k} exceeds the number of images {}",
            model.n_images
        )));
    }
    let mut tail = 0.0;
    for j in k..=model.n_images {
        tail += flag_pmf(model, user, j)?;
    }
    Ok(tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_hash(algo: HashAlgorithm, rng: &mut impl Rng) -> Hash {
        let bits: Vec<bool> = (0..algo.bit_len().unwrap()).map(|_| rng.random()).collect();
        Hash::from_bits(algo, &bits).unwrap()
    }

    fn random_real_hash(rng: &mut impl Rng) -> Hash {
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        Hash::from_reals(HashAlgorithm::PHashContinuous, v).unwrap()
    }

    fn random_db(n: usize, algo: HashAlgorithm, t: f64, rng: &mut impl Rng) -> HashDb {
        let records: Vec<(String, Hash)> = (0..n)
            .map(|i| (format!("img{i:04}"), random_hash(algo, rng)))
            .collect();
        HashDb::new(algo, t, records).unwrap()
    }

    #[test]
    fn match_finds_exact_record() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let db = random_db(50, HashAlgorithm::PHash, 0.0, &mut rng);
        let (id, hash) = db.records()[17].clone();
        let m = match_query(&db, &hash).unwrap();
        assert!(m.flagged);
        assert_eq!(m.min_distance, 0.0);
        assert_eq!(m.nearest_id, id);
    }

    #[test]
    fn match_respects_threshold_strictly() {
        // A query at Hamming distance 5 is not flagged at T = 4.
        let bits: Vec<bool> = (0..64).map(|i| i < 5).collect();
        let near = Hash::from_bits(HashAlgorithm::PHash, &bits).unwrap();
        let zero = Hash::from_bits(HashAlgorithm::PHash, &[false; 64]).unwrap();
        let db = HashDb::new(HashAlgorithm::PHash, 4.0, vec![("a".into(), zero)]).unwrap();
        let m = match_query(&db, &near).unwrap();
        assert!(!m.flagged);
        assert_eq!(m.min_distance, 5.0);
    }

    #[test]
    fn match_agrees_with_brute_force_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let db = random_db(1000, HashAlgorithm::PHash, 10.0, &mut rng);
        for _ in 0..1000 {
            let q = random_hash(HashAlgorithm::PHash, &mut rng);
            let m = match_query(&db, &q).unwrap();
            // Independent scan recomputing every distance.
            let dists: Vec<f64> = db
                .records()
                .iter()
                .map(|(_, h)| distance(h, &q).unwrap())
                .collect();
            let best = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let first_best = dists.iter().position(|&d| d == best).unwrap();
            assert_eq!(m.min_distance, best);
            assert_eq!(m.flagged, best <= 10.0);
            assert_eq!(m.nearest_id, db.records()[first_best].0);
        }
        // Euclidean databases behave identically.
        let records: Vec<(String, Hash)> = (0..200)
            .map(|i| (format!("r{i}"), random_real_hash(&mut rng)))
            .collect();
        let db = HashDb::new(HashAlgorithm::PHashContinuous, 1.0, records).unwrap();
        for _ in 0..200 {
            let q = random_real_hash(&mut rng);
            let m = match_query(&db, &q).unwrap();
            let best = db
                .records()
                .iter()
                .map(|(_, h)| distance(h, &q).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(m.min_distance, best);
        }
    }

    #[test]
    fn match_error_paths() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let empty = HashDb::new(HashAlgorithm::PHash, 2.0, vec![]).unwrap();
        let q = random_hash(HashAlgorithm::PHash, &mut rng);
        assert!(matches!(match_query(&empty, &q), Err(ScannerError::EmptyDb)));

        let db = random_db(3, HashAlgorithm::PHash, 2.0, &mut rng);
        let wrong = random_hash(HashAlgorithm::AHash, &mut rng);
        assert!(matches!(
            match_query(&db, &wrong),
            Err(ScannerError::AlgorithmMismatch { .. })
        ));
    }

    #[test]
    fn fpr_basics_and_monotonicity() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let db = random_db(1000, HashAlgorithm::PHash, 0.0, &mut rng);
        // Queries identical to stored hashes are always flagged.
        let hits: Vec<Hash> = db.records().iter().take(20).map(|(_, h)| h.clone()).collect();
        assert_eq!(estimate_fpr(&db, &hits, 0.0).unwrap(), 1.0);

        // Random 64-bit hashes essentially never collide at T = 0.
        let queries: Vec<Hash> = (0..1000)
            .map(|_| random_hash(HashAlgorithm::PHash, &mut rng))
            .collect();
        assert!(estimate_fpr(&db, &queries, 0.0).unwrap() <= 1e-3);

        // Monotone non-decreasing in the threshold.
        let mut prev = 0.0;
        for t in [0.0, 5.0, 10.0, 20.0, 32.0] {
            let fpr = estimate_fpr(&db, &queries, t).unwrap();
            assert!(fpr >= prev);
            prev = fpr;
        }
        assert!(matches!(
            estimate_fpr(&db, &[], 0.0),
            Err(ScannerError::EmptyQuerySet)
        ));
    }

    #[test]
    fn fpr_monotone_in_db_size() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let all = random_db(500, HashAlgorithm::PHash, 0.0, &mut rng);
        let queries: Vec<Hash> = (0..300)
            .map(|_| random_hash(HashAlgorithm::PHash, &mut rng))
            .collect();
        let mut prev = 0.0;
        for n in [100, 300, 500] {
            let db = HashDb::new(
                HashAlgorithm::PHash,
                0.0,
                all.records()[..n].to_vec(),
            )
            .unwrap();
            let fpr = estimate_fpr(&db, &queries, 24.0).unwrap();
            assert!(fpr >= prev);
            prev = fpr;
        }
    }

    #[test]
    fn fnr_basics_and_monotonicity() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let db = random_db(100, HashAlgorithm::PHash, 4.0, &mut rng);

        // Unmodified hash: caught at any threshold.
        let (id, h) = db.records()[0].clone();
        assert_eq!(estimate_fnr(&db, &[(id, h)], 0.0).unwrap(), 0.0);

        // Single-record db with the modification at distance T + 1 evades.
        let zero = Hash::from_bits(HashAlgorithm::PHash, &[false; 64]).unwrap();
        let bits: Vec<bool> = (0..64).map(|i| i < 5).collect();
        let moved = Hash::from_bits(HashAlgorithm::PHash, &bits).unwrap();
        let single = HashDb::new(HashAlgorithm::PHash, 4.0, vec![("x".into(), zero)]).unwrap();
        assert_eq!(
            estimate_fnr(&single, &[("x".into(), moved.clone())], 4.0).unwrap(),
            1.0
        );

        // FNR is non-increasing in the threshold.
        let attacked: Vec<(String, Hash)> = db
            .records()
            .iter()
            .take(50)
            .map(|(id, _)| (id.clone(), random_hash(HashAlgorithm::PHash, &mut rng)))
            .collect();
        let mut prev = 1.0;
        for t in [0.0, 8.0, 16.0, 32.0] {
            let fnr = estimate_fnr(&db, &attacked, t).unwrap();
            assert!(fnr <= prev);
            prev = fnr;
        }

        assert!(matches!(
            estimate_fnr(&single, &[("missing".into(), moved)], 4.0),
            Err(ScannerError::UnknownId(_))
        ));
    }

    #[test]
    fn daily_false_flags_matches_published_scale() {
        // fpr 0.11%, 4.5B daily images, prevalence 1e-4: about five million.
        let v = daily_false_flags(0.0011, 4.5e9, 1e-4);
        assert!((4.5e6..=5.5e6).contains(&v), "{v}");
        assert_eq!(daily_false_flags(0.0, 4.5e9, 1e-4), 0.0);
        // Prevalence barely matters at realistic rates.
        let a = daily_false_flags(0.0011, 4.5e9, 1e-4);
        let b = daily_false_flags(0.0011, 4.5e9, 1e-7);
        assert!(((a - b) / b).abs() < 1e-4);
    }

    #[test]
    fn flag_pmf_closed_form_cases() {
        // Single Bernoulli.
        let m = FlagModel::new(1, 0, 0.37, 0.0).unwrap();
        assert!((flag_pmf(&m, UserKind::NonOffender, 1).unwrap() - 0.37).abs() < 1e-12);
        // All images illegal, none missed: exactly N flags.
        let m = FlagModel::new(20, 20, 0.1, 0.0).unwrap();
        assert!((flag_pmf(&m, UserKind::Offender, 20).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(flag_pmf(&m, UserKind::Offender, 3).unwrap(), 0.0);
        // k out of range.
        assert!(matches!(
            flag_pmf(&m, UserKind::Offender, 21),
            Err(ScannerError::OutOfRange(_))
        ));
    }

    #[test]
    fn flag_pmf_sums_to_one() {
        let m = FlagModel::new(1000, 100, 0.0011, 0.93).unwrap();
        for user in [UserKind::NonOffender, UserKind::Offender] {
            let total: f64 = (0..=1000).map(|k| flag_pmf(&m, user, k).unwrap()).sum();
            assert!((total - 1.0).abs() <= 1e-9, "{user:?}: {total}");
        }
    }

    #[test]
    fn offender_matches_nonoffender_when_tpr_equals_fpr() {
        // 1 - FNR = FPR makes modified images indistinguishable.
        let fpr = 0.3;
        let m = FlagModel::new(200, 40, fpr, 1.0 - fpr).unwrap();
        for k in 0..=200 {
            let a = flag_pmf(&m, UserKind::NonOffender, k).unwrap();
            let b = flag_pmf(&m, UserKind::Offender, k).unwrap();
            assert!((a - b).abs() <= 1e-9, "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn flag_tail_is_consistent_with_pmf() {
        let m = FlagModel::new(100, 10, 0.02, 0.8).unwrap();
        for user in [UserKind::NonOffender, UserKind::Offender] {
            for k in 0..100 {
                let lhs = flag_tail(&m, user, k).unwrap() - flag_tail(&m, user, k + 1).unwrap();
                let rhs = flag_pmf(&m, user, k).unwrap();
                assert!((lhs - rhs).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn offender_pmf_matches_monte_carlo() {
        let m = FlagModel::new(1000, 100, 0.0011, 0.93).unwrap();
        let users = 100_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(12345);
        let mut counts = vec![0u32; m.n_images + 1];
        for _ in 0..users {
            let mut flagged = 0usize;
            for _ in 0..m.illegal {
                if rng.random::<f64>() < 1.0 - m.fnr {
                    flagged += 1;
                }
            }
            for _ in 0..m.n_images - m.illegal {
                if rng.random::<f64>() < m.fpr {
                    flagged += 1;
                }
            }
            counts[flagged] += 1;
        }
        // Compare within 3 sigma wherever the pmf is non-negligible.
        for k in 0..=m.n_images {
            let p = flag_pmf(&m, UserKind::Offender, k).unwrap();
            if p < 1e-4 {
                continue;
            }
            let empirical = counts[k] as f64 / users as f64;
            let sigma = (p * (1.0 - p) / users as f64).sqrt();
            assert!(
                (empirical - p).abs() <= 3.0 * sigma,
                "k={k}: |{empirical} - {p}| > 3*{sigma}"
            );
        }
    }

    #[test]
    fn db_file_roundtrip_and_validation() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let db = random_db(10, HashAlgorithm::PdqLite, 30.0, &mut rng);
        let text = db.to_file_string();
        let back = HashDb::parse(&text).unwrap();
        assert_eq!(back.algorithm(), db.algorithm());
        assert_eq!(back.threshold(), db.threshold());
        assert_eq!(back.records().len(), db.records().len());
        for ((ia, ha), (ib, hb)) in db.records().iter().zip(back.records()) {
            assert_eq!(ia, ib);
            assert_eq!(ha, hb);
        }
        // Serialization is stable byte for byte.
        assert_eq!(text, back.to_file_string());

        // Continuous payloads survive the float round-trip exactly.
        let records: Vec<(String, Hash)> = (0..5)
            .map(|i| (format!("c{i}"), random_real_hash(&mut rng)))
            .collect();
        let db = HashDb::new(HashAlgorithm::PHashContinuous, 0.6, records).unwrap();
        let back = HashDb::parse(&db.to_file_string()).unwrap();
        for ((_, ha), (_, hb)) in db.records().iter().zip(back.records()) {
            assert_eq!(ha, hb);
        }

        assert!(matches!(
            HashDb::parse("#metric=hamming\tthreshold=2\nid\tahash\tzz"),
            Err(ScannerError::Parse(_))
        ));
        let dup = HashDb::new(
            HashAlgorithm::PHash,
            2.0,
            vec![
                ("same".into(), random_hash(HashAlgorithm::PHash, &mut rng)),
                ("same".into(), random_hash(HashAlgorithm::PHash, &mut rng)),
            ],
        );
        assert!(matches!(dup, Err(ScannerError::DuplicateId(_))));
    }

    #[test]
    fn evaluate_sweeps_thresholds() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let db = random_db(100, HashAlgorithm::PHash, 2.0, &mut rng);
        let queries: Vec<Hash> = db.records().iter().map(|(_, h)| h.clone()).collect();
        let result = evaluate(&db, &queries, None, &standard_thresholds(HashAlgorithm::PHash))
            .unwrap();
        // In-database queries are always flagged.
        assert!(result.rows.iter().all(|r| r.fpr == 1.0));
        let csv = result.to_csv();
        assert!(csv.starts_with("threshold,fpr,n,m\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
