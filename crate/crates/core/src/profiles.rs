//! User preference ingestion and privacy profiles.
//!
//! Profiles are k-means centroids of the users' 1–5 ratings. Clustering
//! distance is squared Euclidean on the raw ratings with the `safe`
//! coordinate left out; centroids get `safe = 0.5` re-inserted afterwards.
//! `K` is chosen from a candidate list by silhouette score.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{AttributeTaxonomy, PreferenceScale};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("rating {value} for `{key}` by user `{user_id}` is outside 1..=5")]
    OutOfRangeRating { user_id: String, key: String, value: String },
    #[error("duplicate user `{0}`")]
    DuplicateUser(String),
    #[error("k = {k} is invalid for {n} points")]
    BadK { k: usize, n: usize },
    #[error("no points to cluster")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("no candidate values of k")]
    NoCandidates,
    #[error("no profiles available")]
    NoProfiles,
    #[error("invalid profile set: {0}")]
    InvalidProfiles(String),
}

impl From<csv::Error> for ProfileError {
    fn from(e: csv::Error) -> Self {
        ProfileError::Parse(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceResponse {
    pub user_id: String,
    /// Indexed by attribute id; `safe` holds 0.5.
    pub prefs: Vec<f64>,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
}

const DEMOGRAPHIC_PREFIX: &str = "demo_";

/// Parse the responses CSV: `user_id`, one integer column per surveyed
/// attribute key (any order), optional `demo_*` columns.
pub fn parse_responses<R: Read>(reader: R, taxonomy: &AttributeTaxonomy) -> Result<Vec<PreferenceResponse>, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    if header.get(0) != Some("user_id") {
        return Err(ProfileError::Parse("first column must be `user_id`".into()));
    }
    enum Column {
        Rating(usize),
        Demographic(String),
    }
    let mut columns = Vec::with_capacity(header.len());
    let mut seen = HashSet::new();
    for name in header.iter().skip(1) {
        if !seen.insert(name.to_string()) {
            return Err(ProfileError::Parse(format!("duplicate column `{name}`")));
        }
        if name.starts_with(DEMOGRAPHIC_PREFIX) {
            columns.push(Column::Demographic(name.to_string()));
            continue;
        }
        let id = taxonomy
            .index_of(name)
            .map_err(|_| ProfileError::Parse(format!("unknown column `{name}`")))?;
        if id == taxonomy.safe_index() {
            return Err(ProfileError::Parse("`safe` is not a surveyed attribute".into()));
        }
        columns.push(Column::Rating(id));
    }
    let rated = columns.iter().filter(|c| matches!(c, Column::Rating(_))).count();
    if rated != taxonomy.len() - 1 {
        return Err(ProfileError::Parse(format!(
            "expected {} attribute columns, found {rated}",
            taxonomy.len() - 1
        )));
    }

    let mut responses = Vec::new();
    let mut users = HashSet::new();
    for (row, record) in records.enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(ProfileError::Parse(format!(
                "row {} has {} fields, header has {}",
                row + 2,
                record.len(),
                header.len()
            )));
        }
        let user_id = record[0].to_string();
        let mut prefs = vec![0.0; taxonomy.len()];
        prefs[taxonomy.safe_index()] = PreferenceScale::SAFE_VALUE;
        let mut demographics = BTreeMap::new();
        for (col, field) in columns.iter().zip(record.iter().skip(1)) {
            match col {
                Column::Demographic(name) => {
                    demographics.insert(name.clone(), field.to_string());
                }
                Column::Rating(id) => {
                    let out_of_range = || ProfileError::OutOfRangeRating {
                        user_id: user_id.clone(),
                        key: taxonomy.attributes()[*id].key.clone(),
                        value: field.to_string(),
                    };
                    let value: i64 = field.parse().map_err(|_| out_of_range())?;
                    if !(1..=5).contains(&value) {
                        return Err(out_of_range());
                    }
                    prefs[*id] = value as f64;
                }
            }
        }
        if !users.insert(user_id.clone()) {
            return Err(ProfileError::DuplicateUser(user_id));
        }
        responses.push(PreferenceResponse {
            user_id,
            prefs,
            demographics,
        });
    }
    Ok(responses)
}

pub fn load_responses(path: impl AsRef<Path>, taxonomy: &AttributeTaxonomy) -> Result<Vec<PreferenceResponse>, ProfileError> {
    parse_responses(BufReader::new(File::open(path)?), taxonomy)
}

/// Write responses in the CSV layout accepted by [`parse_responses`].
/// Ratings are rounded to the nearest integer.
pub fn write_responses<W: Write>(
    w: W,
    responses: &[PreferenceResponse],
    taxonomy: &AttributeTaxonomy,
) -> Result<(), ProfileError> {
    let demo_keys: Vec<String> = responses
        .iter()
        .flat_map(|r| r.demographics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["user_id".to_string()];
    header.extend(taxonomy.surveyed_keys().map(str::to_string));
    header.extend(demo_keys.iter().cloned());
    out.write_record(&header)?;
    for r in responses {
        let mut row = vec![r.user_id.clone()];
        for a in taxonomy.attributes() {
            if a.id != taxonomy.safe_index() {
                row.push(format!("{}", r.prefs[a.id].round() as i64));
            }
        }
        for k in &demo_keys {
            row.push(r.demographics.get(k).cloned().unwrap_or_default());
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // All remaining points coincide with a chosen centre.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when an iteration changes no assignment or after `max_iter`
/// iterations. A cluster that ends up empty is re-seeded with the point
/// farthest from its own centroid. Assignment ties go to the lower index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult, ProfileError> {
    let n = points.len();
    if n == 0 {
        return Err(ProfileError::EmptyInput);
    }
    if k == 0 || k > n {
        return Err(ProfileError::BadK { k, n });
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(ProfileError::DimensionMismatch {
            expected: dim,
            actual: p.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let assign = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        points.iter().map(|p| nearest(p, centroids)).unzip()
    };
    let (mut assignment, mut dists) = assign(&centroids);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<(usize, f64)> = points
                .iter()
                .zip(&assignment)
                .enumerate()
                .map(|(i, (p, &c))| (i, sq_dist(p, &centroids[c])))
                .collect();
            far.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite distances").then(a.0.cmp(&b.0)));
            for (c, (i, _)) in empty.into_iter().zip(far) {
                centroids[c] = points[i].clone();
            }
        }
        let (next, next_dists) = assign(&centroids);
        let changed = next != assignment;
        assignment = next;
        dists = next_dists;
        trace.push(dists.iter().sum());
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignment,
        inertia: dists.iter().sum(),
        iterations,
        inertia_trace: trace,
    })
}

/// Mean silhouette `(b - a) / max(a, b)` with Euclidean distances.
///
/// `a` is the mean distance to the rest of the point's own cluster, `b` the
/// smallest mean distance to another cluster. Points in singleton clusters
/// contribute 0. Cluster labels may be arbitrary integers.
pub fn silhouette_score(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64, ProfileError> {
    if points.len() != assignment.len() {
        return Err(ProfileError::DimensionMismatch {
            expected: points.len(),
            actual: assignment.len(),
        });
    }
    let mut compact: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in assignment {
        let next = compact.len();
        compact.entry(c).or_insert(next);
    }
    let k = compact.len();
    if k < 2 {
        return Err(ProfileError::SingleCluster);
    }
    let labels: Vec<usize> = assignment.iter().map(|c| compact[c]).collect();
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    let total: f64 = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += sq_dist(&points[i], p).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok(total / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyProfile {
    pub profile_id: usize,
    pub member_count: usize,
    /// Centroid preferences indexed by attribute id; `safe` holds 0.5.
    pub u: Vec<f64>,
}

/// Profiles as exported to and loaded from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub k: usize,
    pub silhouette: f64,
    pub profiles: Vec<PrivacyProfile>,
}

impl ProfileSet {
    /// Check profile vectors against a taxonomy and the ordering contract.
    pub fn validate(&self, taxonomy: &AttributeTaxonomy) -> Result<(), ProfileError> {
        let bad = |m: String| Err(ProfileError::InvalidProfiles(m));
        if self.profiles.len() != self.k {
            return bad(format!("k = {} but {} profiles", self.k, self.profiles.len()));
        }
        let mut ids = HashSet::new();
        for p in &self.profiles {
            if !ids.insert(p.profile_id) {
                return bad(format!("duplicate profile id {}", p.profile_id));
            }
            if p.u.len() != taxonomy.len() {
                return bad(format!("profile {} has {} entries", p.profile_id, p.u.len()));
            }
            for (a, &v) in p.u.iter().enumerate() {
                let ok = if a == taxonomy.safe_index() {
                    v == PreferenceScale::SAFE_VALUE
                } else {
                    v.is_finite() && PreferenceScale::contains(v)
                };
                if !ok {
                    return bad(format!("profile {} has u[{a}] = {v}", p.profile_id));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, profile_id: usize) -> Option<&PrivacyProfile> {
        self.profiles.iter().find(|p| p.profile_id == profile_id)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profiles serialize");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ProfileError::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProfileError> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub profiles: Vec<PrivacyProfile>,
    /// user id → profile id
    pub assignment: BTreeMap<String, usize>,
    pub inertia: f64,
    pub silhouette: f64,
}

impl ClusteringResult {
    pub fn profile_set(&self) -> ProfileSet {
        ProfileSet {
            k: self.profiles.len(),
            silhouette: self.silhouette,
            profiles: self.profiles.clone(),
        }
    }
}

/// Which silhouette extreme picks `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectDirection {
    #[default]
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteRow {
    pub k: usize,
    pub silhouette: f64,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSelection {
    pub k: usize,
    pub direction: SelectDirection,
    pub result: ClusteringResult,
    pub table: Vec<SilhouetteRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectOptions {
    pub direction: SelectDirection,
    pub max_iter: usize,
    /// k-means restarts per candidate; the lowest-inertia run is kept.
    pub n_init: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            direction: SelectDirection::Maximize,
            max_iter: 300,
            n_init: 5,
        }
    }
}

/// Default candidate range for `K`.
pub fn default_k_candidates() -> Vec<usize> {
    (2..=40).collect()
}

fn run_seed(seed: u64, k: usize, restart: usize) -> u64 {
    let mut z = seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (restart as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 31)
}

fn strip(v: &[f64], skip: usize) -> Vec<f64> {
    v.iter()
        .enumerate()
        .filter_map(|(i, &x)| (i != skip).then_some(x))
        .collect()
}

/// Cluster responses for every candidate `K` and keep the one selected by
/// silhouette (ties go to the smaller `K`). Profiles are renumbered by
/// descending member count, ties by original cluster index.
pub fn select_profiles(
    responses: &[PreferenceResponse],
    safe_index: usize,
    k_candidates: &[usize],
    seed: u64,
    options: &SelectOptions,
) -> Result<ProfileSelection, ProfileError> {
    if k_candidates.is_empty() {
        return Err(ProfileError::NoCandidates);
    }
    if responses.is_empty() {
        return Err(ProfileError::EmptyInput);
    }
    let full_dim = responses[0].prefs.len();
    if safe_index >= full_dim {
        return Err(ProfileError::DimensionMismatch {
            expected: safe_index + 1,
            actual: full_dim,
        });
    }
    let points: Vec<Vec<f64>> = responses.iter().map(|r| strip(&r.prefs, safe_index)).collect();

    let runs: Vec<(usize, KMeansResult, f64)> = k_candidates
        .par_iter()
        .map(|&k| {
            let mut best: Option<KMeansResult> = None;
            for restart in 0..options.n_init.max(1) {
                let r = kmeans(&points, k, run_seed(seed, k, restart), options.max_iter)?;
                if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
                    best = Some(r);
                }
            }
            let best = best.expect("at least one run");
            let s = silhouette_score(&points, &best.assignment)?;
            Ok((k, best, s))
        })
        .collect::<Result<_, ProfileError>>()?;

    let table: Vec<SilhouetteRow> = runs
        .iter()
        .map(|(k, r, s)| SilhouetteRow {
            k: *k,
            silhouette: *s,
            inertia: r.inertia,
        })
        .collect();
    let better = |a: f64, b: f64| match options.direction {
        SelectDirection::Maximize => a > b,
        SelectDirection::Minimize => a < b,
    };
    let mut pick = 0;
    for (i, (k, _, s)) in runs.iter().enumerate() {
        let (bk, _, bs) = &runs[pick];
        if better(*s, *bs) || (*s == *bs && k < bk) {
            pick = i;
        }
    }
    let (k, km, silhouette) = runs.into_iter().nth(pick).expect("pick is in range");

    let mut counts = vec![0usize; k];
    for &c in &km.assignment {
        counts[c] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut renumber = vec![0usize; k];
    for (new_id, &old) in order.iter().enumerate() {
        renumber[old] = new_id;
    }
    let profiles = order
        .iter()
        .enumerate()
        .map(|(new_id, &old)| {
            let mut u = km.centroids[old].clone();
            u.insert(safe_index, PreferenceScale::SAFE_VALUE);
            PrivacyProfile {
                profile_id: new_id,
                member_count: counts[old],
                u,
            }
        })
        .collect();
    let assignment = responses
        .iter()
        .zip(&km.assignment)
        .map(|(r, &c)| (r.user_id.clone(), renumber[c]))
        .collect();
    Ok(ProfileSelection {
        k,
        direction: options.direction,
        result: ClusteringResult {
            profiles,
            assignment,
            inertia: km.inertia,
            silhouette,
        },
        table,
    })
}

/// Nearest profile by squared Euclidean distance; ties go to the smaller id.
pub fn assign_profile(profiles: &[PrivacyProfile], prefs: &[f64]) -> Result<usize, ProfileError> {
    let mut best: Option<(f64, usize)> = None;
    for p in profiles {
        if p.u.len() != prefs.len() {
            return Err(ProfileError::DimensionMismatch {
                expected: p.u.len(),
                actual: prefs.len(),
            });
        }
        let d = sq_dist(&p.u, prefs);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && p.profile_id < bid),
        };
        if better {
            best = Some((d, p.profile_id));
        }
    }
    best.map(|(_, id)| id).ok_or(ProfileError::NoProfiles)
}

/// Profile × attribute preference matrix as CSV, for heat-map plotting.
pub fn write_profile_matrix_csv<W: Write>(w: W, taxonomy: &AttributeTaxonomy, profiles: &[PrivacyProfile]) -> Result<(), ProfileError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["profile_id".to_string(), "member_count".to_string()];
    header.extend(taxonomy.attributes().iter().map(|a| a.key.clone()));
    out.write_record(&header)?;
    for p in profiles {
        let mut row = vec![p.profile_id.to_string(), p.member_count.to_string()];
        row.extend(p.u.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Fraction of points on which two labelings agree under the best one-to-one
/// matching of cluster labels (exhaustive over permutations; `k <= 8`).
pub fn best_match_agreement(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 1.0;
    }
    let index = |labels: &[usize]| {
        let mut m: HashMap<usize, usize> = HashMap::new();
        for &l in labels {
            let next = m.len();
            m.entry(l).or_insert(next);
        }
        m
    };
    let (ia, ib) = (index(a), index(b));
    let k = ia.len().max(ib.len());
    assert!(k <= 8, "exhaustive matching limited to 8 clusters");
    let mut confusion = vec![vec![0usize; k]; k];
    for (x, y) in a.iter().zip(b) {
        confusion[ia[x]][ib[y]] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..k).map(|i| confusion[i][p[i]]).sum();
        best = best.max(hits);
    });
    best as f64 / a.len() as f64
}

fn permute(v: &mut Vec<usize>, start: usize, f: &mut dyn FnMut(&[usize])) {
    if start == v.len() {
        f(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, f);
        v.swap(start, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, centre) in [[0.0, 0.0], [10.0, 0.0]].iter().enumerate() {
            for _ in 0..n_per {
                pts.push(centre.iter().map(|v| v + noise.sample(&mut rng)).collect());
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn k1_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 8.0]];
        let r = kmeans(&pts, 1, 0, 100).unwrap();
        assert_eq!(r.centroids[0], vec![2.0, 4.0]);
        let total_var: f64 = (4.0 + 0.0 + 4.0 + 9.0 + 1.0 + 16.0) / 3.0;
        assert!((r.inertia - total_var * 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![-3.0]];
        let r = kmeans(&pts, 4, 11, 100).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignment.clone();
        a.sort();
        a.dedup();
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn two_blobs_are_recovered() {
        let (pts, truth) = blobs(15, 4);
        let r = kmeans(&pts, 2, 1, 100).unwrap();
        assert_eq!(best_match_agreement(&r.assignment, &truth), 1.0);
        assert!(r.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn kmeans_errors() {
        assert!(matches!(kmeans(&[], 1, 0, 10), Err(ProfileError::EmptyInput)));
        assert!(matches!(kmeans(&[vec![1.0]], 2, 0, 10), Err(ProfileError::BadK { .. })));
        assert!(matches!(kmeans(&[vec![1.0]], 0, 0, 10), Err(ProfileError::BadK { .. })));
        assert!(matches!(
            kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0, 10),
            Err(ProfileError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_points_are_handled() {
        let pts = vec![vec![1.0]; 5];
        let r = kmeans(&pts, 3, 0, 10).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.centroids.len(), 3);
    }

    #[test]
    fn silhouette_examples() {
        let (pts, truth) = blobs(10, 2);
        assert!(silhouette_score(&pts, &truth).unwrap() > 0.9);
        let wrong: Vec<usize> = (0..pts.len()).map(|i| i % 2).collect();
        assert!(silhouette_score(&pts, &wrong).unwrap() < 0.0);
        assert_eq!(silhouette_score(&[vec![0.0], vec![5.0]], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(
            silhouette_score(&pts, &vec![3; pts.len()]),
            Err(ProfileError::SingleCluster)
        ));
    }

    fn profile(id: usize, u: Vec<f64>) -> PrivacyProfile {
        PrivacyProfile {
            profile_id: id,
            member_count: 1,
            u,
        }
    }

    #[test]
    fn assign_profile_rules() {
        let ps = vec![profile(5, vec![3.0, 3.0]), profile(2, vec![1.0, 1.0]), profile(7, vec![5.0, 5.0])];
        assert_eq!(assign_profile(&ps, &[5.0, 5.0]).unwrap(), 7);
        // equidistant between 2 and 5
        assert_eq!(assign_profile(&ps, &[2.0, 2.0]).unwrap(), 2);
        assert!(matches!(assign_profile(&[], &[1.0]), Err(ProfileError::NoProfiles)));
        assert!(matches!(
            assign_profile(&ps, &[1.0]),
            Err(ProfileError::DimensionMismatch { .. })
        ));
    }

    fn header(t: &AttributeTaxonomy) -> String {
        let mut h = vec!["user_id".to_string()];
        h.extend(t.surveyed_keys().map(str::to_string));
        h.join(",")
    }

    #[test]
    fn responses_parse() {
        let t = AttributeTaxonomy::bundled();
        let mut text = header(&t) + ",demo_age\n";
        text += &format!("u1,{},33\n", vec!["3"; 67].join(","));
        text += &format!("u2,{},\n", vec!["5"; 67].join(","));
        let r = parse_responses(text.as_bytes(), &t).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].prefs[67], 0.5);
        assert_eq!(r[0].prefs[0], 3.0);
        assert_eq!(r[0].demographics["demo_age"], "33");
        assert!(parse_responses("".as_bytes(), &t).unwrap().is_empty());
    }

    #[test]
    fn responses_reject_bad_input() {
        let t = AttributeTaxonomy::bundled();
        let mut cells = vec!["3"; 67];
        cells[10] = "6";
        let text = format!("{}\nu1,{}\n", header(&t), cells.join(","));
        assert!(matches!(
            parse_responses(text.as_bytes(), &t),
            Err(ProfileError::OutOfRangeRating { .. })
        ));
        let row = vec!["2"; 67].join(",");
        let text = format!("{}\nu1,{row}\nu1,{row}\n", header(&t));
        assert!(matches!(parse_responses(text.as_bytes(), &t), Err(ProfileError::DuplicateUser(_))));
        let text = format!("{},bogus\n", header(&t));
        assert!(matches!(parse_responses(text.as_bytes(), &t), Err(ProfileError::Parse(_))));
    }

    #[test]
    fn agreement_matching() {
        assert_eq!(best_match_agreement(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert_eq!(best_match_agreement(&[0, 0, 1, 1], &[0, 1, 1, 1]), 0.75);
    }
}
