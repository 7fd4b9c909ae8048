//! Seeded synthetic worlds with known structure: teacher-labelled features,
//! planted preference clusters, random profiles and a full-taxonomy demo
//! dataset for CLI and service fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use crate::dataset::{split_dataset, AnnotatedExample, FeatureStore, TrainingSet};
use crate::numopt::LinearModel;
use crate::profiles::{PreferenceResponse, PrivacyProfile};
use crate::taxonomy::{AttributeTaxonomy, PreferenceScale};

/// Labels produced by a random linear teacher on Gaussian features.
///
/// Every sample keeps a normalized distance of at least [`TEACHER_MARGIN`]
/// from each teacher hyperplane, so the labels are linearly separable with a
/// positive margin.
#[derive(Debug, Clone)]
pub struct TeacherWorld {
    pub teacher: LinearModel,
    pub train: TrainingSet,
    pub val: TrainingSet,
}

pub const TEACHER_MARGIN: f64 = 0.25;

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_teacher(rng: &mut ChaCha8Rng, num_attributes: usize, dim: usize, offset: Uniform<f64>) -> LinearModel {
    let mut teacher = LinearModel::zeros(num_attributes, dim);
    teacher.weights = gaussian_vec(rng, num_attributes * dim);
    for a in 0..num_attributes {
        let norm = teacher.row(a).iter().map(|w| w * w).sum::<f64>().sqrt();
        teacher.bias[a] = -norm * offset.sample(rng);
    }
    teacher
}

fn row_norms(teacher: &LinearModel) -> Vec<f64> {
    (0..teacher.out_dim)
        .map(|a| teacher.row(a).iter().map(|w| w * w).sum::<f64>().sqrt())
        .collect()
}

impl TeacherWorld {
    pub fn generate(dim: usize, num_attributes: usize, n_train: usize, n_val: usize, seed: u64) -> Self {
        Self::with_margin(dim, num_attributes, n_train, n_val, TEACHER_MARGIN, seed)
    }

    /// As [`TeacherWorld::generate`] with an explicit normalized margin.
    pub fn with_margin(dim: usize, num_attributes: usize, n_train: usize, n_val: usize, margin: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Offsets in [-0.5, 1] give prevalences between roughly 16% and 69%.
        let teacher = random_teacher(&mut rng, num_attributes, dim, Uniform::new(-0.5, 1.0).expect("valid range"));
        let norms = row_norms(&teacher);
        let mut draw = |n: usize, prefix: &str| {
            let mut set = TrainingSet::default();
            while set.len() < n {
                let x = gaussian_vec(&mut rng, dim);
                let s = teacher.forward(&x).expect("dimension matches");
                if s.iter().zip(&norms).any(|(v, nrm)| v.abs() < margin * nrm) {
                    continue;
                }
                set.image_ids.push(format!("{prefix}-{:05}", set.len()));
                set.labels.push(s.iter().map(|&v| v > 0.0).collect());
                set.features.push(x);
            }
            set
        };
        let train = draw(n_train, "train");
        let val = draw(n_val, "val");
        Self { teacher, train, val }
    }
}

/// Profiles with non-safe preferences uniform on `[1, 5]` and `safe = 0.5`.
pub fn random_profiles(num_attributes: usize, safe_index: usize, count: usize, seed: u64) -> Vec<PrivacyProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|profile_id| PrivacyProfile {
            profile_id,
            member_count: 0,
            u: random_preferences(&mut rng, num_attributes, safe_index),
        })
        .collect()
}

/// One preference vector: non-safe entries uniform on `[1, 5]`.
pub fn random_preferences<R: Rng + ?Sized>(rng: &mut R, num_attributes: usize, safe_index: usize) -> Vec<f64> {
    (0..num_attributes)
        .map(|a| {
            if a == safe_index {
                PreferenceScale::SAFE_VALUE
            } else {
                rng.random_range(PreferenceScale::MIN..=PreferenceScale::MAX)
            }
        })
        .collect()
}

/// Users drawn around planted centroids.
#[derive(Debug, Clone)]
pub struct PlantedPreferences {
    pub responses: Vec<PreferenceResponse>,
    /// Planted cluster of each user.
    pub truth: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

/// `n_users` users split round-robin over `k` centroids drawn uniformly on
/// `[1, 5]`, each coordinate perturbed by `N(0, sigma²)` and clipped to the
/// scale. Ratings are real-valued unless `integer` is set.
pub fn planted_preferences(
    num_attributes: usize,
    safe_index: usize,
    n_users: usize,
    k: usize,
    sigma: f64,
    integer: bool,
    seed: u64,
) -> PlantedPreferences {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f64>> = (0..k)
        .map(|_| random_preferences(&mut rng, num_attributes, safe_index))
        .collect();
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut responses = Vec::with_capacity(n_users);
    let mut truth = Vec::with_capacity(n_users);
    for i in 0..n_users {
        let c = i % k;
        let prefs = centroids[c]
            .iter()
            .enumerate()
            .map(|(a, &m)| {
                if a == safe_index {
                    return PreferenceScale::SAFE_VALUE;
                }
                let v = (m + noise.sample(&mut rng)).clamp(PreferenceScale::MIN, PreferenceScale::MAX);
                if integer {
                    v.round()
                } else {
                    v
                }
            })
            .collect();
        responses.push(PreferenceResponse {
            user_id: format!("user-{i:04}"),
            prefs,
            demographics: Default::default(),
        });
        truth.push(c);
    }
    PlantedPreferences {
        responses,
        truth,
        centroids,
    }
}

/// Full-taxonomy dataset with teacher-generated labels.
#[derive(Debug, Clone)]
pub struct DemoData {
    pub examples: Vec<AnnotatedExample>,
    pub features: FeatureStore,
    pub teacher: LinearModel,
}

/// Demo images over the full taxonomy. Non-safe attributes come from a
/// linear teacher with prevalences of a few percent; `safe` is set exactly
/// when nothing else is. The first image is always safe-only. Splits are
/// assigned 45/20/35.
pub fn demo_dataset(taxonomy: &AttributeTaxonomy, n_images: usize, dim: usize, seed: u64) -> DemoData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let safe = taxonomy.safe_index();
    let a = taxonomy.len();
    let teacher = random_teacher(&mut rng, a, dim, Uniform::new(0.85, 1.9).expect("valid range"));
    let mut features = FeatureStore::new(dim);
    let mut examples = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let x = gaussian_vec(&mut rng, dim);
        let s = teacher.forward(&x).expect("dimension matches");
        let mut labels: Vec<bool> = s.iter().map(|&v| v > 0.0).collect();
        labels[safe] = false;
        if i == 0 {
            labels.iter_mut().for_each(|l| *l = false);
        }
        if !labels.iter().any(|&l| l) {
            labels[safe] = true;
        }
        let image_id = format!("img-{i:05}");
        let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        features.insert(image_id.clone(), &x32).expect("fresh id and finite values");
        examples.push(AnnotatedExample {
            image_id,
            labels,
            split: None,
        });
    }
    let examples = split_dataset(&examples, (0.45, 0.2, 0.35), seed).expect("fractions sum to one");
    DemoData {
        examples,
        features,
        teacher,
    }
}
