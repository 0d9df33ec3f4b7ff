//! Synthetic households with planted classes, for testing and demos.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{LoadProfile, SLOTS_PER_DAY};

/// A bump in the daily curve: `height` kWh at `hour`, Gaussian with
/// standard deviation `width` hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub hour: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub base: f64,
    pub bumps: Vec<Bump>,
}

impl Shape {
    pub fn new(base: f64, bumps: &[(f64, f64, f64)]) -> Self {
        Shape {
            base,
            bumps: bumps
                .iter()
                .map(|&(hour, width, height)| Bump { hour, width, height })
                .collect(),
        }
    }

    /// Pointwise interpolation `(1 - t) * self + t * other`.
    pub fn blend(&self, other: &Shape, t: f64) -> Shape {
        let scaled = |s: &Shape, w: f64| -> Vec<Bump> {
            s.bumps
                .iter()
                .map(|b| Bump {
                    height: b.height * w,
                    ..*b
                })
                .collect()
        };
        let mut bumps = scaled(self, 1.0 - t);
        bumps.extend(scaled(other, t));
        Shape {
            base: (1.0 - t) * self.base + t * other.base,
            bumps,
        }
    }

    /// Mean kWh in each half-hour slot, sampled at slot midpoints. Bumps
    /// wrap around midnight.
    pub fn curve(&self) -> Vec<f64> {
        (0..SLOTS_PER_DAY)
            .map(|s| {
                let t = (s as f64 + 0.5) / 2.0;
                self.base
                    + self
                        .bumps
                        .iter()
                        .map(|b| {
                            let d = (t - b.hour).abs();
                            let d = d.min(24.0 - d);
                            b.height * (-0.5 * (d / b.width).powi(2)).exp()
                        })
                        .sum::<f64>()
            })
            .collect()
    }
}

/// One planted class. With `split`, the class is a mixture: `split.1` of
/// its members follow the alternative shape instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedClass {
    pub size: usize,
    pub shape: Shape,
    pub split: Option<(Shape, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub classes: Vec<PlantedClass>,
    /// Per-slot Gaussian noise, kWh.
    pub noise: f64,
    /// Per-household level factor drawn uniformly from `1 ± level_spread`.
    pub level_spread: f64,
    /// Level spread used instead for the members of mixed classes.
    pub mixture_spread: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub profiles: Vec<LoadProfile>,
    /// Planted class per profile.
    pub class: Vec<usize>,
    /// Sub-population per profile: 0, or 1 for the alternative shape.
    pub sub: Vec<usize>,
}

impl Fixture {
    pub fn mixed_classes(spec: &FixtureSpec) -> Vec<usize> {
        (0..spec.classes.len()).filter(|&c| spec.classes[c].split.is_some()).collect()
    }
}

/// Draws the households. Ids are `H00000`, `H00001`, ... assigned after a
/// seeded shuffle so class membership is not readable from id order.
pub fn generate(spec: &FixtureSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("noise");
    let mut rows = Vec::new();
    for (c, class) in spec.classes.iter().enumerate() {
        let main = class.shape.curve();
        let alt = class.split.as_ref().map(|(s, m)| (s.curve(), *m));
        for i in 0..class.size {
            let (curve, sub) = match &alt {
                Some((curve, m)) if i < *m => (curve, 1),
                _ => (&main, 0),
            };
            let spread = if alt.is_some() {
                spec.mixture_spread.abs()
            } else {
                spec.level_spread.abs()
            };
            let level = 1.0 + rng.random_range(-spread..=spread);
            let slots: Vec<f64> = curve
                .iter()
                .map(|&v| (v * level + noise.sample(&mut rng)).max(0.0))
                .collect();
            rows.push((slots, c, sub));
        }
    }
    // Fisher-Yates with the fixture rng
    for i in (1..rows.len()).rev() {
        let j = rng.random_range(0..=i);
        rows.swap(i, j);
    }
    let mut fixture = Fixture {
        profiles: Vec::with_capacity(rows.len()),
        class: Vec::with_capacity(rows.len()),
        sub: Vec::with_capacity(rows.len()),
    };
    for (i, (slots, c, sub)) in rows.into_iter().enumerate() {
        fixture.profiles.push(LoadProfile {
            household_id: format!("H{i:05}"),
            slots,
            day_count: 1,
        });
        fixture.class.push(c);
        fixture.sub.push(sub);
    }
    fixture
}

/// Seven household archetypes; classes 4 and 5 are each a mixture of two
/// nearby sub-populations.
pub fn narrative_spec(seed: u64) -> FixtureSpec {
    let class = |size, shape, split| PlantedClass { size, shape, split };
    FixtureSpec {
        classes: vec![
            class(126, Shape::new(0.10, &[(19.0, 1.5, 0.9)]), None),
            class(126, Shape::new(0.12, &[(7.5, 1.0, 0.6), (18.5, 1.5, 0.6)]), None),
            class(126, Shape::new(0.08, &[(12.5, 1.5, 0.8)]), None),
            class(126, Shape::new(0.10, &[(3.0, 2.0, 0.9)]), None),
            class(
                35,
                Shape::new(0.10, &[(22.5, 1.2, 0.8)]),
                Some((Shape::new(0.10, &[(22.5, 1.2, 0.8), (9.0, 1.0, 0.3)]), 17)),
            ),
            class(
                35,
                Shape::new(0.10, &[(15.5, 1.5, 0.8)]),
                Some((Shape::new(0.10, &[(15.5, 1.5, 0.8), (6.0, 1.0, 0.3)]), 17)),
            ),
            class(126, Shape::new(0.30, &[]), None),
        ],
        noise: 0.006,
        level_spread: 0.25,
        mixture_spread: 0.05,
        seed,
    }
}

/// `k` spherical Gaussian clusters of `per_cluster` points in `dim`
/// dimensions, unit within-cluster deviation, centers at pairwise distance
/// `separation` (vertices of a scaled simplex). Rows are interleaved.
pub fn planted_gaussians(
    k: usize,
    dim: usize,
    per_cluster: usize,
    separation: f64,
    seed: u64,
) -> (Array2<f64>, Vec<usize>) {
    assert!(k <= dim, "simplex centers need k <= dim");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("normal");
    let scale = separation / std::f64::consts::SQRT_2;
    let n = k * per_cluster;
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| {
        let c = labels[i];
        let center = if j == c { scale } else { 0.0 };
        center + unit.sample(&mut rng)
    });
    (x, labels)
}
