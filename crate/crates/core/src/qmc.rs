//! Center sets for the shared kernel basis: Sobol and Halton low-discrepancy
//! points, and seeded uniform random points, all in `[0, 1)^d`.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Points, Result};

/// Joe–Kuo direction numbers (`new-joe-kuo-6.21201`), published text format.
const JOE_KUO_TABLE: &str = include_str!("../data/new-joe-kuo-6.21201");

pub const MAX_SOBOL_DIM: usize = 21201;

const BITS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterKind {
    Sobol,
    Halton,
    Random,
}

impl CenterKind {
    pub fn name(self) -> &'static str {
        match self {
            CenterKind::Sobol => "sobol",
            CenterKind::Halton => "halton",
            CenterKind::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CenterSet {
    kind: CenterKind,
    points: Points,
    seed: Option<u64>,
}

impl CenterSet {
    /// Wraps externally supplied points (e.g. a set transmitted by a
    /// coordinator) without validating their range.
    pub fn from_points(kind: CenterKind, points: Points) -> Self {
        Self {
            kind,
            points,
            seed: None,
        }
    }

    pub fn kind(&self) -> CenterKind {
        self.kind
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

pub fn generate_centers(kind: CenterKind, n: usize, d: usize, seed: Option<u64>) -> Result<CenterSet> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "center set needs n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    match (kind, seed) {
        (CenterKind::Random, None) => {
            return Err(Error::InvalidParameter("random centers require a seed".into()))
        }
        (CenterKind::Sobol | CenterKind::Halton, Some(_)) => {
            return Err(Error::InvalidParameter(format!(
                "{} centers are deterministic and take no seed",
                kind.name()
            )))
        }
        _ => {}
    }
    let points = match kind {
        CenterKind::Sobol => sobol_points(n, d)?,
        CenterKind::Halton => halton_points(n, d),
        CenterKind::Random => {
            let mut rng = seed::rng(seed.unwrap_or_default());
            let mut pts = Points::zeros(n, d);
            for i in 0..n {
                for j in 0..d {
                    pts[(i, j)] = rng.random::<f64>();
                }
            }
            pts
        }
    };
    Ok(CenterSet { kind, points, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterPolicy {
    Fixed(usize),
    /// One center per average machine sample: `floor(N / m)`.
    Adaptive,
}

pub fn center_count(policy: CenterPolicy, total_n: usize, m: usize) -> usize {
    match policy {
        CenterPolicy::Fixed(n) => n,
        CenterPolicy::Adaptive => (total_n / m.max(1)).max(1),
    }
}

struct DirectionEntry {
    degree: usize,
    coeffs: u32,
    initial: Vec<u32>,
}

fn direction_table() -> &'static [DirectionEntry] {
    static TABLE: OnceLock<Vec<DirectionEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        JOE_KUO_TABLE
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let nums: Vec<u32> = line
                    .split_whitespace()
                    .map(|t| t.parse().expect("malformed direction-number table"))
                    .collect();
                let degree = nums[1] as usize;
                DirectionEntry {
                    degree,
                    coeffs: nums[2],
                    initial: nums[3..3 + degree].to_vec(),
                }
            })
            .collect()
    })
}

/// Direction integers `v_1..v_32` (already shifted to 32-bit fractions) for
/// dimension `dim` (0-based).
fn directions(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let entry = &direction_table()[dim - 1];
    let s = entry.degree;
    for k in 0..s.min(BITS) {
        v[k] = entry.initial[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut next = v[k - s] ^ (v[k - s] >> s);
        for i in 1..s {
            if (entry.coeffs >> (s - 1 - i)) & 1 == 1 {
                next ^= v[k - i];
            }
        }
        v[k] = next;
    }
    v
}

fn sobol_points(n: usize, d: usize) -> Result<Points> {
    if d > MAX_SOBOL_DIM {
        return Err(Error::UnsupportedDimension {
            requested: d,
            max: MAX_SOBOL_DIM,
        });
    }
    if n as u64 >= 1u64 << BITS {
        return Err(Error::InvalidParameter(format!(
            "at most 2^32 - 1 Sobol points are supported, requested {n}"
        )));
    }
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut pts = Points::zeros(n, d);
    for j in 0..d {
        let v = directions(j);
        let mut x = 0u32;
        // Gray-code order; index 0 (the origin) is skipped.
        for i in 0..n {
            let c = (!(i as u64)).trailing_zeros() as usize;
            x ^= v[c];
            pts[(i, j)] = f64::from(x) * scale;
        }
    }
    Ok(pts)
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| candidate % p != 0)
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv;
    }
    value
}

fn halton_points(n: usize, d: usize) -> Points {
    let primes = first_primes(d);
    Points::from_fn(n, d, |i, j| radical_inverse(i as u64 + 1, primes[j]))
}
