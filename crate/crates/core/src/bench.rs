//! Runtime scaling benchmark for the distance implementations.
//!
//! Times each method on pairs of seeded standard-normal clouds of growing
//! size and fits a log-log slope per method, so the quasi-linear claim for
//! the sequential implementation can be checked against the quadratic one.

use crate::error::Error;
use crate::ot::{self, DiscreteDistribution, Rpw2Impl, SlicedConfig};
use crate::Result;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as RandDistribution, StandardNormal};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Rpw2Seq,
    Rpw2Quad,
    Sw2,
    Pw2,
    W2Oracle,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 5] = [
        Self::Rpw2Seq,
        Self::Rpw2Quad,
        Self::Sw2,
        Self::Pw2,
        Self::W2Oracle,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rpw2-seq" => Ok(Self::Rpw2Seq),
            "rpw2-quad" => Ok(Self::Rpw2Quad),
            "sw2" => Ok(Self::Sw2),
            "pw2" => Ok(Self::Pw2),
            "w2-oracle" => Ok(Self::W2Oracle),
            other => Err(Error::Config(format!("unknown bench method '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rpw2Seq => "rpw2-seq",
            Self::Rpw2Quad => "rpw2-quad",
            Self::Sw2 => "sw2",
            Self::Pw2 => "pw2",
            Self::W2Oracle => "w2-oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    /// Distribution sizes, ascending.
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub repetitions: usize,
    pub methods: Vec<BenchMethod>,
    pub seed: u64,
    /// Skip the quadratic method when its cost matrix would exceed this.
    pub memory_budget_bytes: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            sizes: vec![10, 100, 1_000, 10_000, 100_000, 1_000_000],
            dim: 5,
            repetitions: 3,
            methods: BenchMethod::ALL.to_vec(),
            seed: 0,
            memory_budget_bytes: 8 * 1024 * 1024 * 1024,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("sizes must be non-empty and ascending".into()));
        }
        if self.repetitions < 3 {
            return Err(Error::Config("repetitions must be >= 3".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no bench methods selected".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub n: usize,
    /// None when the method was skipped at this size.
    pub median_seconds: Option<f64>,
    pub distance: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,median_seconds,distance,note\n");
        for r in &self.rows {
            let secs = r.median_seconds.map_or(String::new(), |s| format!("{s}"));
            let dist = r.distance.map_or(String::new(), |d| format!("{d}"));
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method.name(),
                r.n,
                secs,
                dist,
                r.note.as_deref().unwrap_or("")
            ));
        }
        out
    }

    /// Least-squares slope of ln(time) against ln(n) for one method over
    /// sizes in `[n_lo, n_hi]`. None with fewer than two timed points.
    pub fn log_log_slope(&self, method: BenchMethod, n_lo: usize, n_hi: usize) -> Option<f64> {
        let points: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.n >= n_lo && r.n <= n_hi)
            .filter_map(|r| r.median_seconds.map(|s| ((r.n as f64).ln(), s.ln())))
            .collect();
        if points.len() < 2 {
            return None;
        }
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    }

    pub fn median_at(&self, method: BenchMethod, n: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.n == n)
            .and_then(|r| r.median_seconds)
    }
}

/// Two seeded standard-normal clouds of the same size.
pub fn normal_cloud_pair(
    n: usize,
    dim: usize,
    seed: u64,
) -> Result<(DiscreteDistribution<f64>, DiscreteDistribution<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = |rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(rng))
    };
    let a = cloud(&mut rng);
    let b = cloud(&mut rng);
    Ok((
        DiscreteDistribution::uniform(a)?,
        DiscreteDistribution::uniform(b)?,
    ))
}

fn run_method(
    method: BenchMethod,
    mu: &DiscreteDistribution<f64>,
    nu: &DiscreteDistribution<f64>,
    sliced: &SlicedConfig,
) -> Result<f64> {
    match method {
        BenchMethod::Rpw2Seq => ot::rpw2(mu, nu, Rpw2Impl::Sequential),
        BenchMethod::Rpw2Quad => ot::rpw2(mu, nu, Rpw2Impl::Quadratic),
        BenchMethod::Sw2 => ot::sw2(mu, nu, sliced),
        BenchMethod::Pw2 => ot::pw2(mu, nu, sliced),
        BenchMethod::W2Oracle => ot::exact_w2_oracle(mu, nu),
    }
}

fn skip_reason(method: BenchMethod, n: usize, budget: usize) -> Option<String> {
    match method {
        BenchMethod::W2Oracle if n * n > ot::ORACLE_SIZE_CAP => {
            Some(format!("n*n exceeds oracle cap {}", ot::ORACLE_SIZE_CAP))
        }
        BenchMethod::Rpw2Quad if n.saturating_mul(n).saturating_mul(8) > budget => {
            Some(format!("cost matrix would exceed {budget} byte budget"))
        }
        _ => None,
    }
}

/// Time every (method, size) cell: one discarded warm-up run, then the
/// median of `repetitions` timed runs on a monotonic clock.
pub fn bench_scaling(spec: &BenchSpec) -> Result<BenchTable> {
    spec.validate()?;
    let sliced = SlicedConfig {
        rng_seed: spec.seed,
        ..SlicedConfig::default()
    };
    let mut rows = Vec::new();
    for (size_idx, &n) in spec.sizes.iter().enumerate() {
        let (mu, nu) = normal_cloud_pair(n, spec.dim, spec.seed.wrapping_add(size_idx as u64))?;
        for &method in &spec.methods {
            if let Some(note) = skip_reason(method, n, spec.memory_budget_bytes) {
                rows.push(BenchRow {
                    method,
                    n,
                    median_seconds: None,
                    distance: None,
                    note: Some(note),
                });
                continue;
            }
            let distance = run_method(method, &mu, &nu, &sliced)?; // warm-up, discarded
            let mut times = Vec::with_capacity(spec.repetitions);
            for _ in 0..spec.repetitions {
                let start = Instant::now();
                let d = run_method(method, &mu, &nu, &sliced)?;
                times.push(start.elapsed().as_secs_f64());
                debug_assert_eq!(d, distance);
            }
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = times[times.len() / 2];
            rows.push(BenchRow {
                method,
                n,
                median_seconds: Some(median),
                distance: Some(distance),
                note: None,
            });
        }
    }
    Ok(BenchTable { rows })
}
