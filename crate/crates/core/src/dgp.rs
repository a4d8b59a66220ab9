//! Interactive fixed-effects simulator for repeated cross-sections.
//!
//! Outcomes follow
//!
//! ```text
//! Y_i(k,t) = tau W_{k,t} + alpha_k + beta_t + Lambda_k' f_t + eps_i
//! ```
//!
//! with cell sizes that start at `S_k * Base_RC` and drift upward by
//! `S_k * E_{k,t}` each period. Group effects and loadings are uniform with
//! unit variance for controls and shifted by an overlap parameter `w` for
//! treated groups; the scale `S_k` is drawn through a Gaussian copula so that
//! it is rank-correlated with `alpha_k`.
//!
//! All randomness comes from [`StreamKey`] streams. Fixed parameters use
//! replication index 0 of their purpose; noise uses the replication index.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AggregatedPanel, Observation, PanelLayout, RCDataset};
use crate::numeric::{normal_cdf, CompensatedSum};
use crate::rng::{Purpose, StreamKey};
use crate::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Full parameterization of one simulated design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub k_co: usize,
    pub k_tr: usize,
    /// Total number of periods.
    pub t: usize,
    pub t_pre: usize,
    pub tau: f64,
    /// Number of latent factors.
    pub r: usize,
    /// Overlap between treated and control effect distributions; 1 is random assignment.
    pub w: f64,
    /// Correlation between the scale parameter and the group effect.
    pub rho: f64,
    pub base_rc: u32,
    /// Inclusive range of the discrete uniform scale parameter `S_k`.
    pub s_range: [u32; 2],
    /// Standard deviation of the idiosyncratic error (1 in every table; 0 switches noise off).
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k_co: 30,
            k_tr: 1,
            t: 30,
            t_pre: 15,
            tau: 0.3,
            r: 1,
            w: 0.2,
            rho: 0.2,
            base_rc: 100,
            s_range: [1, 10],
            noise_sd: 1.0,
            seed: 42,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.t_pre >= self.t {
            return fail(format!("t_pre={} must be below t={}", self.t_pre, self.t));
        }
        self.layout()?;
        if !(0.0..=1.0).contains(&self.w) {
            return fail(format!("w={} must lie in [0, 1]", self.w));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho={} must lie in [0, 1]", self.rho));
        }
        if self.base_rc < 1 {
            return fail("base_rc must be positive".into());
        }
        let [lo, hi] = self.s_range;
        if lo < 1 || hi < lo {
            return fail(format!("s_range [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
        }
        if !(self.tau.is_finite() && self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return fail("tau and noise_sd must be finite, noise_sd >= 0".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<PanelLayout> {
        PanelLayout::new(self.k_co, self.k_tr, self.t_pre, self.t.saturating_sub(self.t_pre))
    }

    pub fn k(&self) -> usize {
        self.k_co + self.k_tr
    }

    /// Support of the group effects and loadings for a control or treated group.
    pub fn effect_bounds(&self, treated: bool) -> (f64, f64) {
        if treated {
            (SQRT3 - 2.0 * self.w * SQRT3, 3.0 * SQRT3 - 2.0 * self.w * SQRT3)
        } else {
            (-SQRT3, SQRT3)
        }
    }

    /// Reads a JSON object or `key = value` lines. Missing keys keep their defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        if text.trim_start().starts_with('{') {
            return serde_json::from_str(text).map_err(|e| e.to_string());
        }
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| format!("line {}: {e}", i + 1))?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
        }
        match key {
            "k_co" => self.k_co = num(key, value)?,
            "k_tr" => self.k_tr = num(key, value)?,
            "t" => self.t = num(key, value)?,
            "t_pre" => self.t_pre = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "r" => self.r = num(key, value)?,
            "w" => self.w = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "base_rc" => self.base_rc = num(key, value)?,
            "s_lo" => self.s_range[0] = num(key, value)?,
            "s_hi" => self.s_range[1] = num(key, value)?,
            "s_range" => {
                let v = value.trim_matches(|c| c == '[' || c == ']');
                let (lo, hi) = v.split_once(',').ok_or_else(|| format!("s_range: expected lo,hi in {value:?}"))?;
                self.s_range = [num(key, lo.trim())?, num(key, hi.trim())?];
            }
            "noise_sd" => self.noise_sd = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}

/// Fixed group- and time-level parameters of one scenario draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub alpha: Vec<f64>,
    /// `K x r` loadings.
    pub lambda_load: DMatrix<f64>,
    pub scale: Vec<u32>,
    pub beta: Vec<f64>,
    /// `T x r` factors.
    pub factors: DMatrix<f64>,
}

impl GroupParams {
    /// Mean outcome of cell `(k, t)` without the treatment effect or noise.
    pub fn untreated_mean(&self, k: usize, t: usize) -> f64 {
        let interactive: f64 = (0..self.factors.ncols())
            .map(|j| self.lambda_load[(k, j)] * self.factors[(t, j)])
            .sum();
        self.alpha[k] + self.beta[t] + interactive
    }
}

/// Cell sizes `N_{k,t}`, together with the increments `E_{k,t}` behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsMatrix {
    pub counts: DMatrix<u64>,
    pub increments: DMatrix<f64>,
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `alpha_k`, `Lambda_k`, `S_k`, `beta_t` and `f_t`.
///
/// `(Z1, Z2)` is bivariate standard normal with correlation `rho`;
/// `alpha_k` is the `Phi(Z1)` quantile of its uniform law and `S_k` the
/// `Phi(Z2)` quantile of the discrete uniform scale range. Loadings use the
/// same uniform law as `alpha_k` but are independent of it. Each group,
/// factor and period has its own stream, so e.g. the first factor is the
/// same whether one or four factors are drawn.
pub fn draw_group_params(cfg: &ScenarioConfig, key: &StreamKey) -> GroupParams {
    let k_total = cfg.k();
    let [s_lo, s_hi] = cfg.s_range;
    let levels = (s_hi - s_lo + 1) as f64;
    let mut alpha = Vec::with_capacity(k_total);
    let mut scale = Vec::with_capacity(k_total);
    let mut lambda_load = DMatrix::zeros(k_total, cfg.r);
    for k in 0..k_total {
        let (lo, hi) = cfg.effect_bounds(k >= cfg.k_co);
        let mut rng = key.stream(0, k as u64, 0, Purpose::GroupCopula);
        let z1 = standard_normal(&mut rng);
        let z3 = standard_normal(&mut rng);
        let z2 = cfg.rho * z1 + (1.0 - cfg.rho * cfg.rho).sqrt() * z3;
        alpha.push(lo + (hi - lo) * normal_cdf(z1));
        let level = ((normal_cdf(z2) * levels).floor() as u32).min(s_hi - s_lo);
        scale.push(s_lo + level);
        for j in 0..cfg.r {
            let u: f64 = key.stream(0, k as u64, j as u64, Purpose::Loading).random();
            lambda_load[(k, j)] = lo + (hi - lo) * u;
        }
    }
    let beta = (0..cfg.t)
        .map(|t| standard_normal(&mut key.stream(0, 0, t as u64, Purpose::TimeEffect)))
        .collect();
    let factors = DMatrix::from_fn(cfg.t, cfg.r, |t, j| {
        standard_normal(&mut key.stream(0, j as u64, t as u64, Purpose::Factor))
    });
    GroupParams {
        alpha,
        lambda_load,
        scale,
        beta,
        factors,
    }
}

/// Count increments `E_{k,t} ~ Normal(0.02 Base_RC, sd = sqrt(Base_RC) / 2)`.
pub fn draw_increments(cfg: &ScenarioConfig, key: &StreamKey, replication: u64) -> DMatrix<f64> {
    let base = cfg.base_rc as f64;
    let (mean, sd) = (0.02 * base, base.sqrt() / 2.0);
    DMatrix::from_fn(cfg.k(), cfg.t, |k, t| {
        let mut rng = key.stream(replication, k as u64, t as u64, Purpose::Increment);
        mean + sd * standard_normal(&mut rng)
    })
}

/// Applies the count recursion `N_{k,1} = S_k (Base_RC + E_{k,1})`,
/// `N_{k,t} = N_{k,t-1} + S_k E_{k,t}` on the reals, then rounds each cell
/// half away from zero and floors it at 1.
pub fn counts_from_increments(scale: &[u32], increments: &DMatrix<f64>, base_rc: u32) -> CountsMatrix {
    let (k_total, t_total) = increments.shape();
    let mut counts = DMatrix::zeros(k_total, t_total);
    for k in 0..k_total {
        let s = scale[k] as f64;
        let mut level = s * base_rc as f64;
        for t in 0..t_total {
            level += s * increments[(k, t)];
            counts[(k, t)] = level.round().max(1.0) as u64;
        }
    }
    CountsMatrix {
        counts,
        increments: increments.clone(),
    }
}

pub fn simulate_counts(params: &GroupParams, cfg: &ScenarioConfig, key: &StreamKey) -> CountsMatrix {
    simulate_counts_for(params, cfg, key, 0)
}

/// Counts with increments drawn from replication `replication`'s streams.
pub fn simulate_counts_for(params: &GroupParams, cfg: &ScenarioConfig, key: &StreamKey, replication: u64) -> CountsMatrix {
    counts_from_increments(&params.scale, &draw_increments(cfg, key, replication), cfg.base_rc)
}

/// Visits every simulated outcome in dataset order: cells by group then
/// period, `N_{k,t}` draws within a cell.
fn for_each_outcome(
    cfg: &ScenarioConfig,
    params: &GroupParams,
    counts: &CountsMatrix,
    key: &StreamKey,
    replication: u64,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let layout_k_co = cfg.k_co;
    for k in 0..cfg.k() {
        for t in 0..cfg.t {
            let treated = k >= layout_k_co && t >= cfg.t_pre;
            let mean = cfg.tau * f64::from(u8::from(treated)) + params.untreated_mean(k, t);
            let n = counts.counts[(k, t)];
            let mut rng = key.stream(replication, k as u64, t as u64, Purpose::Noise);
            for _ in 0..n {
                let eps = if cfg.noise_sd == 0.0 {
                    0.0
                } else {
                    cfg.noise_sd * standard_normal(&mut rng)
                };
                visit(k, t, mean + eps);
            }
        }
    }
}

/// Individual-level dataset for replication `replication`.
pub fn simulate_dataset(
    cfg: &ScenarioConfig,
    params: &GroupParams,
    counts: &CountsMatrix,
    key: &StreamKey,
    replication: u64,
) -> Result<RCDataset> {
    let layout = cfg.layout()?;
    let mut rows = Vec::with_capacity(counts.counts.iter().sum::<u64>() as usize);
    for_each_outcome(cfg, params, counts, key, replication, |group, time, outcome| {
        rows.push(Observation { group, time, outcome });
    });
    RCDataset::new(layout, rows)
}

/// Cell means of the dataset [`simulate_dataset`] would produce, without
/// materializing rows. Bit-identical to aggregating that dataset.
pub fn simulate_panel(
    cfg: &ScenarioConfig,
    params: &GroupParams,
    counts: &CountsMatrix,
    key: &StreamKey,
    replication: u64,
) -> Result<AggregatedPanel> {
    let layout = cfg.layout()?;
    let k_total = cfg.k();
    let mut sums = vec![CompensatedSum::new(); k_total * cfg.t];
    for_each_outcome(cfg, params, counts, key, replication, |k, t, y| sums[t * k_total + k].add(y));
    let means = DMatrix::from_fn(k_total, cfg.t, |k, t| sums[t * k_total + k].value() / counts.counts[(k, t)] as f64);
    AggregatedPanel::from_parts(layout, means, counts.counts.clone())
}

/// One complete draw from `cfg.seed`: parameters, counts and replication-0 data.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RCDataset> {
    cfg.validate()?;
    let key = StreamKey::new(cfg.seed);
    let params = draw_group_params(cfg, &key);
    let counts = simulate_counts(&params, cfg, &key);
    simulate_dataset(cfg, &params, &counts, &key, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_at_extremes() {
        let mut cfg = ScenarioConfig { w: 1.0, ..Default::default() };
        let (lo, hi) = cfg.effect_bounds(true);
        assert!((lo + SQRT3).abs() < 1e-15 && (hi - SQRT3).abs() < 1e-15);
        cfg.w = 0.0;
        assert_eq!(cfg.effect_bounds(true), (SQRT3, 3.0 * SQRT3));
    }

    #[test]
    fn w_zero_separates_treated_effects() {
        let cfg = ScenarioConfig { w: 0.0, k_co: 200, k_tr: 5, ..Default::default() };
        let p = draw_group_params(&cfg, &StreamKey::new(9));
        let max_control = p.alpha[..200].iter().cloned().fold(f64::MIN, f64::max);
        let min_treated = p.alpha[200..].iter().cloned().fold(f64::MAX, f64::min);
        assert!(min_treated > max_control);
        for k in 0..205 {
            let (lo, hi) = cfg.effect_bounds(k >= 200);
            assert!(p.alpha[k] >= lo && p.alpha[k] <= hi);
            assert!(p.lambda_load[(k, 0)] >= lo && p.lambda_load[(k, 0)] <= hi);
            assert!((1..=10).contains(&p.scale[k]));
        }
    }

    #[test]
    fn zero_increments_give_base_counts() {
        let incr = DMatrix::zeros(3, 4);
        let c = counts_from_increments(&[1, 1, 1], &incr, 100);
        assert!(c.counts.iter().all(|&n| n == 100));
    }

    #[test]
    fn counts_round_and_floor() {
        let incr = DMatrix::from_row_slice(1, 3, &[0.5, -10.0, -200.0]);
        let c = counts_from_increments(&[2], &incr, 3);
        // 2*3 + 2*0.5 = 7, 7 - 20 = -13 -> 1, -13 - 400 -> 1
        assert_eq!(c.counts.as_slice(), &[7, 1, 1]);
        let c = counts_from_increments(&[1], &DMatrix::from_row_slice(1, 1, &[0.5]), 3);
        assert_eq!(c.counts[(0, 0)], 4);
    }

    #[test]
    fn config_parsing() {
        let cfg = ScenarioConfig::parse("k_co = 10\n# comment\ns_range = [1, 4]\nrho=0.5\n").unwrap();
        assert_eq!(cfg.k_co, 10);
        assert_eq!(cfg.s_range, [1, 4]);
        assert_eq!(cfg.rho, 0.5);
        assert_eq!(cfg.t, 30);
        let cfg = ScenarioConfig::parse(r#"{"r": 3, "s_range": [2, 5]}"#).unwrap();
        assert_eq!((cfg.r, cfg.s_range), (3, [2, 5]));
        assert!(ScenarioConfig::parse("bogus = 1").is_err());
        assert!(ScenarioConfig::parse(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation() {
        assert!(ScenarioConfig::default().validate().is_ok());
        assert!(ScenarioConfig { w: 1.5, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { rho: -0.1, ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { s_range: [0, 3], ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { s_range: [4, 3], ..Default::default() }.validate().is_err());
        assert!(ScenarioConfig { t_pre: 30, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn noiseless_treated_gap_is_tau() {
        let cfg = ScenarioConfig {
            k_co: 4,
            t: 6,
            t_pre: 3,
            r: 0,
            noise_sd: 0.0,
            base_rc: 5,
            s_range: [1, 2],
            ..Default::default()
        };
        let key = StreamKey::new(1);
        let params = draw_group_params(&cfg, &key);
        let counts = simulate_counts(&params, &cfg, &key);
        let data = simulate_dataset(&cfg, &params, &counts, &key, 0).unwrap();
        for row in data.rows() {
            let base = params.untreated_mean(row.group, row.time);
            let expected = if data.layout().treatment(row.group, row.time) { base + 0.3 } else { base };
            assert!((row.outcome - expected).abs() < 1e-12);
        }
    }
}
