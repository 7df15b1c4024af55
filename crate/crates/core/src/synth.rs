//! Synthetic panels with planted regimes and lead-lag couplings.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{reconstruct_levels, EntityMeta, Panel};
use crate::rng::{derive_rng, tags, PipelineRng};
use crate::scalar::Scalar;

/// Deterministic part of a regime's growth series (percent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseSpec {
    /// One value per growth period.
    Explicit { series: Vec<f64> },
    /// `mean + amplitude * cos(2 pi frequency t / P + phase)` over `P` periods.
    Harmonic {
        mean: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Flat `level` with a single `magnitude` spike at growth period `period`.
    Spike { level: f64, magnitude: f64, period: usize },
}

impl BaseSpec {
    pub fn series(&self, n_periods: usize) -> Vec<f64> {
        match self {
            BaseSpec::Explicit { series } => series.clone(),
            BaseSpec::Harmonic {
                mean,
                amplitude,
                frequency,
                phase,
            } => (0..n_periods)
                .map(|t| {
                    let arg = 2.0 * std::f64::consts::PI * frequency * t as f64 / n_periods as f64 + phase;
                    mean + amplitude * arg.cos()
                })
                .collect(),
            BaseSpec::Spike {
                level,
                magnitude,
                period,
            } => (0..n_periods)
                .map(|t| if t == *period { level + magnitude } else { *level })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub members: usize,
    pub base: BaseSpec,
    /// Sd of the regime-level shock added to every period.
    #[serde(default)]
    pub regime_noise_sd: f64,
    /// Sd of each member's own deviation from the regime series.
    #[serde(default)]
    pub idiosyncratic_sd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of level years `T`; series have `T - 1` growth periods.
    pub n_years: usize,
    #[serde(default = "default_first_year")]
    pub first_year: i32,
    pub regimes: Vec<RegimeSpec>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    #[serde(default = "default_initial_level")]
    pub initial_level: f64,
    /// Sd of log initial levels across entities (0 = all start at `initial_level`).
    #[serde(default)]
    pub initial_level_log_sd: f64,
    /// Countries are drawn uniformly and independently of regime.
    #[serde(default = "default_n_countries")]
    pub n_countries: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_first_year() -> i32 {
    1993
}

fn default_initial_level() -> f64 {
    100.0
}

fn default_n_countries() -> usize {
    10
}

impl SynthConfig {
    /// `n_regimes` cosine bases of frequencies `1..=n_regimes` with amplitude
    /// 3 around a 2% mean. Pairwise RMS separation of the bases equals the
    /// amplitude, so the idiosyncratic sd is `noise_ratio * 3`.
    pub fn harmonic_regimes(n_regimes: usize, members: usize, n_years: usize, noise_ratio: f64, master_seed: u64) -> Self {
        let amplitude = 3.0;
        Self {
            n_years,
            first_year: default_first_year(),
            regimes: (0..n_regimes)
                .map(|r| RegimeSpec {
                    members,
                    base: BaseSpec::Harmonic {
                        mean: 2.0,
                        amplitude,
                        frequency: (r + 1) as f64,
                        phase: 0.0,
                    },
                    regime_noise_sd: 0.0,
                    idiosyncratic_sd: noise_ratio * amplitude,
                })
                .collect(),
            couplings: Vec::new(),
            initial_level: default_initial_level(),
            initial_level_log_sd: 0.0,
            n_countries: default_n_countries(),
            master_seed,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.n_years.saturating_sub(1)
    }

    pub fn n_entities(&self) -> usize {
        self.regimes.iter().map(|r| r.members).sum()
    }

    /// Validate and return the lag-0 topological order of the regimes.
    pub fn validate(&self) -> Result<Vec<usize>> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_years < 2 {
            return bad(format!("n_years must be at least 2, got {}", self.n_years));
        }
        if self.regimes.is_empty() {
            return bad("at least one regime is required".into());
        }
        if self.n_countries == 0 {
            return bad("n_countries must be at least 1".into());
        }
        if !(self.initial_level > 0.0 && self.initial_level.is_finite()) {
            return bad("initial_level must be positive".into());
        }
        if !(self.initial_level_log_sd >= 0.0 && self.initial_level_log_sd.is_finite()) {
            return bad("initial_level_log_sd must be finite and non-negative".into());
        }
        let p = self.n_periods();
        for (r, spec) in self.regimes.iter().enumerate() {
            if spec.members == 0 {
                return bad(format!("regime {r} has no members"));
            }
            for (name, sd) in [("regime_noise_sd", spec.regime_noise_sd), ("idiosyncratic_sd", spec.idiosyncratic_sd)] {
                if !(sd >= 0.0 && sd.is_finite()) {
                    return bad(format!("regime {r}: {name} must be finite and non-negative"));
                }
            }
            match &spec.base {
                BaseSpec::Explicit { series } if series.len() != p => {
                    return bad(format!("regime {r}: base has {} values, expected {p}", series.len()))
                }
                BaseSpec::Spike { period, .. } if *period >= p => {
                    return bad(format!("regime {r}: spike period {period} outside 0..{p}"))
                }
                _ => {}
            }
            if spec.base.series(p).iter().any(|v| !v.is_finite()) {
                return bad(format!("regime {r}: base trajectory is not finite"));
            }
        }
        let k = self.regimes.len();
        for c in &self.couplings {
            if c.source >= k || c.target >= k {
                return bad(format!("coupling {}->{} references a missing regime", c.source, c.target));
            }
            if !c.coefficient.is_finite() {
                return bad(format!("coupling {}->{} has a non-finite coefficient", c.source, c.target));
            }
            if c.lag >= p {
                return bad(format!("coupling lag {} not shorter than the series", c.lag));
            }
        }
        // Kahn's algorithm on the lag-0 edges, lowest index first
        let mut indeg = vec![0usize; k];
        for c in self.couplings.iter().filter(|c| c.lag == 0) {
            indeg[c.target] += 1;
        }
        let mut order = Vec::with_capacity(k);
        let mut done = vec![false; k];
        while order.len() < k {
            let Some(next) = (0..k).find(|&r| !done[r] && indeg[r] == 0) else {
                return bad("lag-0 couplings form a cycle".into());
            };
            done[next] = true;
            order.push(next);
            for c in self.couplings.iter().filter(|c| c.lag == 0 && c.source == next) {
                indeg[c.target] -= 1;
            }
        }
        Ok(order)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub labels: Vec<usize>,
    /// Regime-level growth series, one row per regime.
    pub regime_series: Vec<Vec<f64>>,
    pub edges: Vec<Coupling>,
    /// Entity growth rates used to build the levels.
    pub entity_growth: Vec<Vec<f64>>,
}

fn normal_draws(rng: &mut PipelineRng, n: usize, sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; n];
    }
    let d = Normal::new(0.0, sd).expect("validated sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Build regime series, member growth and levels.
///
/// Regime `c` at period `t` is `base_c(t) + e_c(t) + sum a * r_s(t - lag)`
/// over couplings `s -> c`; periods before the start read `base_s(0)`.
pub fn generate<F: Scalar>(cfg: &SynthConfig) -> Result<(Panel<F>, SynthTruth)> {
    let order = cfg.validate()?;
    let p = cfg.n_periods();
    let k = cfg.regimes.len();
    let seed = cfg.master_seed;

    let bases: Vec<Vec<f64>> = cfg.regimes.iter().map(|r| r.base.series(p)).collect();
    let mut noise_rng = derive_rng(seed, &[tags::SYNTH, 0]);
    let shocks: Vec<Vec<f64>> = cfg
        .regimes
        .iter()
        .map(|r| normal_draws(&mut noise_rng, p, r.regime_noise_sd))
        .collect();
    let mut series = vec![vec![0.0; p]; k];
    for t in 0..p {
        for &c in &order {
            let mut v = bases[c][t] + shocks[c][t];
            for cp in cfg.couplings.iter().filter(|cp| cp.target == c) {
                let src = if t >= cp.lag {
                    series[cp.source][t - cp.lag]
                } else {
                    bases[cp.source][0]
                };
                v += cp.coefficient * src;
            }
            series[c][t] = v;
        }
    }

    let n = cfg.n_entities();
    let mut labels = Vec::with_capacity(n);
    let mut growth = Vec::with_capacity(n);
    for (c, spec) in cfg.regimes.iter().enumerate() {
        let mut rng = derive_rng(seed, &[tags::SYNTH, 1, c as u64]);
        for _ in 0..spec.members {
            let e = normal_draws(&mut rng, p, spec.idiosyncratic_sd);
            growth.push(series[c].iter().zip(&e).map(|(s, d)| s + d).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    if let Some((i, t)) = growth
        .iter()
        .enumerate()
        .find_map(|(i, g)| g.iter().position(|&v| v <= -100.0).map(|t| (i, t)))
    {
        return Err(Error::InvalidInput(format!(
            "entity {i} draws growth {:.3}% at period {t}; levels would not stay positive",
            growth[i][t]
        )));
    }

    let mut country_rng = derive_rng(seed, &[tags::SYNTH, 2]);
    let mut coord_rng = derive_rng(seed, &[tags::SYNTH, 3]);
    let mut level_rng = derive_rng(seed, &[tags::SYNTH, 4]);
    let initial = normal_draws(&mut level_rng, n, cfg.initial_level_log_sd);
    let width = ((cfg.n_countries - 1) as f64).log10().floor() as usize + 1;
    let mut entities = Vec::with_capacity(n);
    let mut values = Array2::from_elem((n, cfg.n_years), F::zero());
    for i in 0..n {
        let c = labels[i];
        let country = country_rng.random_range(0..cfg.n_countries);
        // regimes sit on a band of the globe; members jitter around the centre
        let lon = -170.0 + 340.0 * (c as f64 + 0.5) / k as f64 + coord_rng.random_range(-2.0..2.0);
        let lat = -45.0 + 90.0 * ((c * 7 % k) as f64 + 0.5) / k as f64 + coord_rng.random_range(-2.0..2.0);
        entities.push(EntityMeta::new(format!("e{i:05}"), format!("C{country:0width$}")).with_location(lon, lat));
        let start = cfg.initial_level * initial[i].exp();
        for (t, v) in reconstruct_levels(start, &growth[i]).into_iter().enumerate() {
            values[[i, t]] = F::lit(v);
        }
    }
    let years = (0..cfg.n_years as i32).map(|t| cfg.first_year + t).collect();
    let present = Array2::from_elem((n, cfg.n_years), true);
    let panel = Panel::new(entities, years, values, present)?;
    Ok((
        panel,
        SynthTruth {
            labels,
            regime_series: series,
            edges: cfg.couplings.clone(),
            entity_growth: growth,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::compute_growth;

    fn two_regimes(sd: f64) -> SynthConfig {
        let mut c = SynthConfig::harmonic_regimes(2, 5, 8, 0.0, 11);
        for r in &mut c.regimes {
            r.idiosyncratic_sd = sd;
        }
        c
    }

    #[test]
    fn growth_round_trips() {
        let cfg = two_regimes(0.5);
        let (panel, truth) = generate::<f64>(&cfg).unwrap();
        let gm = compute_growth(&panel);
        for (i, g) in truth.entity_growth.iter().enumerate() {
            for (t, &v) in g.iter().enumerate() {
                assert!((gm.g[[i, t]] - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
        assert_eq!(truth.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn same_seed_same_panel() {
        let cfg = two_regimes(1.0);
        let (a, _) = generate::<f64>(&cfg).unwrap();
        let (b, _) = generate::<f64>(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        assert_eq!(a.entities(), b.entities());
    }

    #[test]
    fn zero_noise_members_equal_base() {
        let cfg = two_regimes(0.0);
        let (_, truth) = generate::<f64>(&cfg).unwrap();
        let base = cfg.regimes[1].base.series(7);
        assert_eq!(truth.entity_growth[7], base);
    }

    #[test]
    fn coupling_enters_with_lag() {
        let mut cfg = SynthConfig {
            n_years: 6,
            regimes: vec![
                RegimeSpec {
                    members: 1,
                    base: BaseSpec::Explicit {
                        series: vec![1.0, 2.0, 3.0, 4.0, 5.0],
                    },
                    regime_noise_sd: 0.0,
                    idiosyncratic_sd: 0.0,
                },
                RegimeSpec {
                    members: 1,
                    base: BaseSpec::Spike {
                        level: 0.0,
                        magnitude: 0.0,
                        period: 0,
                    },
                    regime_noise_sd: 0.0,
                    idiosyncratic_sd: 0.0,
                },
            ],
            couplings: vec![Coupling {
                source: 0,
                target: 1,
                lag: 2,
                coefficient: 0.5,
            }],
            ..SynthConfig::harmonic_regimes(1, 1, 6, 0.0, 0)
        };
        let (_, truth) = generate::<f64>(&cfg).unwrap();
        assert_eq!(truth.regime_series[1], vec![0.5, 0.5, 0.5, 1.0, 1.5]);
        cfg.couplings.push(Coupling {
            source: 1,
            target: 0,
            lag: 0,
            coefficient: 0.1,
        });
        assert!(generate::<f64>(&cfg).is_ok());
        cfg.couplings.push(Coupling {
            source: 0,
            target: 1,
            lag: 0,
            coefficient: 0.1,
        });
        assert!(generate::<f64>(&cfg).is_err());
    }

    #[test]
    fn collapse_below_minus_hundred_is_rejected() {
        let mut cfg = two_regimes(0.0);
        cfg.regimes[0].base = BaseSpec::Spike {
            level: 1.0,
            magnitude: -150.0,
            period: 2,
        };
        assert!(generate::<f64>(&cfg).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = SynthConfig::harmonic_regimes(3, 4, 10, 0.3, 5);
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SynthConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(cfg, back);
    }
}
