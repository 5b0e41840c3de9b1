//! Seeded synthetic telemetry, test outcomes and chaos faults.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimTime;
use crate::rng::{Seed, StreamRng};

/// Chaos injection is capped at 15% per deployment epoch.
pub const MAX_CHAOS_RATE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TelemetryError {
    #[error("rate_exceeds_cap: chaos rate {0} is above {MAX_CHAOS_RATE}")]
    RateExceedsCap(f64),
    #[error("invalid fault `{id}`: {reason}")]
    InvalidFault { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Baseline,
    Canary,
}

impl Population {
    pub fn as_str(self) -> &'static str {
        match self {
            Population::Baseline => "baseline",
            Population::Canary => "canary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub noisy: bool,
}

/// KPIs for one population over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryWindow {
    pub window_id: String,
    pub population: Population,
    pub start: SimTime,
    pub end: SimTime,
    pub request_count: u64,
    pub error_count: u64,
    /// Percent.
    pub error_rate: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Percent CPU/memory.
    pub saturation: f64,
    pub alerts: Vec<Alert>,
    #[serde(skip)]
    pub latency_samples: Vec<f64>,
}

impl TelemetryWindow {
    pub fn minutes(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.p50_ms > self.p95_ms {
            return Err("p50 above p95".into());
        }
        for (name, v) in [("error_rate", self.error_rate), ("saturation", self.saturation)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} outside [0, 100]"));
            }
        }
        if self.end < self.start {
            return Err("negative interval".into());
        }
        Ok(())
    }
}

/// Nearest-rank percentile of a sorted slice; 0 when empty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Merges contiguous windows of one population.
pub fn merge_windows(ws: &[TelemetryWindow]) -> Option<TelemetryWindow> {
    let first = ws.first()?;
    let last = ws.last()?;
    let mut samples: Vec<f64> = ws.iter().flat_map(|w| w.latency_samples.iter().copied()).collect();
    samples.sort_by(f64::total_cmp);
    let requests: u64 = ws.iter().map(|w| w.request_count).sum();
    let errors: u64 = ws.iter().map(|w| w.error_count).sum();
    let minutes: u64 = ws.iter().map(|w| w.minutes()).sum::<u64>().max(1);
    let saturation = ws.iter().map(|w| w.saturation * w.minutes() as f64).sum::<f64>() / minutes as f64;
    Some(TelemetryWindow {
        window_id: format!("ow-{}-{}", first.window_id.trim_start_matches("tw-"), last.end.minutes()),
        population: first.population,
        start: first.start,
        end: last.end,
        request_count: requests,
        error_count: errors,
        error_rate: if requests == 0 { 0.0 } else { errors as f64 * 100.0 / requests as f64 },
        p50_ms: percentile(&samples, 0.50),
        p95_ms: percentile(&samples, 0.95),
        saturation,
        alerts: ws.iter().flat_map(|w| w.alerts.iter().cloned()).collect(),
        latency_samples: samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceProfile {
    pub requests_per_minute: u64,
    pub error_rate_pct: f64,
    pub latency_median_ms: f64,
    pub latency_sigma: f64,
    pub saturation_pct: f64,
    pub saturation_jitter_pct: f64,
    pub p95_slo_ms: f64,
    /// Latency samples drawn per tick window (at most one per request).
    pub latency_samples_per_tick: usize,
}

impl Default for ServiceProfile {
    fn default() -> Self {
        ServiceProfile {
            requests_per_minute: 5000,
            error_rate_pct: 1.0,
            latency_median_ms: 80.0,
            latency_sigma: 0.25,
            saturation_pct: 45.0,
            saturation_jitter_pct: 3.0,
            p95_slo_ms: 200.0,
            latency_samples_per_tick: 200,
        }
    }
}

/// The combined effect of all faults active on one population at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultEffects {
    pub error_pp: f64,
    pub latency_factor: f64,
    pub saturation_pp: f64,
    pub noisy_alerts: u32,
}

impl Default for FaultEffects {
    fn default() -> Self {
        FaultEffects {
            error_pp: 0.0,
            latency_factor: 1.0,
            saturation_pp: 0.0,
            noisy_alerts: 0,
        }
    }
}

impl FaultEffects {
    pub fn add(&mut self, f: &FaultSpec) {
        match f.kind {
            FaultKind::ErrorSpike => self.error_pp += f.magnitude,
            FaultKind::LatencySpike => self.latency_factor *= f.magnitude,
            FaultKind::ResourceSaturation => {
                self.saturation_pp += f.magnitude;
                self.latency_factor *= 1.3;
            }
            FaultKind::NoisyAlerts => self.noisy_alerts += f.magnitude as u32,
            FaultKind::FlakyBurst | FaultKind::RegressionInCommit => {}
        }
    }

    pub fn is_healthy(&self) -> bool {
        *self == FaultEffects::default()
    }
}

/// Samples one tick-aligned window. `share_pct` is the population's share
/// of total traffic; `scope` namespaces the window id (e.g. `prod`, a run id).
#[allow(clippy::too_many_arguments)]
pub fn gen_window(
    profile: &ServiceProfile,
    scope: &str,
    population: Population,
    start: SimTime,
    minutes: u64,
    share_pct: f64,
    effects: &FaultEffects,
    rng: &mut StreamRng,
) -> TelemetryWindow {
    let share = (share_pct / 100.0).clamp(0.0, 1.0);
    let requests = (profile.requests_per_minute as f64 * share * minutes as f64).round() as u64;
    let p_err = ((profile.error_rate_pct + effects.error_pp) / 100.0).clamp(0.0, 1.0);
    let errors = if requests == 0 {
        0
    } else {
        Binomial::new(requests, p_err).expect("p in [0,1]").sample(rng)
    };
    let n = (profile.latency_samples_per_tick as u64 * minutes).min(requests) as usize;
    let median = profile.latency_median_ms * effects.latency_factor;
    // libm rather than the float intrinsics: the latter round differently
    // across optimization levels, which leaks into ledger hashes.
    let mu = libm::log(median);
    let mut samples: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            libm::exp(mu + profile.latency_sigma * z)
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    let jitter = Normal::new(0.0, profile.saturation_jitter_pct.max(0.0)).expect("valid normal");
    let saturation = (profile.saturation_pct + effects.saturation_pp + jitter.sample(rng)).clamp(0.0, 100.0);
    let error_rate = if requests == 0 { 0.0 } else { errors as f64 * 100.0 / requests as f64 };
    let p95 = percentile(&samples, 0.95);
    let tag = format!("{scope}-{}-{}", population.as_str(), start.minutes());
    let mut alerts = Vec::new();
    if saturation >= 85.0 {
        alerts.push(Alert {
            alert_id: format!("saturation-{tag}"),
            noisy: false,
        });
    }
    if p95 > profile.p95_slo_ms {
        alerts.push(Alert {
            alert_id: format!("latency-{tag}"),
            noisy: false,
        });
    }
    if requests > 0 && error_rate > profile.error_rate_pct + 2.0 {
        alerts.push(Alert {
            alert_id: format!("errors-{tag}"),
            noisy: false,
        });
    }
    for i in 0..effects.noisy_alerts {
        alerts.push(Alert {
            alert_id: format!("noise{i}-{tag}"),
            noisy: true,
        });
    }
    TelemetryWindow {
        window_id: format!("tw-{tag}"),
        population,
        start,
        end: start + minutes,
        request_count: requests,
        error_count: errors,
        error_rate,
        p50_ms: percentile(&samples, 0.50),
        p95_ms: p95,
        saturation,
        alerts,
        latency_samples: samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    LatencySpike,
    ErrorSpike,
    FlakyBurst,
    ResourceSaturation,
    NoisyAlerts,
    RegressionInCommit,
}

impl FaultKind {
    pub const ALL: [FaultKind; 6] = [
        FaultKind::LatencySpike,
        FaultKind::ErrorSpike,
        FaultKind::FlakyBurst,
        FaultKind::ResourceSaturation,
        FaultKind::NoisyAlerts,
        FaultKind::RegressionInCommit,
    ];

    /// Inclusive magnitude range: latency factor, error pp, added failure
    /// probability, saturation pp, alert count, broken test count.
    pub fn magnitude_range(self) -> (f64, f64) {
        match self {
            FaultKind::LatencySpike => (1.2, 4.0),
            FaultKind::ErrorSpike => (0.1, 20.0),
            FaultKind::FlakyBurst => (0.05, 0.9),
            FaultKind::ResourceSaturation => (5.0, 60.0),
            FaultKind::NoisyAlerts => (1.0, 10.0),
            FaultKind::RegressionInCommit => (1.0, 5.0),
        }
    }

    /// Whether the fault degrades service (and so opens an incident).
    pub fn is_service_impacting(self) -> bool {
        matches!(
            self,
            FaultKind::LatencySpike | FaultKind::ErrorSpike | FaultKind::ResourceSaturation
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTarget {
    Baseline,
    Canary,
    Suite,
}

/// What a fault's onset offset is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAnchor {
    /// Start of the epoch's canary: the change misbehaves under canary traffic.
    CanaryStart,
    /// Promotion of the epoch's change: a latent regression that only shows
    /// at full traffic.
    Promotion,
    /// Start of the epoch itself: an infrastructure fault, independent of
    /// any change.
    EpochStart,
    /// The epoch's test run (suite faults; duration counts revisions).
    TestRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault_id: String,
    pub kind: FaultKind,
    pub magnitude: f64,
    pub target: FaultTarget,
    /// Deployment epoch (commit index) the fault belongs to.
    pub epoch: u64,
    pub onset_offset_min: u64,
    /// Minutes for population faults, revisions for suite faults.
    pub duration: u64,
    /// Suite faults: the affected tests.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<String>,
    /// Regression confined to the epoch's feature flag.
    #[serde(default)]
    pub flag_attributable: bool,
}

impl FaultSpec {
    pub fn anchor(&self) -> FaultAnchor {
        match (self.target, self.kind) {
            (FaultTarget::Suite, _) => FaultAnchor::TestRun,
            (FaultTarget::Canary, _) => FaultAnchor::CanaryStart,
            (FaultTarget::Baseline, FaultKind::ErrorSpike) => FaultAnchor::Promotion,
            (FaultTarget::Baseline, _) => FaultAnchor::EpochStart,
        }
    }

    /// Whether a change (rather than infrastructure) carries the fault.
    pub fn is_change_fault(&self) -> bool {
        !matches!(self.anchor(), FaultAnchor::EpochStart)
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        let bad = |reason: &str| {
            Err(TelemetryError::InvalidFault {
                id: self.fault_id.clone(),
                reason: reason.into(),
            })
        };
        let (lo, hi) = self.kind.magnitude_range();
        if !(lo..=hi).contains(&self.magnitude) {
            return bad("magnitude outside the kind's range");
        }
        if self.duration == 0 {
            return bad("duration must be positive");
        }
        let suite_kind = matches!(self.kind, FaultKind::FlakyBurst | FaultKind::RegressionInCommit);
        if suite_kind != (self.target == FaultTarget::Suite) {
            return bad("suite faults target the suite and only the suite");
        }
        if suite_kind && self.tests.is_empty() {
            return bad("suite fault names no tests");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosConfig {
    pub rate: f64,
    /// Relative weights per fault kind.
    pub mixture: BTreeMap<FaultKind, f64>,
    /// Share of error spikes that stay latent until promotion.
    pub latent_fraction: f64,
    /// Share of faults on flagged changes that are confined to the flag.
    pub flag_fraction: f64,
    pub error_spike_pp: (f64, f64),
    pub latency_factor: (f64, f64),
    pub saturation_pp: (f64, f64),
    pub flaky_burst_prob: (f64, f64),
    pub noisy_alert_count: (u32, u32),
    pub canary_onset_max_min: u64,
    pub latent_onset_max_min: u64,
    pub infra_duration_min: (u64, u64),
    pub suite_duration_revisions: (u64, u64),
}

impl Default for ChaosConfig {
    fn default() -> Self {
        let mixture = [
            (FaultKind::ErrorSpike, 0.35),
            (FaultKind::RegressionInCommit, 0.2),
            (FaultKind::FlakyBurst, 0.15),
            (FaultKind::ResourceSaturation, 0.1),
            (FaultKind::LatencySpike, 0.1),
            (FaultKind::NoisyAlerts, 0.1),
        ]
        .into_iter()
        .collect();
        ChaosConfig {
            rate: 0.1,
            mixture,
            latent_fraction: 0.3,
            flag_fraction: 0.5,
            error_spike_pp: (2.5, 5.0),
            latency_factor: (2.0, 3.0),
            saturation_pp: (40.0, 50.0),
            flaky_burst_prob: (0.2, 0.4),
            noisy_alert_count: (3, 5),
            canary_onset_max_min: 20,
            latent_onset_max_min: 60,
            infra_duration_min: (60, 180),
            suite_duration_revisions: (1, 2),
        }
    }
}

/// Draws the fault schedule: each epoch independently receives one fault
/// with probability `cfg.rate`. Sorted by (epoch, onset offset).
pub fn schedule_chaos(
    cfg: &ChaosConfig,
    epochs: u64,
    epoch_minutes: u64,
    horizon_minutes: u64,
    suite: &SuiteProfile,
    seed: Seed,
) -> Result<Vec<FaultSpec>, TelemetryError> {
    if !(0.0..=MAX_CHAOS_RATE).contains(&cfg.rate) {
        return Err(TelemetryError::RateExceedsCap(cfg.rate));
    }
    let weights: Vec<(FaultKind, f64)> = cfg.mixture.iter().map(|(k, w)| (*k, *w)).filter(|(_, w)| *w > 0.0).collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut out = Vec::new();
    if total <= 0.0 || cfg.rate == 0.0 {
        return Ok(out);
    }
    let test_ids = suite.test_ids();
    for epoch in 0..epochs {
        let mut rng = seed.stream("chaos", &[epoch]);
        if !rng.random_bool(cfg.rate) {
            continue;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut kind = weights[weights.len() - 1].0;
        for (k, w) in &weights {
            if pick < *w {
                kind = *k;
                break;
            }
            pick -= w;
        }
        let uniform = |rng: &mut StreamRng, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut spec = FaultSpec {
            fault_id: format!("fault-{epoch:04}"),
            kind,
            magnitude: 0.0,
            target: FaultTarget::Baseline,
            epoch,
            onset_offset_min: 0,
            duration: 1,
            tests: Vec::new(),
            flag_attributable: false,
        };
        match kind {
            FaultKind::ErrorSpike => {
                spec.magnitude = uniform(&mut rng, cfg.error_spike_pp);
                let latent = rng.random_bool(cfg.latent_fraction);
                spec.target = if latent { FaultTarget::Baseline } else { FaultTarget::Canary };
                let max = if latent { cfg.latent_onset_max_min } else { cfg.canary_onset_max_min };
                spec.onset_offset_min = rng.random_range(1..max.max(2));
                spec.duration = horizon_minutes.max(1);
                spec.flag_attributable = rng.random_bool(cfg.flag_fraction);
            }
            FaultKind::LatencySpike | FaultKind::ResourceSaturation | FaultKind::NoisyAlerts => {
                spec.magnitude = match kind {
                    FaultKind::LatencySpike => uniform(&mut rng, cfg.latency_factor),
                    FaultKind::ResourceSaturation => uniform(&mut rng, cfg.saturation_pp),
                    _ => rng.random_range(cfg.noisy_alert_count.0..=cfg.noisy_alert_count.1.max(cfg.noisy_alert_count.0)) as f64,
                };
                spec.onset_offset_min = rng.random_range(0..epoch_minutes.max(1));
                let (lo, hi) = cfg.infra_duration_min;
                spec.duration = rng.random_range(lo.max(1)..=hi.max(lo.max(1)));
            }
            FaultKind::FlakyBurst | FaultKind::RegressionInCommit => {
                spec.target = FaultTarget::Suite;
                let (lo, hi) = cfg.suite_duration_revisions;
                spec.duration = rng.random_range(lo.max(1)..=hi.max(lo.max(1)));
                if kind == FaultKind::FlakyBurst {
                    spec.magnitude = uniform(&mut rng, cfg.flaky_burst_prob);
                    spec.tests = suite.flaky_ids();
                } else {
                    let n = rng.random_range(1..=2usize).min(test_ids.len());
                    spec.magnitude = n as f64;
                    let mut picked: Vec<String> = Vec::new();
                    while picked.len() < n {
                        let t = &test_ids[rng.random_range(0..test_ids.len())];
                        if !picked.contains(t) {
                            picked.push(t.clone());
                        }
                    }
                    picked.sort();
                    spec.tests = picked;
                }
            }
        }
        spec.validate()?;
        out.push(spec);
    }
    out.sort_by_key(|f| (f.epoch, f.onset_offset_min));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteProfile {
    pub suite_id: String,
    pub deterministic_tests: usize,
    pub flaky_tests: usize,
    /// Per-run pass probability of each flaky test.
    pub flaky_pass_prob: f64,
}

impl Default for SuiteProfile {
    fn default() -> Self {
        SuiteProfile {
            suite_id: "frontend".into(),
            deterministic_tests: 40,
            flaky_tests: 4,
            flaky_pass_prob: 0.93,
        }
    }
}

impl SuiteProfile {
    pub fn flaky_ids(&self) -> Vec<String> {
        (0..self.flaky_tests).map(|i| format!("flaky-{i:02}")).collect()
    }

    pub fn test_ids(&self) -> Vec<String> {
        let mut v: Vec<String> = (0..self.deterministic_tests).map(|i| format!("test-{i:03}")).collect();
        v.extend(self.flaky_ids());
        v
    }

    pub fn base_pass_prob(&self, test_id: &str) -> f64 {
        if test_id.starts_with("flaky-") {
            self.flaky_pass_prob
        } else {
            1.0
        }
    }
}

/// A suite fault as seen by a test run: active from `from_revision` for
/// `duration` revisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteFault<'a> {
    pub spec: &'a FaultSpec,
    pub from_revision: u64,
}

impl SuiteFault<'_> {
    fn active_at(&self, revision: u64) -> bool {
        revision >= self.from_revision && revision < self.from_revision + self.spec.duration
    }
}

/// Outcomes (true = pass) for the given tests at `revision`. Regressions
/// fail deterministically; flaky bursts raise the failure probability.
pub fn gen_test_run(
    suite: &SuiteProfile,
    tests: &[String],
    revision: u64,
    faults: &[SuiteFault<'_>],
    rng: &mut StreamRng,
) -> Vec<(String, bool)> {
    tests
        .iter()
        .map(|t| {
            let active = faults.iter().filter(|f| f.active_at(revision) && f.spec.tests.contains(t));
            let mut p_fail = 1.0 - suite.base_pass_prob(t);
            let mut broken = false;
            for f in active {
                match f.spec.kind {
                    FaultKind::RegressionInCommit => broken = true,
                    FaultKind::FlakyBurst => p_fail += f.spec.magnitude,
                    _ => {}
                }
            }
            // draw unconditionally so the stream position does not depend on faults
            let u: f64 = rng.random();
            (t.clone(), !broken && u >= p_fail.min(1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn healthy(start: u64, share: f64, seed: u64) -> TelemetryWindow {
        let mut rng = Seed(seed).stream("t", &[start]);
        gen_window(
            &ServiceProfile::default(),
            "prod",
            Population::Baseline,
            SimTime(start),
            1,
            share,
            &FaultEffects::default(),
            &mut rng,
        )
    }

    #[test]
    fn healthy_error_rate_near_nominal() {
        // mean of 1000 full-traffic windows; sigma of one window is
        // sqrt(p(1-p)/n) with n = 5000
        let n = 1000;
        let mean: f64 = (0..n).map(|i| healthy(i, 100.0, 7).error_rate).sum::<f64>() / n as f64;
        let sigma_one = (0.01f64 * 0.99 / 5000.0).sqrt() * 100.0;
        let sigma_mean = sigma_one / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn error_spike_shifts_canary_only() {
        let p = ServiceProfile::default();
        let spike = FaultSpec {
            fault_id: "f".into(),
            kind: FaultKind::ErrorSpike,
            magnitude: 3.2,
            target: FaultTarget::Canary,
            epoch: 0,
            onset_offset_min: 0,
            duration: 10,
            tests: vec![],
            flag_attributable: false,
        };
        let mut fx = FaultEffects::default();
        fx.add(&spike);
        let mut rng = Seed(1).stream("c", &[]);
        let c = gen_window(&p, "run", Population::Canary, SimTime(0), 30, 100.0, &fx, &mut rng);
        // 150k requests: sigma ~0.05pp
        assert!((c.error_rate - 4.2).abs() < 0.3, "{}", c.error_rate);
        let b = healthy(0, 100.0, 1);
        assert!(b.error_rate < 2.0);
    }

    #[test]
    fn zero_requests_is_valid() {
        let w = healthy(0, 0.0, 3);
        assert_eq!(w.request_count, 0);
        assert_eq!(w.error_rate, 0.0);
        w.check_invariants().unwrap();
    }

    #[test]
    fn p95_matches_lognormal() {
        // exp(ln 80 + 1.645 * 0.25) ~= 120.7
        let mut rng = Seed(5).stream("p", &[]);
        let w = gen_window(
            &ServiceProfile::default(),
            "prod",
            Population::Baseline,
            SimTime(0),
            50,
            100.0,
            &FaultEffects::default(),
            &mut rng,
        );
        assert!((w.p95_ms - 120.7).abs() < 3.0, "{}", w.p95_ms);
        assert!((w.p50_ms - 80.0).abs() < 2.0, "{}", w.p50_ms);
    }

    #[test]
    fn merge_sums_counts() {
        let ws: Vec<_> = (0..3).map(|i| healthy(i, 10.0, 9)).collect();
        let m = merge_windows(&ws).unwrap();
        assert_eq!(m.request_count, ws.iter().map(|w| w.request_count).sum::<u64>());
        assert_eq!(m.start, SimTime(0));
        assert_eq!(m.end, SimTime(3));
        m.check_invariants().unwrap();
    }

    #[test]
    fn chaos_rate_cap() {
        let mut cfg = ChaosConfig { rate: 0.2, ..ChaosConfig::default() };
        let e = schedule_chaos(&cfg, 10, 60, 600, &SuiteProfile::default(), Seed(1)).unwrap_err();
        assert_eq!(e, TelemetryError::RateExceedsCap(0.2));
        cfg.rate = 0.0;
        assert!(schedule_chaos(&cfg, 10, 60, 600, &SuiteProfile::default(), Seed(1)).unwrap().is_empty());
    }

    /// Central 99% interval of Binomial(n, p) by summing the pmf directly.
    fn binomial_interval(n: u64, p: f64, mass: f64) -> (u64, u64) {
        let mut pmf = vec![0.0f64; n as usize + 1];
        // log-space to avoid underflow
        let ln_fact = |k: u64| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
        for k in 0..=n {
            let ln = ln_fact(n) - ln_fact(k) - ln_fact(n - k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln();
            pmf[k as usize] = ln.exp();
        }
        let tail = (1.0 - mass) / 2.0;
        let mut cdf = 0.0;
        let mut lo = 0;
        for (k, q) in pmf.iter().enumerate() {
            cdf += q;
            if cdf > tail {
                lo = k as u64;
                break;
            }
        }
        cdf = 0.0;
        let mut hi = n;
        for (k, q) in pmf.iter().enumerate() {
            cdf += q;
            if cdf >= 1.0 - tail {
                hi = k as u64;
                break;
            }
        }
        (lo, hi)
    }

    #[test]
    fn chaos_count_within_binomial_interval() {
        let (lo, hi) = binomial_interval(1000, 0.15, 0.99);
        // normal approximation: 150 +/- 2.576 * sqrt(127.5)
        assert!((118..=124).contains(&lo) && (176..=182).contains(&hi), "{lo}..{hi}");
        let cfg = ChaosConfig { rate: 0.15, ..ChaosConfig::default() };
        let faults = schedule_chaos(&cfg, 1000, 60, 60_000, &SuiteProfile::default(), Seed(42)).unwrap();
        let n = faults.len() as u64;
        assert!((lo..=hi).contains(&n), "{n} not in [{lo}, {hi}]");
        for f in &faults {
            f.validate().unwrap();
        }
        assert!(faults.windows(2).all(|w| (w[0].epoch, w[0].onset_offset_min) <= (w[1].epoch, w[1].onset_offset_min)));
    }

    #[test]
    fn deterministic_tests_always_pass() {
        let s = SuiteProfile::default();
        let tests = vec!["test-001".to_string()];
        for r in 0..100 {
            let mut rng = Seed(1).stream("tests", &[r]);
            assert!(gen_test_run(&s, &tests, r, &[], &mut rng)[0].1);
        }
    }

    #[test]
    fn regression_fails_at_r_and_r_plus_one() {
        let s = SuiteProfile::default();
        let spec = FaultSpec {
            fault_id: "reg".into(),
            kind: FaultKind::RegressionInCommit,
            magnitude: 1.0,
            target: FaultTarget::Suite,
            epoch: 5,
            onset_offset_min: 0,
            duration: 2,
            tests: vec!["test-007".into()],
            flag_attributable: false,
        };
        let faults = [SuiteFault {
            spec: &spec,
            from_revision: 5,
        }];
        let tests = vec!["test-007".to_string()];
        for (rev, expect) in [(4, true), (5, false), (6, false), (7, true)] {
            for attempt in 0..5 {
                let mut rng = Seed(1).stream("tests", &[rev, attempt]);
                assert_eq!(gen_test_run(&s, &tests, rev, &faults, &mut rng)[0].1, expect, "rev {rev}");
            }
        }
    }
}
