//! Rényi-DP accounting for the three noisy mechanisms (Gaussian release,
//! subsampled DP-SGD, DP-EM), composition, conversion to (ε, δ)-DP, noise
//! calibration, and the shared clipping/noise primitives.
//!
//! Curves are tabulated on a grid of integer orders. The moment bounds for
//! DP-SGD and DP-EM are stated for the moments-accountant order `α_ma`; a
//! moment bound at `α_ma` yields an RDP guarantee at order `α_ma + 1`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::norm2;
use crate::rng::Rng;

/// Bounds of the noise-scale search used by [`calibrate`].
pub const SIGMA_SEARCH_MIN: f64 = 1e-2;
pub const SIGMA_SEARCH_MAX: f64 = 1e4;

/// Default Rényi orders: the integers 2..=128.
pub fn default_orders() -> Vec<f64> {
    (2..=128).map(f64::from).collect()
}

/// A privacy-loss curve `α ↦ ε(α)` over a fixed order grid.
///
/// Values are nonnegative and either finite or `+∞`; `+∞` marks an order at
/// which the bound overflowed and carries no guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    orders: Vec<f64>,
    #[serde(with = "inf_as_string")]
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if orders.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if orders.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: orders.len(),
                actual: values.len(),
            });
        }
        validate_orders(&orders)?;
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v < 0.0) {
            return domain(format!("curve value {v} is not a nonnegative number"));
        }
        Ok(RdpCurve { orders, values })
    }

    pub fn zeros(orders: &[f64]) -> Result<Self> {
        RdpCurve::new(orders.to_vec(), vec![0.0; orders.len()])
    }

    pub fn from_fn(orders: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let values = orders.iter().map(|&a| f(a)).collect::<Result<Vec<_>>>()?;
        RdpCurve::new(orders.to_vec(), values)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The curve value at `order`, if the order is on the grid.
    pub fn at(&self, order: f64) -> Option<f64> {
        self.orders
            .iter()
            .position(|&a| a == order)
            .map(|i| self.values[i])
    }

    /// `k` independent repetitions of the mechanism.
    pub fn scaled(&self, k: f64) -> RdpCurve {
        let values = if k == 0.0 {
            vec![0.0; self.values.len()]
        } else {
            self.values.iter().map(|v| v * k).collect()
        };
        RdpCurve {
            orders: self.orders.clone(),
            values,
        }
    }
}

fn validate_orders(orders: &[f64]) -> Result<()> {
    if let Some(a) = orders.iter().find(|a| !(**a > 1.0) || !a.is_finite()) {
        return domain(format!("Rényi order {a} must be a finite real > 1"));
    }
    if orders.windows(2).any(|w| w[0] >= w[1]) {
        return domain("Rényi orders must be strictly increasing");
    }
    Ok(())
}

/// One noisy mechanism and its repetition count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mechanism {
    /// `releases` Gaussian-mechanism releases of sensitivity-1 statistics.
    GaussianRelease { sigma: f64, releases: u64 },
    /// Poisson-subsampled Gaussian gradient steps.
    SubsampledSgd {
        noise_multiplier: f64,
        sampling_rate: f64,
        steps: u64,
    },
    /// Noisy EM iterations over a `components`-component mixture.
    DpEm {
        sigma: f64,
        components: usize,
        iterations: u64,
    },
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::GaussianRelease { .. } => "gaussian_release",
            Mechanism::SubsampledSgd { .. } => "subsampled_sgd",
            Mechanism::DpEm { .. } => "dp_em",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Mechanism::GaussianRelease { sigma, releases } => {
                check_sigma(sigma)?;
                if releases == 0 {
                    return domain("gaussian_release needs at least one release");
                }
            }
            Mechanism::SubsampledSgd {
                noise_multiplier,
                sampling_rate,
                steps,
            } => {
                check_sigma(noise_multiplier)?;
                if !(sampling_rate > 0.0 && sampling_rate < 1.0) {
                    return domain(format!("sampling rate {sampling_rate} outside (0, 1)"));
                }
                if steps == 0 {
                    return domain("subsampled_sgd needs at least one step");
                }
            }
            Mechanism::DpEm {
                sigma,
                components,
                iterations,
            } => {
                check_sigma(sigma)?;
                if components == 0 || iterations == 0 {
                    return domain("dp_em needs K >= 1 and T_e >= 1");
                }
            }
        }
        Ok(())
    }

    /// The composed RDP curve of all repetitions of this mechanism.
    pub fn curve(&self, orders: &[f64]) -> Result<RdpCurve> {
        self.validate()?;
        match *self {
            Mechanism::GaussianRelease { sigma, releases } => {
                RdpCurve::from_fn(orders, |a| gaussian_rdp(sigma, a)).map(|c| c.scaled(releases as f64))
            }
            Mechanism::SubsampledSgd {
                noise_multiplier,
                sampling_rate,
                steps,
            } => {
                let step = RdpCurve::from_fn(orders, |a| {
                    let ma_order = integer_ma_order(a)?;
                    let moment = dpsgd_moment(ma_order, sampling_rate, noise_multiplier)?;
                    Ok(ma_to_rdp(f64::from(ma_order), moment)?.1)
                })?;
                Ok(step.scaled(steps as f64))
            }
            Mechanism::DpEm {
                sigma,
                components,
                iterations,
            } => {
                let step = RdpCurve::from_fn(orders, |a| {
                    let moment = dpem_moment(a - 1.0, components, sigma)?;
                    Ok(ma_to_rdp(a - 1.0, moment)?.1)
                })?;
                Ok(step.scaled(iterations as f64))
            }
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && !sigma.is_nan() {
        Ok(())
    } else {
        domain(format!("noise scale {sigma} must be > 0"))
    }
}

fn integer_ma_order(order: f64) -> Result<u32> {
    let ma = order - 1.0;
    if ma.fract() != 0.0 || ma < 1.0 || ma > f64::from(u32::MAX) {
        return domain(format!(
            "the DP-SGD moment bound needs integer Rényi orders, got {order}"
        ));
    }
    Ok(ma as u32)
}

/// RDP of one Gaussian release of a sensitivity-1 statistic: `α / (2σ²)`.
pub fn gaussian_rdp(sigma: f64, alpha: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(alpha > 1.0) {
        return domain(format!("Rényi order {alpha} must be > 1"));
    }
    Ok(alpha / (2.0 * sigma * sigma))
}

/// Per-iteration moment bound of DP-EM: `(2K+1)(α² + α) / (2σ_e²)`.
pub fn dpem_moment(ma_order: f64, components: usize, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if components == 0 {
        return domain("DP-EM needs K >= 1 components");
    }
    if !(ma_order >= 1.0) {
        return domain(format!("moment order {ma_order} must be >= 1"));
    }
    let k = components as f64;
    Ok((2.0 * k + 1.0) * (ma_order * ma_order + ma_order) / (2.0 * sigma * sigma))
}

/// `ln((n)!!)`, with `ln(0!!) = ln(1!!) = 0`.
fn ln_double_factorial(n: u32) -> f64 {
    let mut acc = 0.0;
    let mut k = n;
    while k > 1 {
        acc += f64::from(k).ln();
        k -= 2;
    }
    acc
}

fn ln_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-step moment bound of subsampled DP-SGD with sampling probability
/// `s` and noise multiplier `σ_s`, at integer moment order `α`:
///
/// ```text
/// s²α(α−1) / ((1−s)σ²)
///   + Σ_{t=3}^{α+1} [ (2s)^t (t−1)!! / (2(1−s)^{t−1} σ^t)
///                    + s^t / ((1−s)^t σ^{2t})
///                    + (2s)^t e^{(t²−t)/(2σ²)} (σ^t (t−1)!! + t^t) / (2(1−s)^{t−1} σ^{2t}) ]
/// ```
///
/// Terms are evaluated in log space. Returns `+∞` once any term leaves the
/// representable range.
pub fn dpsgd_moment(ma_order: u32, sampling_rate: f64, noise_multiplier: f64) -> Result<f64> {
    check_sigma(noise_multiplier)?;
    if ma_order < 1 {
        return domain("moment order must be >= 1");
    }
    if !(0.0..1.0).contains(&sampling_rate) {
        return domain(format!("sampling rate {sampling_rate} outside [0, 1)"));
    }
    let s = sampling_rate;
    let sigma = noise_multiplier;
    let a = f64::from(ma_order);
    let mut total = s * s * a * (a - 1.0) / ((1.0 - s) * sigma * sigma);
    if s == 0.0 {
        return Ok(total);
    }
    let ln_2s = (2.0 * s).ln();
    let ln_s = s.ln();
    let ln_1ms = (1.0 - s).ln();
    let ln_sigma = sigma.ln();
    let ln2 = std::f64::consts::LN_2;
    for t in 3..=ma_order + 1 {
        let tf = f64::from(t);
        let ln_df = ln_double_factorial(t - 1);
        let first = tf * ln_2s + ln_df - ln2 - (tf - 1.0) * ln_1ms - tf * ln_sigma;
        let second = tf * ln_s - tf * ln_1ms - 2.0 * tf * ln_sigma;
        let inner = ln_add_exp(tf * ln_sigma + ln_df, tf * tf.ln());
        let third = tf * ln_2s + (tf * tf - tf) / (2.0 * sigma * sigma) + inner
            - ln2
            - (tf - 1.0) * ln_1ms
            - 2.0 * tf * ln_sigma;
        total += first.exp() + second.exp() + third.exp();
        if !total.is_finite() {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}

/// Moment bound at order `α_ma` to an RDP point `(α_ma + 1, value / α_ma)`.
pub fn ma_to_rdp(ma_order: f64, ma_value: f64) -> Result<(f64, f64)> {
    if !(ma_order >= 1.0) {
        return domain(format!("moment order {ma_order} must be >= 1"));
    }
    if !(ma_value >= 0.0) {
        return domain(format!("moment value {ma_value} must be >= 0"));
    }
    Ok((ma_order + 1.0, ma_value / ma_order))
}

/// Pointwise sum of curves over an identical grid.
pub fn compose(curves: &[RdpCurve]) -> Result<RdpCurve> {
    let first = curves.first().ok_or(Error::EmptyGrid)?;
    let mut values = vec![0.0; first.orders.len()];
    for c in curves {
        if c.orders != first.orders {
            return Err(Error::GridMismatch);
        }
        for (acc, v) in values.iter_mut().zip(&c.values) {
            *acc += v;
        }
    }
    Ok(RdpCurve {
        orders: first.orders.clone(),
        values,
    })
}

/// Best (ε, δ)-DP guarantee on the grid: `min_α ε(α) + ln(1/δ)/(α−1)`.
///
/// Returns the ε and the minimizing order; ties resolve to the smaller
/// order. A curve that is `+∞` everywhere yields `ε = +∞` at the first order.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta {delta} outside (0, 1)"));
    }
    if curve.orders.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let log_inv_delta = (1.0 / delta).ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&a, &v) in curve.orders.iter().zip(&curve.values) {
        let eps = v + log_inv_delta / (a - 1.0);
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok(best)
}

/// Privacy target and how it is split between the phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    /// Total ε; `+∞` requests the non-private limit.
    #[serde(with = "inf_scalar")]
    pub epsilon_target: f64,
    pub delta: f64,
    /// Share of ε spent by the encoding phase (PCA + EM).
    pub encoder_fraction: f64,
    /// Share of ε spent by PCA alone; part of `encoder_fraction`.
    pub pca_fraction: f64,
    pub orders: Vec<f64>,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        PrivacySpec {
            epsilon_target: 1.0,
            delta: 1e-5,
            encoder_fraction: 0.3,
            pca_fraction: 0.1,
            orders: default_orders(),
        }
    }
}

impl PrivacySpec {
    pub fn new(epsilon_target: f64, delta: f64) -> Self {
        PrivacySpec {
            epsilon_target,
            delta,
            ..PrivacySpec::default()
        }
    }

    pub fn decoder_fraction(&self) -> f64 {
        1.0 - self.encoder_fraction
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_target > 0.0) {
            return domain(format!("epsilon {} must be > 0", self.epsilon_target));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return domain(format!("delta {} outside (0, 1)", self.delta));
        }
        if !(self.encoder_fraction > 0.0 && self.encoder_fraction < 1.0) {
            return domain(format!(
                "encoder fraction {} outside (0, 1)",
                self.encoder_fraction
            ));
        }
        if !(self.pca_fraction > 0.0 && self.pca_fraction < self.encoder_fraction) {
            return domain(format!(
                "PCA fraction {} must lie in (0, encoder fraction {})",
                self.pca_fraction, self.encoder_fraction
            ));
        }
        if self.orders.is_empty() {
            return Err(Error::EmptyGrid);
        }
        validate_orders(&self.orders)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismBudget {
    pub mechanism: Mechanism,
    pub curve: RdpCurve,
    /// This mechanism's curve value at the report's optimal order.
    #[serde(with = "inf_scalar")]
    pub epsilon_at_optimal_order: f64,
    /// The mechanism converted to (ε, δ)-DP on its own.
    #[serde(with = "inf_scalar")]
    pub standalone_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub parts: Vec<MechanismBudget>,
    pub total: RdpCurve,
    pub delta: f64,
    #[serde(with = "inf_scalar")]
    pub epsilon: f64,
    pub optimal_order: f64,
}

impl BudgetReport {
    /// Human-readable summary, one line per mechanism.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.parts {
            out.push_str(&format!(
                "{:<18} {:?}\n  rdp at alpha*: {:.6}  standalone eps: {:.6}\n",
                p.mechanism.label(),
                p.mechanism,
                p.epsilon_at_optimal_order,
                p.standalone_epsilon
            ));
        }
        out.push_str(&format!(
            "total eps = {:.6} at delta = {:e} (alpha* = {})\n",
            self.epsilon, self.delta, self.optimal_order
        ));
        out
    }
}

/// Composes every mechanism's curve and converts the total at `delta`.
pub fn total_privacy(mechanisms: &[Mechanism], delta: f64, orders: &[f64]) -> Result<BudgetReport> {
    if mechanisms.is_empty() {
        return domain("no mechanisms to account");
    }
    let curves = mechanisms
        .iter()
        .map(|m| m.curve(orders))
        .collect::<Result<Vec<_>>>()?;
    let total = compose(&curves)?;
    let (epsilon, optimal_order) = rdp_to_dp(&total, delta)?;
    let parts = mechanisms
        .iter()
        .zip(curves)
        .map(|(m, curve)| {
            let standalone_epsilon = rdp_to_dp(&curve, delta)?.0;
            Ok(MechanismBudget {
                mechanism: *m,
                epsilon_at_optimal_order: curve.at(optimal_order).unwrap_or(f64::INFINITY),
                standalone_epsilon,
                curve,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BudgetReport {
        parts,
        total,
        delta,
        epsilon,
        optimal_order,
    })
}

/// The fixed structure of a training run whose noise scales are unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismPlan {
    /// Gaussian releases made by PCA (noisy mean + noisy second moment).
    pub pca_releases: u64,
    pub em_components: usize,
    pub em_iterations: u64,
    pub sgd_sampling_rate: f64,
    pub sgd_steps: u64,
    /// A fixed DP-SGD noise multiplier; `None` searches for one.
    pub sgd_noise: Option<f64>,
}

impl MechanismPlan {
    pub fn mechanisms(&self, pca_sigma: f64, em_sigma: f64, sgd_sigma: f64) -> Vec<Mechanism> {
        let mut out = vec![
            Mechanism::GaussianRelease {
                sigma: pca_sigma,
                releases: self.pca_releases,
            },
            Mechanism::DpEm {
                sigma: em_sigma,
                components: self.em_components,
                iterations: self.em_iterations,
            },
        ];
        if self.sgd_steps > 0 {
            out.push(Mechanism::SubsampledSgd {
                noise_multiplier: sgd_sigma,
                sampling_rate: self.sgd_sampling_rate,
                steps: self.sgd_steps,
            });
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub pca_sigma: f64,
    pub em_sigma: f64,
    pub sgd_sigma: f64,
    pub report: BudgetReport,
}

/// Smallest σ in the search range whose ε is within `target`.
fn search_sigma(target: f64, eps_of: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    if target == f64::INFINITY || eps_of(SIGMA_SEARCH_MIN)? <= target {
        return Ok(SIGMA_SEARCH_MIN);
    }
    let at_max = eps_of(SIGMA_SEARCH_MAX)?;
    if at_max > target {
        return Err(Error::InfeasibleBudget(format!(
            "epsilon {at_max:.4} at the largest noise scale {SIGMA_SEARCH_MAX} exceeds {target:.4}"
        )));
    }
    let (mut lo, mut hi) = (SIGMA_SEARCH_MIN.ln(), SIGMA_SEARCH_MAX.ln());
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eps_of(mid.exp())? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi.exp())
}

/// Noise scales for PCA and EM: σ_p spends the PCA share of ε, then σ_e
/// is the smallest scale keeping PCA + EM within the encoder share.
pub fn calibrate_encoder(privacy: &PrivacySpec, plan: &MechanismPlan) -> Result<(f64, f64)> {
    privacy.validate()?;
    let orders = &privacy.orders;
    let eps = privacy.epsilon_target;
    let pca_sigma = search_sigma(eps * privacy.pca_fraction, |s| {
        let curve = Mechanism::GaussianRelease {
            sigma: s,
            releases: plan.pca_releases,
        }
        .curve(orders)?;
        Ok(rdp_to_dp(&curve, privacy.delta)?.0)
    })?;
    let pca_curve = Mechanism::GaussianRelease {
        sigma: pca_sigma,
        releases: plan.pca_releases,
    }
    .curve(orders)?;
    let em_sigma = search_sigma(eps * privacy.encoder_fraction, |s| {
        let em = Mechanism::DpEm {
            sigma: s,
            components: plan.em_components,
            iterations: plan.em_iterations,
        }
        .curve(orders)?;
        Ok(rdp_to_dp(&compose(&[pca_curve.clone(), em])?, privacy.delta)?.0)
    })?;
    Ok((pca_sigma, em_sigma))
}

/// Chooses σ_p, σ_e and σ_s so the run spends at most `epsilon_target`.
///
/// The returned report certifies the bound; a fixed `sgd_noise` that
/// overshoots the target is an infeasible-budget error.
pub fn calibrate(privacy: &PrivacySpec, plan: &MechanismPlan) -> Result<Calibration> {
    let (pca_sigma, em_sigma) = calibrate_encoder(privacy, plan)?;
    let orders = &privacy.orders;
    let eps_total = |sgd_sigma: f64| -> Result<f64> {
        let r = total_privacy(&plan.mechanisms(pca_sigma, em_sigma, sgd_sigma), privacy.delta, orders)?;
        Ok(r.epsilon)
    };
    let sgd_sigma = match plan.sgd_noise {
        Some(s) => s,
        None if plan.sgd_steps == 0 => SIGMA_SEARCH_MIN,
        None => search_sigma(privacy.epsilon_target, eps_total)?,
    };
    let report = total_privacy(
        &plan.mechanisms(pca_sigma, em_sigma, sgd_sigma),
        privacy.delta,
        orders,
    )?;
    if report.epsilon > privacy.epsilon_target {
        return Err(Error::InfeasibleBudget(format!(
            "realized epsilon {:.4} exceeds target {:.4}",
            report.epsilon, privacy.epsilon_target
        )));
    }
    Ok(Calibration {
        pca_sigma,
        em_sigma,
        sgd_sigma,
        report,
    })
}

/// Rescales `v` to L2 norm at most `bound`; returns the original norm.
pub fn clip_l2_in_place(v: &mut [f64], bound: f64) -> f64 {
    let norm = norm2(v);
    if norm > bound {
        let factor = bound / norm;
        for x in v.iter_mut() {
            *x *= factor;
        }
    }
    norm
}

pub fn clip_l2(v: &[f64], bound: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    clip_l2_in_place(&mut out, bound);
    out
}

/// `len` i.i.d. `N(0, σ²)` draws; `σ = 0` returns zeros without drawing.
pub fn gaussian_noise(len: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    (0..len)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Adds i.i.d. `N(0, σ²)` noise to `v` in place.
pub fn add_gaussian_noise(v: &mut [f64], sigma: f64, rng: &mut Rng) {
    if sigma == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x += sigma * rng.sample::<f64, _>(StandardNormal);
    }
}

/// JSON has no infinity; curves store it as the string `"inf"`.
mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Num(f64),
        Tag(String),
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        values
            .iter()
            .map(|&v| {
                if v.is_infinite() {
                    Value::Tag("inf".into())
                } else {
                    Value::Num(v)
                }
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Num(x) => Ok(x),
                Value::Tag(t) if t == "inf" => Ok(f64::INFINITY),
                Value::Tag(t) => Err(serde::de::Error::custom(format!("bad curve value {t}"))),
            })
            .collect()
    }
}

pub(crate) mod inf_scalar {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Value {
            Num(f64),
            Tag(String),
        }
        match Value::deserialize(d)? {
            Value::Num(x) => Ok(x),
            Value::Tag(t) if t == "inf" => Ok(f64::INFINITY),
            Value::Tag(t) => Err(serde::de::Error::custom(format!("bad value {t}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn gaussian_rdp_values() {
        assert_eq!(gaussian_rdp(1.0, 2.0).unwrap(), 1.0);
        assert!((gaussian_rdp(10.0, 2.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((gaussian_rdp(5.0, 25.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(gaussian_rdp(1e12, 2.0).unwrap() < 1e-20);
        assert!(gaussian_rdp(0.0, 2.0).is_err());
        assert!(gaussian_rdp(1.0, 1.0).is_err());
    }

    #[test]
    fn dpem_moment_values() {
        assert_eq!(dpem_moment(1.0, 3, 2.0).unwrap(), 1.75);
        assert_eq!(dpem_moment(2.0, 3, 1.0).unwrap(), 21.0);
        assert!(dpem_moment(1.0, 0, 2.0).is_err());
        assert!(dpem_moment(1.0, 3, -1.0).is_err());
    }

    #[test]
    fn dpsgd_moment_edges() {
        assert_eq!(dpsgd_moment(2, 0.0, 1.4).unwrap(), 0.0);
        assert!(rel(dpsgd_moment(2, 0.01, 1.4).unwrap(), 1.875_561_462_771_075_9e-4) < 1e-10);
        assert!(dpsgd_moment(2, 1.0, 1.4).is_err());
        assert!(dpsgd_moment(0, 0.1, 1.4).is_err());
        assert_eq!(dpsgd_moment(127, 0.5, 0.05).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ma_to_rdp_values() {
        assert_eq!(ma_to_rdp(1.0, 1.75).unwrap(), (2.0, 1.75));
        assert_eq!(ma_to_rdp(2.0, 4.0).unwrap(), (3.0, 2.0));
        let em = dpem_moment(1.0, 3, 2.0).unwrap();
        let (order, eps) = ma_to_rdp(1.0, em).unwrap();
        // ε_re(2) = (2K+1)·α/(2σ²) at α = 2, K = 3, σ = 2.
        assert_eq!(order, 2.0);
        assert_eq!(eps, 7.0 * 2.0 / 8.0);
    }

    #[test]
    fn compose_sums_and_checks_grids() {
        let orders = default_orders();
        let a = RdpCurve::new(orders.clone(), vec![0.3; orders.len()]).unwrap();
        let b = RdpCurve::new(orders.clone(), vec![0.5; orders.len()]).unwrap();
        let c = compose(&[a.clone(), b]).unwrap();
        assert!(c.values().iter().all(|v| (v - 0.8).abs() < 1e-15));
        assert_eq!(compose(&[a.clone()]).unwrap(), a);
        let five = compose(&vec![a.clone(); 5]).unwrap();
        assert_eq!(five.values(), a.scaled(5.0).values());
        let other = RdpCurve::new(vec![2.0, 3.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(compose(&[a, other]), Err(Error::GridMismatch)));
        assert!(compose(&[]).is_err());
    }

    #[test]
    fn rdp_to_dp_values() {
        let orders = default_orders();
        let zero = RdpCurve::zeros(&orders).unwrap();
        let (eps, a) = rdp_to_dp(&zero, 1e-5).unwrap();
        assert!((eps - (1e5f64).ln() / 127.0).abs() < 1e-12);
        assert_eq!(a, 128.0);
        let flat = RdpCurve::new(orders.clone(), orders.iter().map(|a| 1.0 / a).collect()).unwrap();
        let (eps, _) = rdp_to_dp(&flat, 1.0 - 1e-15).unwrap();
        assert!((eps - 1.0 / 128.0).abs() < 1e-9);
        assert!(rdp_to_dp(&zero, 0.0).is_err());
        assert!(rdp_to_dp(&zero, 1.0).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(RdpCurve::new(vec![], vec![]).is_err());
        assert!(RdpCurve::new(vec![1.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(RdpCurve::new(vec![3.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(RdpCurve::new(vec![2.0], vec![-1.0]).is_err());
        assert!(RdpCurve::new(vec![2.0], vec![f64::INFINITY]).is_ok());
        let inf = RdpCurve::new(vec![2.0], vec![f64::INFINITY]).unwrap();
        assert_eq!(inf.scaled(0.0).values(), &[0.0]);
    }

    #[test]
    fn curve_json_round_trip_keeps_infinity() {
        let c = RdpCurve::new(vec![2.0, 3.0], vec![0.5, f64::INFINITY]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: RdpCurve = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn total_privacy_single_gaussian() {
        let r = total_privacy(
            &[Mechanism::GaussianRelease {
                sigma: 5.0,
                releases: 1,
            }],
            1e-5,
            &default_orders(),
        )
        .unwrap();
        assert!(rel(r.epsilon, 0.979_705_227_707_092_8) < 1e-10);
        assert_eq!(r.optimal_order, 25.0);
        assert!(total_privacy(&[], 1e-5, &default_orders()).is_err());
    }

    #[test]
    fn sgd_curve_requires_integer_orders() {
        let m = Mechanism::SubsampledSgd {
            noise_multiplier: 1.0,
            sampling_rate: 0.01,
            steps: 1,
        };
        assert!(m.curve(&[2.5]).is_err());
        assert!(m.curve(&[2.0, 3.0]).is_ok());
    }

    #[test]
    fn calibrate_unbounded_target_hits_floor() {
        let plan = MechanismPlan {
            pca_releases: 2,
            em_components: 3,
            em_iterations: 20,
            sgd_sampling_rate: 0.01,
            sgd_steps: 100,
            sgd_noise: None,
        };
        let c = calibrate(&PrivacySpec::new(f64::INFINITY, 1e-5), &plan).unwrap();
        assert_eq!(c.pca_sigma, SIGMA_SEARCH_MIN);
        assert_eq!(c.em_sigma, SIGMA_SEARCH_MIN);
        assert_eq!(c.sgd_sigma, SIGMA_SEARCH_MIN);
    }

    #[test]
    fn calibrate_infeasible() {
        let plan = MechanismPlan {
            pca_releases: 2,
            em_components: 3,
            em_iterations: 20,
            sgd_sampling_rate: 0.01,
            sgd_steps: 100,
            sgd_noise: None,
        };
        // Even σ = 1e4 cannot pay the δ term ln(1/δ)/127 ≈ 0.09 with ε = 1e-3.
        let r = calibrate(&PrivacySpec::new(1e-3, 1e-5), &plan);
        assert!(matches!(r, Err(Error::InfeasibleBudget(_))));
    }

    #[test]
    fn clip_contract() {
        let v = [2.0, 0.0];
        assert_eq!(clip_l2(&v, 1.0), vec![1.0, 0.0]);
        assert_eq!(clip_l2(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip_l2(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        assert_eq!(clip_l2(&[3.0, 4.0], f64::INFINITY), vec![3.0, 4.0]);
    }

    #[test]
    fn noise_zero_sigma_and_determinism() {
        let mut rng = seeded(3);
        assert!(gaussian_noise(10, 0.0, &mut rng).iter().all(|&x| x == 0.0));
        let a = gaussian_noise(16, 2.0, &mut seeded(11));
        let b = gaussian_noise(16, 2.0, &mut seeded(11));
        assert_eq!(a, b);
    }

    #[test]
    fn noise_sample_mean() {
        let sigma = 3.0;
        let xs = gaussian_noise(1_000_000, sigma, &mut seeded(5));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 5.0 * sigma / 1000.0, "mean {mean}");
    }
}
