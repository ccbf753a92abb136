//! Classifier arithmetic: the derived constants, the critical curve
//! `Gamma_m` and the p-q region classifier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances::{ALPHA_EPSILON, CORNER_REL_TOL, GAMMA_BOUNDARY_TOL, THRESHOLD_REL_TOL};

/// Model parameters of the coupled system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Exponent of the degenerate speed `t^{2m}`.
    pub m: f64,
    /// Space dimension.
    pub n: u32,
    pub mu1: f64,
    pub mu2: f64,
    /// Mass coefficient, already squared.
    pub nu1sq: f64,
    pub nu2sq: f64,
    pub p: f64,
    pub q: f64,
    /// Regularity of the initial data.
    pub sigma: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParams {
                name,
                reason: reason.to_string(),
            })
        };
        let all = [
            self.m, self.mu1, self.mu2, self.nu1sq, self.nu2sq, self.p, self.q, self.sigma,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("params", "all parameters must be finite");
        }
        if self.m <= -1.0 {
            return bad("m", "must exceed -1");
        }
        if self.n < 1 {
            return bad("n", "must be at least 1");
        }
        if self.p <= 1.0 {
            return bad("p", "must exceed 1");
        }
        if self.q <= 1.0 {
            return bad("q", "must exceed 1");
        }
        if self.sigma <= 0.0 {
            return bad("sigma", "must be positive");
        }
        if self.mu1 < 0.0 || self.mu2 < 0.0 {
            return bad("mu", "must be nonnegative");
        }
        if self.nu1sq < 0.0 || self.nu2sq < 0.0 {
            return bad("nusq", "must be nonnegative");
        }
        Ok(())
    }

    pub fn delta1(&self) -> f64 {
        delta(self.mu1, self.nu1sq)
    }

    pub fn delta2(&self) -> f64 {
        delta(self.mu2, self.nu2sq)
    }

    /// `(m+1) n`, the scaling dimension that appears everywhere.
    pub fn scaled_dim(&self) -> f64 {
        (self.m + 1.0) * self.n as f64
    }

    /// Exchange the roles of the two equations.
    pub fn swapped(&self) -> SystemParams {
        SystemParams {
            mu1: self.mu2,
            mu2: self.mu1,
            nu1sq: self.nu2sq,
            nu2sq: self.nu1sq,
            p: self.q,
            q: self.p,
            ..*self
        }
    }

    /// `(m+1)^2 (n + 2 sigma - 1)^2`, the size `delta` must reach for global existence.
    pub fn sigma_threshold(&self) -> f64 {
        let a = (self.m + 1.0) * (self.n as f64 + 2.0 * self.sigma - 1.0);
        a * a
    }
}

pub fn delta(mu: f64, nu_sq: f64) -> f64 {
    (mu - 1.0) * (mu - 1.0) - 4.0 * nu_sq
}

/// Smaller root of `b^2 - (mu+1) b + mu + nu^2 = 0`.
pub fn beta(mu: f64, delta: f64) -> f64 {
    (mu + 1.0 - delta.sqrt()) / 2.0
}

/// Closed form of the speed primitive `phi_m(t) = t^{m+1}/(m+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiM {
    pub m: f64,
}

impl PhiM {
    pub fn eval(&self, t: f64) -> f64 {
        t.powf(self.m + 1.0) / (self.m + 1.0)
    }

    /// Radius of the support envelope at time `t` for data supported in `B_M`.
    pub fn envelope(&self, t: f64, initial_radius: f64) -> f64 {
        self.eval(t) - self.eval(1.0) + initial_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub delta1: f64,
    pub delta2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma_m: f64,
    pub p_tilde: f64,
    pub q_tilde: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma_threshold1: f64,
    pub sigma_threshold2: f64,
    pub log_flag1: bool,
    pub log_flag2: bool,
    pub phi_m_scale: PhiM,
}

impl DerivedConstants {
    /// `ell_i(t)`: `(1 + log t)^{1/2}` on the threshold, 1 otherwise.
    pub fn ell(&self, i: usize, t: f64) -> f64 {
        let flag = if i == 1 { self.log_flag1 } else { self.log_flag2 };
        if flag {
            (1.0 + t.ln()).sqrt()
        } else {
            1.0
        }
    }

    /// Growth exponent `(sqrt(delta_i) - mu_i + 1)/2` of the slow Euler mode.
    pub fn rho(&self, i: usize, params: &SystemParams) -> f64 {
        if i == 1 {
            (self.delta1.sqrt() - params.mu1 + 1.0) / 2.0
        } else {
            (self.delta2.sqrt() - params.mu2 + 1.0) / 2.0
        }
    }
}

pub fn derive_constants(params: &SystemParams) -> Result<DerivedConstants> {
    derive_constants_with_epsilon(params, ALPHA_EPSILON)
}

pub fn derive_constants_with_epsilon(
    params: &SystemParams,
    epsilon: f64,
) -> Result<DerivedConstants> {
    let (delta1, delta2) = checked_deltas(params)?;
    let beta1 = beta(params.mu1, delta1);
    let beta2 = beta(params.mu2, delta2);
    let (p_tilde, q_tilde) = tilde_exponents(params.scaled_dim(), beta1, beta2)?;
    let a = params.scaled_dim();
    let alpha1 = loss_exponent(params.p, p_tilde, a + beta2 - 1.0, epsilon);
    let alpha2 = loss_exponent(params.q, q_tilde, a + beta1 - 1.0, epsilon);
    let threshold = params.sigma_threshold();
    let gamma = gamma_m_raw(params.p, params.q, beta1, beta2, a).value;
    Ok(DerivedConstants {
        delta1,
        delta2,
        beta1,
        beta2,
        gamma_m: gamma,
        p_tilde,
        q_tilde,
        alpha1,
        alpha2,
        sigma_threshold1: threshold,
        sigma_threshold2: threshold,
        log_flag1: approx_eq(delta1, threshold),
        log_flag2: approx_eq(delta2, threshold),
        phi_m_scale: PhiM { m: params.m },
    })
}

fn checked_deltas(params: &SystemParams) -> Result<(f64, f64)> {
    let d1 = params.delta1();
    if !(d1 > 0.0) {
        return Err(Error::NonPositiveDelta { index: 1, value: d1 });
    }
    let d2 = params.delta2();
    if !(d2 > 0.0) {
        return Err(Error::NonPositiveDelta { index: 2, value: d2 });
    }
    Ok((d1, d2))
}

/// `(p_tilde, q_tilde)` from the scaled dimension `a = (m+1)n` and the betas.
pub fn tilde_exponents(a: f64, beta1: f64, beta2: f64) -> Result<(f64, f64)> {
    let den_p = a + beta2 - 1.0;
    if !(den_p > 0.0) {
        return Err(Error::DegenerateDenominator {
            what: "p_tilde",
            value: den_p,
        });
    }
    let den_q = a + beta1 - 1.0;
    if !(den_q > 0.0) {
        return Err(Error::DegenerateDenominator {
            what: "q_tilde",
            value: den_q,
        });
    }
    Ok(((a + beta1 + 1.0) / den_p, (a + beta2 + 1.0) / den_q))
}

fn loss_exponent(p: f64, p_tilde: f64, scale: f64, epsilon: f64) -> f64 {
    if (p - p_tilde).abs() <= CORNER_REL_TOL * p_tilde.abs().max(1.0) {
        epsilon
    } else if p < p_tilde {
        scale * (p_tilde - p)
    } else {
        0.0
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= THRESHOLD_REL_TOL * a.abs().max(b.abs())
}

fn at_least(a: f64, b: f64) -> bool {
    a >= b || approx_eq(a, b)
}

fn strictly_above(a: f64, b: f64) -> bool {
    a > b && !approx_eq(a, b)
}

/// Which of the two branches of `Gamma_m` attains the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaBranch {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaValue {
    pub value: f64,
    /// `(p+1)/(pq-1) - (beta1-1)/2 - (m+1)n/2`.
    pub first: f64,
    /// `(q+1)/(pq-1) - (beta2-1)/2 - (m+1)n/2`.
    pub second: f64,
    pub branch: GammaBranch,
}

fn gamma_m_raw(p: f64, q: f64, beta1: f64, beta2: f64, a: f64) -> GammaValue {
    let pq1 = p * q - 1.0;
    let first = (p + 1.0) / pq1 - (beta1 - 1.0) / 2.0 - a / 2.0;
    let second = (q + 1.0) / pq1 - (beta2 - 1.0) / 2.0 - a / 2.0;
    let (value, branch) = if first >= second {
        (first, GammaBranch::First)
    } else {
        (second, GammaBranch::Second)
    };
    GammaValue {
        value,
        first,
        second,
        branch,
    }
}

/// `Gamma_m(n, p, q, beta1, beta2)` with the branch values exposed.
pub fn gamma_m(p: f64, q: f64, consts: &DerivedConstants, n: u32, m: f64) -> GammaValue {
    gamma_m_raw(p, q, consts.beta1, consts.beta2, (m + 1.0) * n as f64)
}

/// Outcome of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    BlowUp,
    GlobalExistence,
    TheorySilent,
}

/// The hypothesis sets the classifier knows about.
///
/// The global families split by data regularity (`sigma >= 1` is `High`)
/// and by the position of `(p, q)` relative to `(p_tilde, q_tilde)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    BlowUp,
    HighBothAbove,
    HighPBelow,
    HighQBelow,
    LowBothAbove,
    LowPBelow,
    LowQBelow,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::BlowUp => "blow-up",
            Regime::HighBothAbove => "global/high-regularity/p,q-above-corner",
            Regime::HighPBelow => "global/high-regularity/p-below-corner",
            Regime::HighQBelow => "global/high-regularity/q-below-corner",
            Regime::LowBothAbove => "global/low-regularity/p,q-above-corner",
            Regime::LowPBelow => "global/low-regularity/p-below-corner",
            Regime::LowQBelow => "global/low-regularity/q-below-corner",
        }
    }
}

/// A single named hypothesis together with its signed margin
/// (positive or zero when the condition holds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub holds: bool,
    pub margin: f64,
}

impl ConditionCheck {
    fn new(name: impl Into<String>, holds: bool, margin: f64) -> Self {
        ConditionCheck {
            name: name.into(),
            holds,
            margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionClass {
    pub verdict: Verdict,
    pub satisfied_theorem: Option<Regime>,
    /// Every condition of the blow-up set and of the applicable global set.
    pub reasons: Vec<ConditionCheck>,
    /// Smallest margin of the selected hypothesis set; for a silent verdict,
    /// the best (largest) such minimum over the candidate sets.
    pub margin: f64,
    pub gamma_m: f64,
}

struct HypothesisSet {
    regime: Regime,
    checks: Vec<ConditionCheck>,
}

impl HypothesisSet {
    fn holds(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    fn min_margin(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

fn blow_up_hypotheses(params: &SystemParams, beta1: f64, beta2: f64, gamma: f64) -> HypothesisSet {
    let SystemParams {
        m, mu1, mu2, p, q, ..
    } = *params;
    let mut checks = Vec::new();
    checks.push(ConditionCheck::new(
        "exponents exceed one",
        p > 1.0 && q > 1.0,
        (p - 1.0).min(q - 1.0),
    ));
    let mu_floor = if m < 0.0 { 1.0 } else { 0.0 };
    checks.push(ConditionCheck::new(
        if m < 0.0 {
            "mu1, mu2 > 1 (m < 0)"
        } else {
            "mu1, mu2 > 0 (m >= 0)"
        },
        mu1 > mu_floor && mu2 > mu_floor,
        (mu1 - mu_floor).min(mu2 - mu_floor),
    ));
    let den_p = 2.0 * m + 1.0 + beta2;
    let den_q = 2.0 * m + 1.0 + beta1;
    let bound_p = (1.0 + beta1) / den_p;
    let bound_q = (1.0 + beta2) / den_q;
    checks.push(ConditionCheck::new(
        "p > (1+beta1)/(2m+1+beta2)",
        den_p > 0.0 && p > bound_p,
        if den_p > 0.0 { p - bound_p } else { f64::NEG_INFINITY },
    ));
    checks.push(ConditionCheck::new(
        "q > (1+beta2)/(2m+1+beta1)",
        den_q > 0.0 && q > bound_q,
        if den_q > 0.0 { q - bound_q } else { f64::NEG_INFINITY },
    ));
    checks.push(ConditionCheck::new(
        "Gamma_m >= 0",
        gamma >= -GAMMA_BOUNDARY_TOL,
        gamma,
    ));
    HypothesisSet {
        regime: Regime::BlowUp,
        checks,
    }
}

fn global_hypotheses(
    params: &SystemParams,
    delta1: f64,
    delta2: f64,
    beta1: f64,
    beta2: f64,
) -> Vec<HypothesisSet> {
    let SystemParams {
        m,
        n,
        mu1,
        mu2,
        p,
        q,
        sigma,
        ..
    } = *params;
    let n = n as f64;
    let a = (m + 1.0) * n;
    let high = sigma >= 1.0;
    let mut common = Vec::new();
    common.push(ConditionCheck::new(
        "mu1, mu2 > 1",
        mu1 > 1.0 && mu2 > 1.0,
        (mu1 - 1.0).min(mu2 - 1.0),
    ));
    if high {
        let floor = sigma.ceil();
        common.push(ConditionCheck::new(
            "p, q > ceil(sigma)",
            p > floor && q > floor,
            (p - floor).min(q - floor),
        ));
    } else {
        common.push(ConditionCheck::new(
            "exponents exceed one",
            p > 1.0 && q > 1.0,
            (p - 1.0).min(q - 1.0),
        ));
    }
    if n > 2.0 * sigma {
        let cap = if high {
            1.0 + 2.0 / (n - 2.0 * sigma)
        } else {
            n / (n - 2.0 * sigma)
        };
        common.push(ConditionCheck::new(
            if high {
                "p, q <= 1 + 2/(n-2 sigma)"
            } else {
                "p, q <= n/(n-2 sigma)"
            },
            p <= cap && q <= cap,
            (cap - p).min(cap - q),
        ));
    }

    let tilde = tilde_exponents(a, beta1, beta2).ok();
    common.push(ConditionCheck::new(
        "corner exponents defined",
        tilde.is_some(),
        (a + beta1 - 1.0).min(a + beta2 - 1.0),
    ));
    let (p_tilde, q_tilde) = tilde.unwrap_or((f64::NAN, f64::NAN));

    let threshold = params.sigma_threshold();
    let at_least_check = |name: &str, d: f64| {
        ConditionCheck::new(name, at_least(d, threshold), d - threshold)
    };
    let above_check = |name: &str, d: f64| {
        ConditionCheck::new(name, strictly_above(d, threshold), d - threshold)
    };

    let pq1 = p * q - 1.0;
    let (r_both, r_p, r_q) = if high {
        (Regime::HighBothAbove, Regime::HighPBelow, Regime::HighQBelow)
    } else {
        (Regime::LowBothAbove, Regime::LowPBelow, Regime::LowQBelow)
    };

    let mut both = common.clone();
    both.push(ConditionCheck::new("p > p_tilde", p > p_tilde, p - p_tilde));
    both.push(ConditionCheck::new("q > q_tilde", q > q_tilde, q - q_tilde));
    both.push(at_least_check("delta1 >= threshold", delta1));
    both.push(at_least_check("delta2 >= threshold", delta2));

    let rhs_q = (a + beta2 - 1.0) / 2.0;
    let lhs_q = (q + 1.0) / pq1;
    let mut p_below = common.clone();
    p_below.push(ConditionCheck::new("p <= p_tilde", p <= p_tilde, p_tilde - p));
    p_below.push(ConditionCheck::new("q > q_tilde", q > q_tilde, q - q_tilde));
    p_below.push(at_least_check("delta1 >= threshold", delta1));
    p_below.push(above_check("delta2 > threshold", delta2));
    p_below.push(ConditionCheck::new(
        "(q+1)/(pq-1) < ((m+1)n+beta2-1)/2",
        pq1 > 0.0 && lhs_q < rhs_q,
        rhs_q - lhs_q,
    ));

    let rhs_p = (a + beta1 - 1.0) / 2.0;
    let lhs_p = (p + 1.0) / pq1;
    let mut q_below = common;
    q_below.push(ConditionCheck::new("p > p_tilde", p > p_tilde, p - p_tilde));
    q_below.push(ConditionCheck::new("q <= q_tilde", q <= q_tilde, q_tilde - q));
    q_below.push(above_check("delta1 > threshold", delta1));
    q_below.push(at_least_check("delta2 >= threshold", delta2));
    q_below.push(ConditionCheck::new(
        "(p+1)/(pq-1) < ((m+1)n+beta1-1)/2",
        pq1 > 0.0 && lhs_p < rhs_p,
        rhs_p - lhs_p,
    ));

    vec![
        HypothesisSet {
            regime: r_both,
            checks: both,
        },
        HypothesisSet {
            regime: r_p,
            checks: p_below,
        },
        HypothesisSet {
            regime: r_q,
            checks: q_below,
        },
    ]
}

/// Classify `params` as blow-up, small-data global existence, or neither.
pub fn classify(params: &SystemParams) -> Result<RegionClass> {
    let (delta1, delta2) = checked_deltas(params)?;
    let beta1 = beta(params.mu1, delta1);
    let beta2 = beta(params.mu2, delta2);
    let gamma = gamma_m_raw(params.p, params.q, beta1, beta2, params.scaled_dim()).value;

    let blow = blow_up_hypotheses(params, beta1, beta2, gamma);
    let globals = global_hypotheses(params, delta1, delta2, beta1, beta2);

    let blow_holds = blow.holds();
    let holding: Vec<&HypothesisSet> = globals.iter().filter(|h| h.holds()).collect();
    // The p/q case split makes the global sets disjoint, and each global set
    // forces Gamma_m < 0 through its corner or (q+1)/(pq-1) condition.
    assert!(holding.len() <= 1, "global hypothesis sets overlap");
    assert!(
        !(blow_holds && !holding.is_empty()),
        "blow-up and global hypotheses hold simultaneously"
    );

    // Report the global set that matches the (p, q) case split, or all of
    // them when the corner is undefined.
    let matched: Vec<&HypothesisSet> = globals
        .iter()
        .filter(|h| {
            h.checks
                .iter()
                .filter(|c| c.name.contains("tilde") && c.name != "corner exponents defined")
                .all(|c| c.holds)
        })
        .collect();
    let shown: Vec<&HypothesisSet> = if matched.is_empty() {
        globals.iter().collect()
    } else {
        matched
    };

    let mut reasons = blow.checks.clone();
    for set in &shown {
        for c in &set.checks {
            if !reasons.contains(c) {
                reasons.push(c.clone());
            }
        }
    }

    let (verdict, regime, margin) = if blow_holds {
        (Verdict::BlowUp, Some(Regime::BlowUp), blow.min_margin())
    } else if let Some(set) = holding.first() {
        (Verdict::GlobalExistence, Some(set.regime), set.min_margin())
    } else {
        let best = std::iter::once(&blow)
            .chain(globals.iter())
            .map(|h| h.min_margin())
            .fold(f64::NEG_INFINITY, f64::max);
        (Verdict::TheorySilent, None, best)
    };

    Ok(RegionClass {
        verdict,
        satisfied_theorem: regime,
        reasons,
        margin,
        gamma_m: gamma,
    })
}

/// One cell of a p-q sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCell {
    pub p: f64,
    pub q: f64,
    pub class: std::result::Result<RegionClass, Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    pub p_range: (f64, f64),
    pub q_range: (f64, f64),
    pub resolution: usize,
    /// Row-major: index `iq * resolution + ip`.
    pub cells: Vec<RegionCell>,
    /// `(p_tilde, q_tilde)` when defined for the sweep's coefficients.
    pub corner: Option<(f64, f64)>,
}

impl RegionMap {
    pub fn cell(&self, ip: usize, iq: usize) -> &RegionCell {
        &self.cells[iq * self.resolution + ip]
    }
}

pub fn axis_value(range: (f64, f64), resolution: usize, i: usize) -> f64 {
    range.0 + (range.1 - range.0) * i as f64 / (resolution - 1) as f64
}

/// Classify every node of a `resolution x resolution` grid in the p-q plane.
/// The `p` and `q` fields of `base` are ignored.
pub fn region_map(
    base: &SystemParams,
    p_range: (f64, f64),
    q_range: (f64, f64),
    resolution: usize,
) -> Result<RegionMap> {
    if resolution < 2 {
        return Err(Error::InvalidParams {
            name: "resolution",
            reason: "must be at least 2".into(),
        });
    }
    for (name, r) in [("p_range", p_range), ("q_range", q_range)] {
        if !(r.0 > 1.0 && r.1 > r.0 && r.1.is_finite()) {
            return Err(Error::InvalidParams {
                name,
                reason: format!("need 1 < lo < hi, got {:?}", r),
            });
        }
    }
    let cells = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let p = axis_value(p_range, resolution, idx % resolution);
            let q = axis_value(q_range, resolution, idx / resolution);
            let params = SystemParams { p, q, ..*base };
            RegionCell {
                p,
                q,
                class: classify(&params),
            }
        })
        .collect();
    let corner = match checked_deltas(base) {
        Ok((d1, d2)) => {
            tilde_exponents(base.scaled_dim(), beta(base.mu1, d1), beta(base.mu2, d2)).ok()
        }
        Err(_) => None,
    };
    Ok(RegionMap {
        p_range,
        q_range,
        resolution,
        cells,
        corner,
    })
}

/// A feasible Lebesgue-exponent pair for the nonlinear estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Feasibility {
    Feasible { r_a: f64, r_b: f64 },
    Infeasible,
}

/// Find `(r_a, r_b)` with `(s-1)/r_a + 1/r_b = 1/2`, `theta_1(r_a)` in `[0,1]`,
/// and `r_b` admissible for the first (`order = 1`) or second (`order = 2`)
/// derivative flavour. Returns the midpoint of the feasible `1/r_a` interval.
pub fn exponent_feasibility(n: u32, sigma: f64, s: f64, order: u32) -> Result<Feasibility> {
    if order != 1 && order != 2 {
        return Err(Error::InvalidOrder(order));
    }
    if !(s > 1.0) || !(sigma > 0.0) || n == 0 {
        return Err(Error::InvalidParams {
            name: "s",
            reason: "need s > 1, sigma > 0, n >= 1".into(),
        });
    }
    let nf = n as f64;
    // 1/r ranges; an open lower end at 0 is represented by `lo_open`.
    let (xa_lo, xa_open) = if nf > 2.0 * sigma {
        ((nf - 2.0 * sigma) / (2.0 * nf), false)
    } else {
        (0.0, true)
    };
    let shift = 2.0 * order as f64;
    let (yb_lo, yb_open) = if nf > shift {
        ((nf - shift) / (2.0 * nf), false)
    } else {
        (0.0, true)
    };
    // y = 1/2 - (s-1) x lies in the b-interval iff x <= (1/2 - yb_lo)/(s-1).
    let x_cap = (0.5 - yb_lo) / (s - 1.0);
    let lo = xa_lo;
    let hi = x_cap.min(0.5);
    let hi_open = yb_open && x_cap <= 0.5;
    let tol = 1e-12 * (1.0 + hi.abs());
    let feasible = if xa_open || hi_open {
        hi > lo
    } else {
        hi >= lo - tol
    };
    if !feasible {
        return Ok(Feasibility::Infeasible);
    }
    let x = if hi < lo { lo } else { 0.5 * (lo + hi) };
    let y = 0.5 - (s - 1.0) * x;
    Ok(Feasibility::Feasible {
        r_a: 1.0 / x,
        r_b: 1.0 / y,
    })
}
