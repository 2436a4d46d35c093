//! Synthetic worlds with closed-form ground truth.
//!
//! Memory inputs `U` come from a ball, box or Gaussian law; the true
//! conditional is a softmax of affine scores; queries are `X = T(U)` for a
//! deformation `T`; memory labels follow the corrupted conditional
//! `(1 - rho) P(.|U) + rho s`. All geometry here is Euclidean.
//!
//! Labels inside config-facing types ([`Spurious::PointMass`],
//! [`Q0Spec::Permuted`]) are 1-based; everything else is 0-based.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryStore, Norm};
use crate::seed::rng_from_seed;
use crate::simplex::{l1_distance, ProbVec};

/// Slack for floating-point rounding in the Lipschitz certificate.
const LIPSCHITZ_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputLaw {
    /// Uniform on the closed Euclidean ball of `radius` around the origin.
    UniformBall { radius: f64 },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, scale: f64 },
}

/// `P(y|x) ∝ exp(weights[y] . x + offsets[y])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftmaxAffine {
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Deformation {
    #[default]
    None,
    ConstantShift { shift: Vec<f64> },
    /// `x = u (1 + t / |u|)`, moving `u` radially outward by `t`.
    RadialPush { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Spurious {
    #[default]
    Uniform,
    PointMass { label: usize },
}

/// Constructors for the frozen base predictor `q0(.|x)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Q0Spec {
    #[default]
    Bayes,
    /// `q0 ∝ P^tau`.
    Tempered { tau: f64 },
    /// `q0(.|x) = P(.|x + delta)`.
    Shifted { delta: Vec<f64> },
    /// `(1 - alpha) P + alpha * uniform`.
    Contaminated { alpha: f64 },
    /// `q0(y|x) = P(sigma(y)|x)`.
    Permuted { sigma: Vec<usize> },
}

/// Serializable scenario definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub dim: usize,
    pub num_labels: usize,
    pub input_law: InputLaw,
    pub conditional: SoftmaxAffine,
    #[serde(default)]
    pub q0: Q0Spec,
    #[serde(default)]
    pub deformation: Deformation,
    #[serde(default)]
    pub corruption_rate: f64,
    #[serde(default)]
    pub spurious: Spurious,
    /// Optional user-supplied Lipschitz constant; must not be below the
    /// certified bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    spec: ScenarioSpec,
    offsets: Vec<f64>,
    lipschitz: f64,
}

/// Closed support of the memory input law.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportOracle {
    Ball { radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Everywhere,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportProjection {
    pub distance: f64,
    pub nearest: Vec<f64>,
    pub unique: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasBounds {
    pub delta_geom: f64,
    pub delta_sem: f64,
    pub l1_bound: f64,
    pub support_distance: f64,
}

fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}

fn check_len(name: &'static str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(invalid(name, format!("has length {}, expected {dim}", v.len())));
    }
    if v.iter().any(|t| !t.is_finite()) {
        return Err(invalid(name, "entries must be finite"));
    }
    Ok(())
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        let d = spec.dim;
        let c = spec.num_labels;
        if d == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        if c == 0 {
            return Err(invalid("num_labels", "must be >= 1"));
        }
        match &spec.input_law {
            InputLaw::UniformBall { radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(invalid("radius", "must be finite and >= 0"));
                }
            }
            InputLaw::UniformBox { lower, upper } => {
                check_len("lower", lower, d)?;
                check_len("upper", upper, d)?;
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(invalid("upper", "every upper bound must be >= the lower bound"));
                }
            }
            InputLaw::Gaussian { mean, scale } => {
                check_len("mean", mean, d)?;
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(invalid("scale", "must be finite and > 0"));
                }
            }
        }

        let weights = &spec.conditional.weights;
        if weights.len() != c {
            return Err(invalid("weights", format!("has {} rows, expected {c}", weights.len())));
        }
        for row in weights {
            check_len("weights", row, d)?;
        }
        let offsets = if spec.conditional.offsets.is_empty() {
            vec![0.0; c]
        } else {
            check_len("offsets", &spec.conditional.offsets, c)?;
            spec.conditional.offsets.clone()
        };

        match &spec.q0 {
            Q0Spec::Bayes => {}
            Q0Spec::Tempered { tau } => {
                if !(tau.is_finite() && *tau > 0.0) {
                    return Err(invalid("tau", "must be finite and > 0"));
                }
            }
            Q0Spec::Shifted { delta } => check_len("delta", delta, d)?,
            Q0Spec::Contaminated { alpha } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(invalid("alpha", "must lie in [0, 1]"));
                }
            }
            Q0Spec::Permuted { sigma } => {
                let mut seen = vec![false; c];
                if sigma.len() != c {
                    return Err(invalid("sigma", format!("must list {c} labels")));
                }
                for &s in sigma {
                    if s == 0 || s > c || seen[s - 1] {
                        return Err(invalid("sigma", "must be a permutation of 1..=C"));
                    }
                    seen[s - 1] = true;
                }
            }
        }

        match &spec.deformation {
            Deformation::None => {}
            Deformation::ConstantShift { shift } => check_len("shift", shift, d)?,
            Deformation::RadialPush { t } => {
                if !(t.is_finite() && *t >= 0.0) {
                    return Err(invalid("t", "must be finite and >= 0"));
                }
            }
        }
        if !(0.0..=1.0).contains(&spec.corruption_rate) {
            return Err(invalid("corruption_rate", "must lie in [0, 1]"));
        }
        if let Spurious::PointMass { label } = spec.spurious {
            if label == 0 || label > c {
                return Err(invalid("spurious.label", format!("must lie in 1..={c}")));
            }
        }

        let certified = lipschitz_bound(weights);
        let lipschitz = match spec.lipschitz {
            None => certified,
            Some(l) if l.is_finite() && l >= certified => l,
            Some(l) => {
                return Err(invalid(
                    "lipschitz",
                    format!("{l} is below the certified bound {certified}"),
                ))
            }
        };
        Ok(Self { spec, offsets, lipschitz })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn num_labels(&self) -> usize {
        self.spec.num_labels
    }

    /// Lipschitz constant of `x -> P(.|x)` for both the per-label sup norm
    /// and the L1 norm on the simplex, with Euclidean inputs.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn corruption_rate(&self) -> f64 {
        self.spec.corruption_rate
    }

    /// No deformation and no corruption.
    pub fn is_aligned(&self) -> bool {
        matches!(self.spec.deformation, Deformation::None) && self.spec.corruption_rate == 0.0
    }

    fn scores(&self, x: &[f64], scale: f64) -> Vec<f64> {
        self.spec
            .conditional
            .weights
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| scale * (a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>() + b))
            .collect()
    }

    /// Softmax of the affine scores at `x`.
    pub fn conditional_at(&self, x: &[f64]) -> Result<ProbVec> {
        self.check_point(x)?;
        Ok(softmax(&self.scores(x, 1.0)))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Spurious label law `s(.|u)` (constant in `u`).
    pub fn spurious(&self) -> ProbVec {
        let c = self.num_labels();
        match self.spec.spurious {
            Spurious::Uniform => ProbVec::uniform(c),
            Spurious::PointMass { label } => ProbVec::point_mass(c, label - 1),
        }
        .expect("validated at construction")
    }

    /// Memory label law `Q(.|u) = (1 - rho) P(.|u) + rho s`.
    pub fn memory_label_law(&self, u: &[f64]) -> Result<ProbVec> {
        corrupt(&self.conditional_at(u)?, self.spec.corruption_rate, &self.spurious())
    }

    pub fn q0_at(&self, x: &[f64]) -> Result<ProbVec> {
        q0_build(&self.spec.q0, self, x)
    }

    pub fn deform(&self, u: &[f64]) -> Vec<f64> {
        match &self.spec.deformation {
            Deformation::None => u.to_vec(),
            Deformation::ConstantShift { shift } => u.iter().zip(shift).map(|(a, b)| a + b).collect(),
            Deformation::RadialPush { t } => {
                let len = Norm::L2.length(u);
                if len == 0.0 {
                    u.to_vec()
                } else {
                    let factor = 1.0 + t / len;
                    u.iter().map(|a| a * factor).collect()
                }
            }
        }
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        match &self.spec.input_law {
            InputLaw::UniformBall { radius } => {
                if d == 1 {
                    return vec![radius * (2.0 * rng.random::<f64>() - 1.0)];
                }
                let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let len = Norm::L2.length(&dir);
                let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                if len > 0.0 {
                    dir.iter_mut().for_each(|t| *t *= r / len);
                }
                dir
            }
            InputLaw::UniformBox { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                .collect(),
            InputLaw::Gaussian { mean, scale } => mean
                .iter()
                .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    /// `n` i.i.d. memory pairs `(U_i, V_i)`, deterministic in `seed`.
    pub fn sample_memory(&self, n: usize, seed: u64) -> Result<MemoryStore> {
        if n == 0 {
            return Err(invalid("n", "must be >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let d = self.dim();
        let c = self.num_labels();
        let rho = self.spec.corruption_rate;
        let spurious = self.spurious();
        let mut points = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        let mut law = vec![0.0; c];
        for _ in 0..n {
            let u = self.sample_input(&mut rng);
            let p = softmax(&self.scores(&u, 1.0));
            for y in 0..c {
                law[y] = (1.0 - rho) * p[y] + rho * spurious[y];
            }
            labels.push(sample_label(&law, rng.random::<f64>()) as u32);
            points.extend_from_slice(&u);
        }
        MemoryStore::new(d, c, Norm::L2, points, labels)
    }

    /// Draws `U`, returns `x = T(U)` and `P(.|x)`.
    pub fn make_query(&self, seed: u64) -> Result<(Vec<f64>, ProbVec)> {
        let mut rng = rng_from_seed(seed);
        let u = self.sample_input(&mut rng);
        let x = self.deform(&u);
        let p = self.conditional_at(&x)?;
        Ok((x, p))
    }

    pub fn support(&self) -> SupportOracle {
        match &self.spec.input_law {
            InputLaw::UniformBall { radius } => SupportOracle::Ball { radius: *radius },
            InputLaw::UniformBox { lower, upper } => SupportOracle::Box {
                lower: lower.clone(),
                upper: upper.clone(),
            },
            InputLaw::Gaussian { .. } => SupportOracle::Everywhere,
        }
    }

    /// Geometric and semantic parts of the limiting retrieval bias at `x`.
    ///
    /// Also checks `delta_geom <= L d(x, S)` and fails if it does not hold.
    pub fn bias_bounds(&self, x: &[f64]) -> Result<BiasBounds> {
        self.check_point(x)?;
        let proj = support_distance(&self.support(), x);
        if !proj.unique {
            return Err(Error::NonUniqueProjection);
        }
        let p_x = self.conditional_at(x)?;
        let p_u = self.conditional_at(&proj.nearest)?;
        let rho = self.spec.corruption_rate;
        let delta_geom = l1_distance(&p_u, &p_x)?;
        let delta_sem = l1_distance(&self.spurious(), &p_x)?;
        let rhs = self.lipschitz * proj.distance;
        if delta_geom > rhs + LIPSCHITZ_SLACK {
            return Err(Error::LipschitzViolation { lhs: delta_geom, rhs });
        }
        Ok(BiasBounds {
            delta_geom,
            delta_sem,
            l1_bound: (1.0 - rho) * delta_geom + rho * delta_sem,
            support_distance: proj.distance,
        })
    }

    /// Limit of the retriever distribution at `x`: `Q(.|u_x)` for the unique
    /// nearest support point `u_x`.
    pub fn limiting_retriever(&self, x: &[f64]) -> Result<ProbVec> {
        self.check_point(x)?;
        let proj = support_distance(&self.support(), x);
        if !proj.unique {
            return Err(Error::NonUniqueProjection);
        }
        self.memory_label_law(&proj.nearest)
    }
}

/// Half the largest Euclidean distance between two weight vectors.
///
/// Along any direction `v` the scores `a_y . v` span an interval of width at
/// most `W = max |a_y - a_y'| |v|`. The softmax derivative is
/// `p_y (z_y - E_p z)`, whose L1 norm is a mean absolute deviation (at most
/// `W / 2`) and whose entries are at most `W / 4`.
pub fn lipschitz_bound(weights: &[Vec<f64>]) -> f64 {
    let mut widest = 0.0_f64;
    for (i, a) in weights.iter().enumerate() {
        for b in &weights[i + 1..] {
            widest = widest.max(Norm::L2.distance(a, b));
        }
    }
    0.5 * widest
}

fn softmax(scores: &[f64]) -> ProbVec {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = scores.iter().map(|s| (s - max).exp()).collect();
    ProbVec::from_weights(weights).expect("the top score has weight 1")
}

/// Inverse-CDF draw; `u` in `[0, 1)`.
fn sample_label(law: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_supported = 0;
    for (y, &p) in law.iter().enumerate() {
        if p > 0.0 {
            last_supported = y;
            acc += p;
            if u < acc {
                return y;
            }
        }
    }
    last_supported
}

/// `(1 - rho) p + rho s`.
pub fn corrupt(p_true: &ProbVec, rho: f64, s: &ProbVec) -> Result<ProbVec> {
    p_true.check_same_labels(s)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid("rho", format!("{rho} is outside [0, 1]")));
    }
    if rho == 0.0 {
        return Ok(p_true.clone());
    }
    if rho == 1.0 {
        return Ok(s.clone());
    }
    ProbVec::new(
        p_true
            .as_slice()
            .iter()
            .zip(s.as_slice())
            .map(|(p, q)| ((1.0 - rho) * p + rho * q).clamp(0.0, 1.0))
            .collect(),
    )
}

/// Base-model distribution at `x` for the given constructor.
pub fn q0_build(spec: &Q0Spec, scenario: &Scenario, x: &[f64]) -> Result<ProbVec> {
    scenario.check_point(x)?;
    let c = scenario.num_labels();
    match spec {
        Q0Spec::Bayes => scenario.conditional_at(x),
        Q0Spec::Tempered { tau } => {
            if !(tau.is_finite() && *tau > 0.0) {
                return Err(invalid("tau", "must be finite and > 0"));
            }
            // P^tau renormalized is the softmax of tau-scaled scores.
            Ok(softmax(&scenario.scores(x, *tau)))
        }
        Q0Spec::Shifted { delta } => {
            check_len("delta", delta, scenario.dim())?;
            let moved: Vec<f64> = x.iter().zip(delta).map(|(a, b)| a + b).collect();
            scenario.conditional_at(&moved)
        }
        Q0Spec::Contaminated { alpha } => {
            corrupt(&scenario.conditional_at(x)?, *alpha, &ProbVec::uniform(c)?)
        }
        Q0Spec::Permuted { sigma } => {
            if sigma.len() != c || sigma.iter().any(|&s| s == 0 || s > c) {
                return Err(invalid("sigma", "must be a permutation of 1..=C"));
            }
            let p = scenario.conditional_at(x)?;
            ProbVec::new(sigma.iter().map(|&s| p[s - 1]).collect())
        }
    }
}

/// Euclidean distance from `x` to the support and the nearest support point.
///
/// Balls and boxes are convex, so the projection is always unique.
pub fn support_distance(oracle: &SupportOracle, x: &[f64]) -> SupportProjection {
    match oracle {
        SupportOracle::Everywhere => SupportProjection { distance: 0.0, nearest: x.to_vec(), unique: true },
        SupportOracle::Ball { radius } => {
            let len = Norm::L2.length(x);
            if len <= *radius {
                SupportProjection { distance: 0.0, nearest: x.to_vec(), unique: true }
            } else {
                let nearest = x.iter().map(|t| t * radius / len).collect();
                SupportProjection { distance: len - radius, nearest, unique: true }
            }
        }
        SupportOracle::Box { lower, upper } => {
            let nearest: Vec<f64> = x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(t, (l, u))| t.clamp(*l, *u))
                .collect();
            let distance = Norm::L2.distance(x, &nearest);
            let nearest = if distance == 0.0 { x.to_vec() } else { nearest };
            SupportProjection { distance, nearest, unique: true }
        }
    }
}
