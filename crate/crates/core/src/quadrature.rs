//! Numerical integration engine.
//!
//! One-dimensional integrals use a globally adaptive Gauss-Kronrod (7, 15)
//! pair. Integrable endpoint singularities are removed by a power
//! substitution declared by the caller, and half-infinite ranges are mapped
//! onto `[0, 1)` with `x = a + scale * w / (1 - w)`. Tensor integrals iterate
//! the 1-D rule; higher dimensions and importance sampling go through
//! [`mc_integrate`].

use std::ops::Add;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::{self, Exec};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// A numerical result with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate {
        value: 0.0,
        error: 0.0,
        evaluations: 0,
        converged: true,
    };

    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            ..Self::ZERO
        }
    }

    pub fn scale(self, factor: f64) -> Self {
        Estimate {
            value: self.value * factor,
            error: self.error * factor.abs(),
            ..self
        }
    }
}

impl Add for Estimate {
    type Output = Estimate;

    fn add(self, rhs: Estimate) -> Estimate {
        Estimate {
            value: self.value + rhs.value,
            error: self.error + rhs.error,
            evaluations: self.evaluations + rhs.evaluations,
            converged: self.converged && rhs.converged,
        }
    }
}

impl std::iter::Sum for Estimate {
    fn sum<I: Iterator<Item = Estimate>>(iter: I) -> Estimate {
        iter.fold(Estimate::ZERO, |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    Lower,
    Upper,
    Both,
}

/// Change of variables applied before the adaptive rule runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Substitution {
    None,
    /// `x - a = (b - a) w^2`; removes singularities of order up to 1/2.
    Sqrt(Endpoint),
    /// `x - a = (b - a) w^k`; removes singularities of order below `1 - 1/k`.
    Power { exponent: f64, at: Endpoint },
}

impl Substitution {
    fn exponent(self) -> Option<(f64, Endpoint)> {
        match self {
            Substitution::None => None,
            Substitution::Sqrt(at) => Some((2.0, at)),
            Substitution::Power { exponent, at } => Some((exponent, at)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub substitution: Substitution,
    /// Fallback truncation for infinite ranges when the mapped rule fails.
    pub truncation_radius: Option<f64>,
    /// Length scale of the map used on infinite ranges.
    pub tail_scale: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_subdivisions: 200,
            substitution: Substitution::None,
            truncation_radius: None,
            tail_scale: 1.0,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tol(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_substitution(mut self, substitution: Substitution) -> Self {
        self.substitution = substitution;
        self
    }

    pub fn with_tail_scale(mut self, scale: f64) -> Self {
        self.tail_scale = scale;
        self
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(invalid("quadrature tolerances must be positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(invalid("max_subdivisions must be at least 1"));
        }
        if let Some((k, _)) = self.substitution.exponent() {
            if !(k >= 1.0) {
                return Err(invalid("substitution exponent must be >= 1"));
            }
        }
        Ok(())
    }
}

struct Rule {
    value: f64,
    aux: f64,
    error: f64,
}

fn gauss_kronrod<F>(f: &F, a: f64, b: f64) -> Rule
where
    F: Fn(f64) -> (f64, f64),
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut fv = [0.0; 15];
    let mut av = [0.0; 15];
    let (fc, ac) = f(centre);
    fv[7] = fc;
    av[7] = ac;
    for j in 0..7 {
        let dx = half * XGK[j];
        let (f1, a1) = f(centre - dx);
        let (f2, a2) = f(centre + dx);
        fv[j] = f1;
        av[j] = a1;
        fv[14 - j] = f2;
        av[14 - j] = a2;
    }
    let mut kronrod = WGK[7] * fv[7];
    let mut aux = WGK[7] * av[7];
    let mut gauss = WG[3] * fv[7];
    for j in 0..7 {
        let pair = fv[j] + fv[14 - j];
        kronrod += WGK[j] * pair;
        aux += WGK[j] * (av[j] + av[14 - j]);
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let mean = kronrod * 0.5;
    let mut res_abs = WGK[7] * fv[7].abs();
    let mut res_asc = WGK[7] * (fv[7] - mean).abs();
    for j in 0..7 {
        res_abs += WGK[j] * (fv[j].abs() + fv[14 - j].abs());
        res_asc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }
    let h = half.abs();
    let (value, aux) = (kronrod * half, aux * half);
    res_abs *= h;
    res_asc *= h;
    let mut error = ((kronrod - gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    if !value.is_finite() {
        error = f64::INFINITY;
    }
    Rule { value, aux, error }
}

struct Segment {
    a: f64,
    b: f64,
    rule: Rule,
}

/// Globally adaptive bisection. Returns the estimate of the primary component
/// together with the integral of the auxiliary component.
fn adaptive<F>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> (Estimate, f64)
where
    F: Fn(f64) -> (f64, f64),
{
    let (est, aux, _) = adaptive_segments(f, a, b, spec);
    (est, aux)
}

fn adaptive_segments<F>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> (Estimate, f64, Vec<Segment>)
where
    F: Fn(f64) -> (f64, f64),
{
    let mut segments = vec![Segment {
        a,
        b,
        rule: gauss_kronrod(f, a, b),
    }];
    let mut evaluations = 15;
    loop {
        let value: f64 = segments.iter().map(|s| s.rule.value).sum();
        let error: f64 = segments.iter().map(|s| s.rule.error).sum();
        let aux: f64 = segments.iter().map(|s| s.rule.aux).sum();
        let target = spec.abs_tol.max(spec.rel_tol * value.abs());
        let done = error <= target;
        if done || segments.len() >= spec.max_subdivisions || !error.is_finite() && !value.is_finite() {
            let est = Estimate {
                value,
                error,
                evaluations,
                converged: done,
            };
            return (est, aux, segments);
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.rule.error.total_cmp(&y.1.rule.error))
            .map(|(i, _)| i)
            .expect("at least one segment");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a.min(seg.b) && mid < seg.a.max(seg.b)) {
            // interval exhausted at machine resolution
            segments.push(seg);
            let value: f64 = segments.iter().map(|s| s.rule.value).sum();
            let error: f64 = segments.iter().map(|s| s.rule.error).sum();
            let aux: f64 = segments.iter().map(|s| s.rule.aux).sum();
            return (
                Estimate {
                    value,
                    error,
                    evaluations,
                    converged: false,
                },
                aux,
                segments,
            );
        }
        segments.push(Segment {
            a: seg.a,
            b: mid,
            rule: gauss_kronrod(f, seg.a, mid),
        });
        segments.push(Segment {
            a: mid,
            b: seg.b,
            rule: gauss_kronrod(f, mid, seg.b),
        });
        evaluations += 30;
    }
}

/// Integrates a value/aux pair over `[0, 1]` in the variable `w` after the
/// power substitution at `w = 0`.
fn adaptive_with_power<F>(f: &F, k: f64, spec: &QuadratureSpec) -> (Estimate, f64)
where
    F: Fn(f64) -> (f64, f64),
{
    if k == 1.0 {
        return adaptive(f, 0.0, 1.0, spec);
    }
    let g = |w: f64| {
        let jac = k * w.powf(k - 1.0);
        if jac == 0.0 {
            return (0.0, 0.0);
        }
        let (v, a) = f(w.powf(k));
        (v * jac, a * jac)
    };
    adaptive(&g, 0.0, 1.0, spec)
}

/// Finite interval `[a, b]` with `a < b`, applying the declared substitution.
fn finite_pair<F>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> (Estimate, f64)
where
    F: Fn(f64) -> (f64, f64),
{
    let len = b - a;
    match spec.substitution.exponent() {
        None => adaptive(f, a, b, spec),
        Some((k, Endpoint::Lower)) => {
            let g = |w: f64| {
                let (v, x) = f(a + len * w);
                (v * len, x * len)
            };
            adaptive_with_power(&g, k, spec)
        }
        Some((k, Endpoint::Upper)) => {
            let g = |w: f64| {
                let (v, x) = f(b - len * w);
                (v * len, x * len)
            };
            adaptive_with_power(&g, k, spec)
        }
        Some((k, Endpoint::Both)) => {
            let mid = a + 0.5 * len;
            let lower = QuadratureSpec {
                substitution: Substitution::Power {
                    exponent: k,
                    at: Endpoint::Lower,
                },
                abs_tol: 0.5 * spec.abs_tol,
                ..*spec
            };
            let upper = QuadratureSpec {
                substitution: Substitution::Power {
                    exponent: k,
                    at: Endpoint::Upper,
                },
                ..lower
            };
            let (e1, a1) = finite_pair(f, a, mid, &lower);
            let (e2, a2) = finite_pair(f, mid, b, &upper);
            (e1 + e2, a1 + a2)
        }
    }
}

/// Half-infinite range starting at the finite `origin` and extending in
/// direction `dir` (+1 or -1).
fn half_infinite_pair<F>(f: &F, origin: f64, dir: f64, spec: &QuadratureSpec) -> (Estimate, f64)
where
    F: Fn(f64) -> (f64, f64),
{
    let scale = spec.tail_scale;
    let g = |w: f64| {
        let one_minus = 1.0 - w;
        let x = origin + dir * scale * w / one_minus;
        let jac = scale / (one_minus * one_minus);
        let (v, a) = f(x);
        if v == 0.0 && a == 0.0 {
            return (0.0, 0.0);
        }
        (v * jac, a * jac)
    };
    // A singularity at the finite end sits at w = 0.
    let at_origin = match (spec.substitution.exponent(), dir > 0.0) {
        (Some((k, Endpoint::Lower | Endpoint::Both)), true) => Some(k),
        (Some((k, Endpoint::Upper | Endpoint::Both)), false) => Some(k),
        _ => None,
    };
    let inner = QuadratureSpec {
        substitution: Substitution::None,
        ..*spec
    };
    let (est, aux) = match at_origin {
        Some(k) => adaptive_with_power(&g, k, &inner),
        None => adaptive(&g, 0.0, 1.0, &inner),
    };
    if !est.converged {
        if let Some(radius) = spec.truncation_radius {
            let end = origin + dir * radius;
            let (lo, hi) = if dir > 0.0 { (origin, end) } else { (end, origin) };
            let (t_est, t_aux) = finite_pair(f, lo, hi, spec);
            if t_est.converged {
                return (t_est, t_aux);
            }
        }
    }
    (est, aux)
}

fn integrate_pair<F>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> (Estimate, f64)
where
    F: Fn(f64) -> (f64, f64),
{
    if a == b || a.is_nan() || b.is_nan() {
        return (Estimate::ZERO, 0.0);
    }
    if a > b {
        let (e, x) = integrate_pair(f, b, a, spec);
        return (e.scale(-1.0), -x);
    }
    match (a.is_finite(), b.is_finite()) {
        (true, true) => finite_pair(f, a, b, spec),
        (true, false) => half_infinite_pair(f, a, 1.0, spec),
        (false, true) => half_infinite_pair(f, b, -1.0, spec),
        (false, false) => {
            let plain = QuadratureSpec {
                substitution: Substitution::None,
                abs_tol: 0.5 * spec.abs_tol,
                ..*spec
            };
            let (e1, a1) = half_infinite_pair(f, 0.0, -1.0, &plain);
            let (e2, a2) = half_infinite_pair(f, 0.0, 1.0, &plain);
            (e1 + e2, a1 + a2)
        }
    }
}

/// Adaptive integral of `f` over `[a, b]`; either bound may be infinite.
///
/// A run that exhausts `max_subdivisions` still returns its best value, with
/// `converged == false`.
pub fn integrate_1d<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Estimate
where
    F: Fn(f64) -> f64,
{
    let g = |x: f64| (f(x), 0.0);
    integrate_pair(&g, a, b, spec).0
}

/// Adaptive integral of `f` over the finite range `[a, b]` together with the
/// final composite Kronrod rule as `(node, weight)` pairs. Applying the rule
/// to `f` reproduces the estimate; applying it to a smooth `f * g` gives a
/// product rule for `g` with weight `f`. No substitution is applied.
pub fn kronrod_rule<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> (Estimate, Vec<(f64, f64)>)
where
    F: Fn(f64) -> f64,
{
    if !(a < b) {
        return (Estimate::ZERO, Vec::new());
    }
    let g = |x: f64| (f(x), 0.0);
    let (est, _, mut segments) = adaptive_segments(&g, a, b, spec);
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut rule = Vec::with_capacity(15 * segments.len());
    for seg in &segments {
        let centre = 0.5 * (seg.a + seg.b);
        let half = 0.5 * (seg.b - seg.a);
        for j in 0..7 {
            rule.push((centre - half * XGK[j], WGK[j] * half));
        }
        rule.push((centre, WGK[7] * half));
        for j in (0..7).rev() {
            rule.push((centre + half * XGK[j], WGK[j] * half));
        }
    }
    (est, rule)
}

/// Sums [`integrate_1d`] over consecutive pieces `points[i]..points[i+1]`.
/// The substitution in `spec` is applied to every finite piece.
pub fn integrate_pieces<F>(f: F, points: &[f64], spec: &QuadratureSpec) -> Estimate
where
    F: Fn(f64) -> f64,
{
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    let piece_spec = QuadratureSpec {
        abs_tol: spec.abs_tol / pieces,
        ..*spec
    };
    points
        .windows(2)
        .map(|w| integrate_1d(&f, w[0], w[1], &piece_spec))
        .sum()
}

/// Integral over the whole real line split at the given breakpoints.
pub fn integrate_line<F>(f: F, breakpoints: &[f64], spec: &QuadratureSpec) -> Estimate
where
    F: Fn(f64) -> f64,
{
    let mut points: Vec<f64> = breakpoints.iter().copied().filter(|p| p.is_finite()).collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    if points.is_empty() {
        points.push(0.0);
    }
    points.insert(0, f64::NEG_INFINITY);
    points.push(f64::INFINITY);
    integrate_pieces(f, &points, spec)
}

const MAX_TENSOR_DIM: usize = 4;

/// Iterated integral over a box. Inner error estimates are integrated along
/// the outer axes and added to the outer error, so the reported error bounds
/// the sum of per-axis errors.
///
/// Boxes of dimension above four fall back to plain Monte Carlo with
/// [`MCSpec::default`]; that path requires finite bounds.
pub fn integrate_nd<F>(f: F, bounds: &[(f64, f64)], spec: &QuadratureSpec) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    if bounds.is_empty() {
        return Err(invalid("integrate_nd needs at least one axis"));
    }
    if bounds.iter().any(|(a, b)| a == b) {
        return Ok(Estimate::ZERO);
    }
    if bounds.len() > MAX_TENSOR_DIM {
        let proposal = UniformBox::new(bounds.to_vec())?;
        let mc = mc_integrate(&f, &proposal, &MCSpec::default())?;
        return Ok(Estimate {
            value: mc.value,
            error: 3.0 * mc.std_error,
            evaluations: mc.samples,
            converged: true,
        });
    }
    Ok(nd_axis(&f, bounds, &[], spec))
}

fn nd_axis<F>(f: &F, bounds: &[(f64, f64)], prefix: &[f64], spec: &QuadratureSpec) -> Estimate
where
    F: Fn(&[f64]) -> f64,
{
    let axis = prefix.len();
    let (a, b) = bounds[axis];
    let last = axis + 1 == bounds.len();
    let evals = std::cell::Cell::new(0usize);
    let all_converged = std::cell::Cell::new(true);
    let g = |x: f64| {
        let mut point = Vec::with_capacity(bounds.len());
        point.extend_from_slice(prefix);
        point.push(x);
        if last {
            evals.set(evals.get() + 1);
            (f(&point), 0.0)
        } else {
            let inner = nd_axis(f, bounds, &point, spec);
            evals.set(evals.get() + inner.evaluations);
            if !inner.converged {
                all_converged.set(false);
            }
            (inner.value, inner.error)
        }
    };
    let (est, inner_err) = integrate_pair(&g, a, b, spec);
    Estimate {
        value: est.value,
        error: est.error + inner_err.abs(),
        evaluations: evals.get(),
        converged: est.converged && all_converged.get(),
    }
}

/// Proposal distribution for importance sampling.
pub trait Proposal: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]);
    fn density(&self, x: &[f64]) -> f64;
    fn describe(&self) -> String;
}

/// Uniform distribution on a finite box.
#[derive(Debug, Clone)]
pub struct UniformBox {
    bounds: Vec<(f64, f64)>,
    volume: f64,
}

impl UniformBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && b > a)) {
            return Err(invalid("uniform proposal needs a finite, non-degenerate box"));
        }
        let volume = bounds.iter().map(|(a, b)| b - a).product();
        Ok(UniformBox { bounds, volume })
    }
}

impl Proposal for UniformBox {
    fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        use rand::Rng;
        for (o, (a, b)) in out.iter_mut().zip(&self.bounds) {
            *o = a + (b - a) * rng.random::<f64>();
        }
    }

    fn density(&self, x: &[f64]) -> f64 {
        let inside = x
            .iter()
            .zip(&self.bounds)
            .all(|(v, (a, b))| v >= a && v <= b);
        if inside {
            1.0 / self.volume
        } else {
            0.0
        }
    }

    fn describe(&self) -> String {
        format!("uniform on {:?}", self.bounds)
    }
}

/// Isotropic normal proposal `N(mean, sd^2 I)`.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl Proposal for GaussianProposal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.mean) {
            let z: f64 = StandardNormal.sample(rng);
            *o = m + self.sd * z;
        }
    }

    fn density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let r2: f64 = x.iter().zip(&self.mean).map(|(a, b)| (a - b).powi(2)).sum();
        (-0.5 * r2 / (self.sd * self.sd)).exp()
            / (2.0 * std::f64::consts::PI * self.sd * self.sd).powf(0.5 * d)
    }

    fn describe(&self) -> String {
        format!("normal(mean={:?}, sd={})", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCSpec {
    pub sample_count: usize,
    pub seed: u64,
    /// Samples per RNG stream; stream `b` draws batch `b`.
    pub batch_size: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for MCSpec {
    fn default() -> Self {
        MCSpec {
            sample_count: 100_000,
            seed: 0,
            batch_size: 4096,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Clone, Copy)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    hits: usize,
}

impl Moments {
    fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return Moments { hits: self.hits + o.hits, ..o };
        }
        if o.n == 0 {
            return Moments { hits: self.hits + o.hits, ..self };
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        let mean = self.mean + delta * o.n as f64 / n as f64;
        let m2 = self.m2 + o.m2 + delta * delta * (self.n as f64) * (o.n as f64) / n as f64;
        Moments {
            n,
            mean,
            m2,
            hits: self.hits + o.hits,
        }
    }
}

/// Importance-sampled integral of `f` with draws from `proposal`.
///
/// Batch `b` uses ChaCha stream `b` of `spec.seed`, and batch moments are
/// merged in batch order, so the estimate is bit-identical for sequential and
/// parallel execution.
pub fn mc_integrate<F>(f: F, proposal: &dyn Proposal, spec: &MCSpec) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if spec.sample_count < 2 || spec.batch_size == 0 {
        return Err(invalid("Monte Carlo needs at least two samples"));
    }
    let batches = spec.sample_count.div_ceil(spec.batch_size);
    let dim = proposal.dim();
    let per_batch = par::map_range(spec.exec, batches, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(b as u64);
        let count = spec.batch_size.min(spec.sample_count - b * spec.batch_size);
        let mut x = vec![0.0; dim];
        let mut m = Moments {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            hits: 0,
        };
        for _ in 0..count {
            proposal.sample(&mut rng, &mut x);
            let q = proposal.density(&x);
            let w = if q > 0.0 && q.is_finite() {
                m.hits += 1;
                f(&x) / q
            } else {
                0.0
            };
            m.n += 1;
            let delta = w - m.mean;
            m.mean += delta / m.n as f64;
            m.m2 += delta * (w - m.mean);
        }
        m
    });
    let total = per_batch.into_iter().fold(
        Moments {
            n: 0,
            mean: 0.0,
            m2: 0.0,
            hits: 0,
        },
        Moments::merge,
    );
    if total.hits == 0 {
        return Err(Error::Quadrature(format!(
            "every sample fell where the proposal density underflows ({})",
            proposal.describe()
        )));
    }
    let var = (total.m2 / (total.n - 1) as f64).max(0.0);
    Ok(McEstimate {
        value: total.mean,
        std_error: (var / total.n as f64).sqrt(),
        samples: total.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn constant_on_unit_interval_is_exact() {
        let e = integrate_1d(|_| 1.0, 0.0, 1.0, &spec());
        assert!((e.value - 1.0).abs() <= 4.0 * f64::EPSILON);
        assert!(e.converged);
    }

    #[test]
    fn polynomials_up_to_degree_22_are_exact() {
        for k in 0..=22 {
            let e = integrate_1d(|x| x.powi(k), 0.0, 1.0, &spec());
            assert!((e.value - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "k = {k}");
        }
    }

    #[test]
    fn sqrt_substitution_handles_inverse_square_root() {
        let s = spec().with_substitution(Substitution::Sqrt(Endpoint::Lower));
        let e = integrate_1d(|x| x.powf(-0.5), 0.0, 1.0, &s);
        assert!((e.value - 2.0).abs() < 1e-10);
        let s = spec().with_substitution(Substitution::Sqrt(Endpoint::Upper));
        let e = integrate_1d(|x| (1.0 - x).powf(-0.5), 0.0, 1.0, &s);
        assert!((e.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn substitution_battery() {
        // (integrand, a, b, substitution, exact)
        type Case = (Box<dyn Fn(f64) -> f64>, f64, f64, Substitution, f64);
        let cases: Vec<Case> = vec![
            (Box::new(|x: f64| x.powf(-0.75)), 0.0, 1.0, Substitution::Power { exponent: 4.0, at: Endpoint::Lower }, 4.0),
            (Box::new(|x: f64| (x * (1.0 - x)).powf(-0.5)), 0.0, 1.0, Substitution::Sqrt(Endpoint::Both), std::f64::consts::PI),
            (Box::new(|x: f64| x.ln()), 0.0, 1.0, Substitution::Sqrt(Endpoint::Lower), -1.0),
            (Box::new(|x: f64| x.powf(-0.5) * (-x).exp()), 0.0, f64::INFINITY, Substitution::Sqrt(Endpoint::Lower), std::f64::consts::PI.sqrt()),
        ];
        for (i, (f, a, b, sub, exact)) in cases.into_iter().enumerate() {
            let e = integrate_1d(f, a, b, &spec().with_substitution(sub));
            assert!((e.value - exact).abs() < 1e-9, "case {i}: {} vs {exact}", e.value);
            assert!(e.error < 1e-8, "case {i} error {}", e.error);
        }
    }

    #[test]
    fn infinite_ranges() {
        let e = integrate_1d(|x| (-x * x).exp(), f64::NEG_INFINITY, f64::INFINITY, &spec());
        assert!((e.value - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let e = integrate_1d(|x| 1.0 / (1.0 + x * x), f64::NEG_INFINITY, f64::INFINITY, &spec());
        assert!((e.value - std::f64::consts::PI).abs() < 1e-9);
        let e = integrate_1d(|x| (-x).exp(), 2.0, f64::INFINITY, &spec());
        assert!((e.value - (-2.0f64).exp()).abs() < 1e-12);
        let e = integrate_1d(|x| x.exp(), f64::NEG_INFINITY, 0.0, &spec());
        assert!((e.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_and_empty_ranges() {
        assert_eq!(integrate_1d(|x| x, 1.0, 1.0, &spec()).value, 0.0);
        let e = integrate_1d(|x| x, 1.0, 0.0, &spec());
        assert!((e.value + 0.5).abs() < 1e-15);
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let s = spec().with_max_subdivisions(3);
        let e = integrate_1d(|x| (1.0 / x).sin(), 1e-6, 1.0, &s);
        assert!(!e.converged);
    }

    #[test]
    fn breakpoints_on_the_line() {
        let e = integrate_line(|x| (-(x - 5.0).powi(2)).exp(), &[5.0], &spec());
        assert!((e.value - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn tensor_gaussian_normalisation() {
        let b = [(f64::NEG_INFINITY, f64::INFINITY); 2];
        let e = integrate_nd(
            |x| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp() / (2.0 * std::f64::consts::PI),
            &b,
            &spec().with_tol(1e-9, 1e-13),
        )
        .unwrap();
        assert!((e.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_box_is_zero() {
        let e = integrate_nd(|_| 1.0, &[(0.0, 1.0), (2.0, 2.0)], &spec()).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn linearity() {
        let f = |x: f64| (3.0 * x).sin() + x * x;
        let g = |x: f64| (-x).exp();
        let s = spec();
        let ef = integrate_1d(f, 0.0, 2.0, &s);
        let eg = integrate_1d(g, 0.0, 2.0, &s);
        let combo = integrate_1d(|x| 2.5 * f(x) - 0.5 * g(x), 0.0, 2.0, &s);
        let tol = 2.5 * ef.error + 0.5 * eg.error + combo.error + 1e-14;
        assert!((combo.value - (2.5 * ef.value - 0.5 * eg.value)).abs() <= tol);
    }

    #[test]
    fn mc_constant_ratio_has_zero_variance() {
        let p = UniformBox::new(vec![(0.0, 2.0), (0.0, 1.0)]).unwrap();
        let spec = MCSpec {
            sample_count: 10_000,
            ..MCSpec::default()
        };
        // f = 4 * q, with q = 1/2 on the box.
        let e = mc_integrate(|_| 2.0, &p, &spec).unwrap();
        assert_eq!(e.value, 4.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn mc_is_deterministic_across_exec_modes() {
        let p = GaussianProposal {
            mean: vec![0.0; 3],
            sd: 1.5,
        };
        let f = |x: &[f64]| (-x.iter().map(|v| v * v).sum::<f64>()).exp();
        let seq = MCSpec {
            sample_count: 20_000,
            seed: 11,
            exec: Exec::Sequential,
            ..MCSpec::default()
        };
        let par = MCSpec {
            exec: Exec::Parallel,
            ..seq
        };
        let a = mc_integrate(f, &p, &seq).unwrap();
        let b = mc_integrate(f, &p, &par).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn mc_underflow_is_an_error() {
        struct Nowhere;
        impl Proposal for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn sample(&self, _: &mut ChaCha8Rng, out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn density(&self, _: &[f64]) -> f64 {
                0.0
            }
            fn describe(&self) -> String {
                "nowhere".into()
            }
        }
        assert!(mc_integrate(|_| 1.0, &Nowhere, &MCSpec::default()).is_err());
    }
}
