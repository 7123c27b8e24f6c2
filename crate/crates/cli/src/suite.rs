//! The acceptance suite run by `kp reproduce`.

use std::f64::consts::SQRT_2;
use std::time::{Duration, Instant};

use kp_core::bounds::{certify, estimate_matrix_constants, theorem_bound, CertificateStatus, MatrixSeries};
use kp_core::kernel::{random_chain_kernel, RandomInstance, RandomKernelSpec, StateSet};
use kp_core::par::Exec;
use kp_core::perturbation::semi::{theorem46_certify, uniform_slices, Engine, SemiProblem, SliceSampler};
use kp_core::perturbation::{
    kappa_certify, multi_atom_iterate_count, multi_atom_series_factor, series_batch, Atom, Density, Interval,
    KappaProblem, KappaSampler, PerturbingMeasure, SolverSpec,
};
use kp_core::quadrature::QuadratureSpec;
use kp_core::series::SeriesStatus;
use kp_core::spacetime::{
    check_3g, check_chapman_kolmogorov, eta_for_kappa, kappa_scaling_exponent, kato_certify, kato_modulus,
    left_inverse_residual, sample_3g, sample_3p, solve_h, weyl_half_derivative, Bump, Cauchy, Gaussian, KatoSpec,
    LeftInverseKernel, SpaceTimeKernel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "==")]
    Equal,
}

/// One measured quantity compared with its limit. Runtime checks carry no
/// value so that the written report stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub relation: Relation,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, relation: Relation, limit: f64) -> Self {
        let pass = match relation {
            Relation::AtMost => value <= limit,
            Relation::AtLeast => value >= limit,
            Relation::Equal => value == limit,
        };
        Check {
            name: name.into(),
            value: Some(value),
            relation,
            limit,
            pass,
        }
    }

    fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, Relation::AtMost, limit)
    }

    fn zero(name: impl Into<String>, count: usize) -> Self {
        Self::new(name, count as f64, Relation::Equal, 0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub steps: Vec<&'static str>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Multiplies every numerical tolerance; 0 is a negative control.
    pub tol_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 7, tol_scale: 1.0 }
    }
}

impl SuiteOptions {
    fn tol(&self, t: f64) -> f64 {
        t * self.tol_scale
    }
}

type StepFn = fn(&SuiteOptions) -> Result<Vec<Check>, CliError>;

pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub budget: Option<Duration>,
    pub steps: &'static [(&'static str, StepFn)],
}

pub const CRITERIA: &[Criterion] = &[
    Criterion {
        id: 1,
        name: "identities",
        budget: Some(Duration::from_secs(10)),
        steps: &[("identities", identities)],
    },
    Criterion {
        id: 2,
        name: "decay",
        budget: Some(Duration::from_secs(10)),
        steps: &[("decay", decay)],
    },
    Criterion {
        id: 3,
        name: "soundness",
        budget: None,
        steps: &[("soundness", soundness), ("equal-constants", equal_constants)],
    },
    Criterion {
        id: 4,
        name: "atomless",
        budget: Some(Duration::from_secs(120)),
        steps: &[("atomless", atomless)],
    },
    Criterion {
        id: 5,
        name: "atoms",
        budget: None,
        steps: &[
            ("single-atom", single_atom),
            ("multi-atom", multi_atom),
            ("iterate-counts", iterate_counts),
        ],
    },
    Criterion {
        id: 6,
        name: "sharpness",
        budget: None,
        steps: &[("sharpness", sharpness)],
    },
    Criterion {
        id: 7,
        name: "two-subordinator",
        budget: None,
        steps: &[("3g", three_g), ("kappa-scaling", kappa_scaling), ("kappa-eta", kappa_eta)],
    },
    Criterion {
        id: 8,
        name: "residuals",
        budget: Some(Duration::from_secs(120)),
        steps: &[
            ("chapman-kolmogorov", chapman_kolmogorov),
            ("weyl", weyl),
            ("left-inverse", left_inverse),
        ],
    },
    Criterion {
        id: 9,
        name: "kato",
        budget: None,
        steps: &[
            ("kato-lebesgue", kato_lebesgue),
            ("kato-monotone", kato_monotone),
            ("kato-certificate", kato_certificate),
        ],
    },
    Criterion {
        id: 10,
        name: "determinism",
        budget: None,
        steps: &[("determinism", determinism)],
    },
];

/// Whether `only` selects the step: it may name the step, the criterion or
/// the criterion number.
pub fn selected(only: Option<&str>, c: &Criterion, step: &str) -> bool {
    match only {
        None => true,
        Some(o) => o == step || o == c.name || o.parse::<u8>().ok() == Some(c.id),
    }
}

/// Runs the selected criteria in order; `report` sees each result with its
/// wall time as it completes.
pub fn run(
    opts: &SuiteOptions,
    only: Option<&str>,
    mut report: impl FnMut(&CriterionResult, Duration),
) -> Result<Vec<CriterionResult>, CliError> {
    let mut out = Vec::new();
    for c in CRITERIA {
        let steps: Vec<_> = c.steps.iter().filter(|(name, _)| selected(only, c, name)).collect();
        if steps.is_empty() {
            continue;
        }
        let start = Instant::now();
        let mut checks = Vec::new();
        for (_, f) in &steps {
            checks.extend(f(opts)?);
        }
        let elapsed = start.elapsed();
        if let (Some(budget), true) = (c.budget, steps.len() == c.steps.len()) {
            checks.push(Check {
                name: format!("runtime < {} s", budget.as_secs()),
                value: None,
                relation: Relation::AtMost,
                limit: budget.as_secs_f64(),
                pass: elapsed <= budget,
            });
        }
        let result = CriterionResult {
            id: c.id,
            name: c.name,
            steps: steps.iter().map(|(n, _)| *n).collect(),
            pass: checks.iter().all(|k| k.pass),
            checks,
        };
        report(&result, elapsed);
        out.push(result);
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("--only {:?} matches no check", only.unwrap_or(""))));
    }
    Ok(out)
}

const CORPUS: usize = 1000;

fn corpus(seed: u64) -> Result<Vec<RandomInstance>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..CORPUS)
        .map(|_| {
            let n = rng.random_range(1..=8);
            let spec = RandomKernelSpec {
                n,
                blocks: rng.random_range(1..=n),
                density: rng.random_range(0.1..0.8),
                numerator_max: 4,
                denominator_bits: 4,
            };
            Ok(random_chain_kernel(&mut rng, &spec)?)
        })
        .collect()
}

fn identities(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let (mut power, mut slice, mut cases) = (0, 0, 0);
    for inst in corpus(o.seed)? {
        let k = &inst.kernel;
        for m in 1..=4 {
            let mut prev = StateSet::empty(k.n());
            for set in inst.chain.sets() {
                power += usize::from(!k.verify_power_identity(set, m, None)?);
                slice += usize::from(!k.verify_slice_identity(&prev, set, m)?);
                prev = set.clone();
                cases += 1;
            }
        }
    }
    Ok(vec![
        Check::new("identity cases", cases as f64, Relation::AtLeast, CORPUS as f64),
        Check::zero("power identity failures", power),
        Check::zero("slice identity failures", slice),
    ])
}

fn decay(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let (mut checked, mut violations) = (0, 0);
    for inst in corpus(o.seed)? {
        let k = &inst.kernel;
        let f = vec![1.0; k.n()];
        let s = k.neumann_series(&f, 10_000, 1e-15)?;
        if !s.iter().all(|r| r.status == SeriesStatus::Converged) {
            continue;
        }
        let c = s.iter().map(|r| r.value + r.tail_estimate).fold(1.0f64, f64::max) * (1.0 + 1e-12);
        checked += 1;
        violations += usize::from(!k.check_geometric_decay(&f, inst.chain.top(), c, 40)?);
    }
    Ok(vec![
        Check::new("instances with a bounded series", checked as f64, Relation::AtLeast, 1.0),
        Check::zero("decay or c^2 violations", violations),
    ])
}

fn soundness(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let (mut certified, mut bad) = (0, 0);
    for inst in corpus(o.seed)? {
        let f = vec![1.0; inst.kernel.n()];
        let constants = estimate_matrix_constants(&inst.kernel, &f, &inst.chain)?;
        if constants.eta >= 1.0 {
            continue;
        }
        let series = MatrixSeries::new(&inst.kernel, &f, inst.chain)?;
        for cert in certify(&series, &constants)? {
            certified += 1;
            bad += usize::from(cert.status != CertificateStatus::Valid);
        }
    }
    Ok(vec![
        Check::new("certificates with eta < 1", certified as f64, Relation::AtLeast, 1.0),
        Check::zero("non-VALID certificates", bad),
    ])
}

fn equal_constants(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let eta = i as f64 / 100.0;
        let j = 1 + i % 12;
        let expected = (1.0 - eta).powi(-(j as i32));
        worst = worst.max((theorem_bound(eta, eta, j)? / expected - 1.0).abs());
    }
    Ok(vec![Check::at_most("theorem_bound(eta, eta, j) vs (1-eta)^-j", worst, o.tol(1e-12))])
}

fn exponential_error(kernel: &dyn SpaceTimeKernel, lambda: f64) -> Result<f64, CliError> {
    let mu = PerturbingMeasure::lebesgue(lambda)?;
    let pts: Vec<(f64, f64)> = (0..20).map(|i| (0.0, -2.0 + 4.0 * i as f64 / 19.0)).collect();
    let vals = series_batch(kernel, &mu, 1.0, 0.2, &pts, &SolverSpec::default())?;
    Ok(vals
        .iter()
        .map(|v| {
            if v.series.status == SeriesStatus::Converged {
                (v.ratio() / lambda.exp() - 1.0).abs()
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max))
}

fn atomless(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let g = Gaussian { dim: 1 };
    [0.25, 1.0]
        .iter()
        .map(|&l| {
            Ok(Check::at_most(
                format!("gaussian lambda = {l}: relative error vs e^lambda"),
                exponential_error(&g, l)?,
                o.tol(1e-3),
            ))
        })
        .collect()
}

fn single_atom(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let (eta, u0) = (0.5, 0.5);
    let g = Gaussian { dim: 1 };
    let mu = PerturbingMeasure::new(Density::Zero, vec![Atom { u: u0, eta }])?;
    let spec = SolverSpec::default();
    let pts = [(0.0, 0.0), (0.2, 1.0), (0.49, -0.5), (0.5, 0.3), (0.7, 0.3)];
    let vals = series_batch(&g, &mu, 1.0, 0.1, &pts, &spec)?;
    let (mut factor, mut second) = (0.0f64, 0.0f64);
    for v in &vals {
        let expected = if v.s < u0 { 1.0 + eta } else { 1.0 };
        factor = factor.max((v.ratio() / expected - 1.0).abs());
        second = second.max(v.terms.get(2).copied().unwrap_or(0.0) / v.p);
    }
    Ok(vec![
        Check::at_most("single atom: relative error vs 1 + eta", factor, o.tol(10.0 * spec.quad.rel_tol)),
        Check::at_most("single atom: p_2 / p", second, o.tol(1e-8)),
    ])
}

fn atom_chain_solver() -> SolverSpec {
    SolverSpec {
        max_terms: 200,
        tail_tol: 1e-12,
        ..SolverSpec::default()
    }
}

fn multi_atom(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let g = Gaussian { dim: 1 };
    let eta = 0.5;
    let atoms: Vec<Atom> = [0.1, 0.4, 0.8].iter().map(|&u| Atom { u, eta }).collect();
    let mu = PerturbingMeasure::new(Density::Zero, atoms.clone())?;
    let problem = SemiProblem {
        kernel: &g,
        mu: &mu,
        y: 0.0,
        intervals: vec![Interval::left_closed(0.0, 1.0)],
        engine: Engine::AtomChain,
        solver: atom_chain_solver(),
    };
    let pts: Vec<(f64, f64)> = [0.0, 0.1, 0.25, 0.4, 0.6, 0.8, 0.9].iter().map(|&s| (s, 0.5 - s)).collect();
    let mut worst = 0.0f64;
    for v in problem.series_at(&pts)? {
        let l = atoms.iter().filter(|a| a.u >= v.s).count() as u32;
        worst = worst.max((v.ratio() / multi_atom_series_factor(eta, l)? - 1.0).abs());
    }
    Ok(vec![Check::at_most("three atoms: relative error vs (1-eta)^-L(s)", worst, o.tol(1e-3))])
}

fn iterate_counts(_: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    fn chains(l: u64, n: u64, start: u64) -> u64 {
        if n == 0 {
            return 1;
        }
        (start..l).map(|i| chains(l, n - 1, i)).sum()
    }
    let mut bad = 0;
    for l in 0..=6 {
        for n in 0..=5 {
            bad += usize::from(multi_atom_iterate_count(l, n) != Some(chains(l, n, 0)));
        }
    }
    Ok(vec![Check::zero("iterate counts differing from enumeration", bad)])
}

fn sharpness(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let g = Gaussian { dim: 1 };
    let (eta, h, t) = (0.5, 0.25, 0.75);
    let intervals = uniform_slices(0.0, t, h)?;
    let atoms: Vec<Atom> = intervals.iter().rev().map(|iv| Atom { u: iv.lower(), eta }).collect();
    let mu = PerturbingMeasure::new(Density::Zero, atoms)?;
    let problem = SemiProblem {
        kernel: &g,
        mu: &mu,
        y: 0.0,
        intervals,
        engine: Engine::AtomChain,
        solver: atom_chain_solver(),
    };
    let sampler = SliceSampler {
        per_slice: 3,
        seed: o.seed,
        ..SliceSampler::default()
    };
    let report = theorem46_certify(&problem, Some(eta), &sampler)?;
    let mut checks = Vec::new();
    for (j, cert) in report.certificates.iter().enumerate() {
        let bound = 2f64.powi(j as i32 + 1);
        checks.push(Check::at_most(
            format!("slice {}: relative gap to 2^{}", j + 1, j + 1),
            (cert.measured_ratio / bound - 1.0).abs(),
            o.tol(1e-3),
        ));
    }
    let valid = report.certificates.iter().filter(|c| c.status == CertificateStatus::Valid).count();
    checks.push(Check::new("VALID slice certificates", valid as f64, Relation::Equal, 3.0));
    Ok(checks)
}

fn three_g(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let r = sample_3g(100_000, o.seed, Exec::Parallel)?;
    let mid = check_3g(0.0, 0.0, 0.5, 0.5, 1.0, 1.0)?.ratio;
    Ok(vec![
        Check::zero("3G violations in 1e5 tuples", r.violations),
        Check::new("3G minimum ratio", r.min_ratio, Relation::AtLeast, 1.0 - o.tol(1e-12)),
        Check::at_most("3G maximum ratio", r.max_ratio, 2.0 * SQRT_2 * (1.0 + o.tol(1e-12))),
        Check::at_most("3G midpoint |ratio - 2 sqrt 2|", (mid - 2.0 * SQRT_2).abs(), o.tol(1e-9)),
    ])
}

fn kappa_scaling(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let q = QuadratureSpec::default().with_tol(1e-11, 1e-15);
    [0.1, 0.25]
        .iter()
        .map(|&p| {
            let e = kappa_scaling_exponent(p, 0.01, &q)?;
            Ok(Check::at_most(
                format!("p = {p}: relative error of the h exponent vs 1/2 - p"),
                (e / (0.5 - p) - 1.0).abs(),
                o.tol(0.02),
            ))
        })
        .collect()
}

fn kappa_eta(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let (c, p) = (0.05, 0.25);
    let h = solve_h(c, p, 0.5)?;
    let problem = KappaProblem { c, p, t: 0.25, y: 0.25, h };
    let sampler = KappaSampler {
        per_slice: 10,
        seed: o.seed,
    };
    let r = kappa_certify(&problem, &sampler, &SolverSpec::default())?;
    let bound = eta_for_kappa(c, p, h)?;
    Ok(vec![
        Check::at_most("measured eta / eta_for_kappa", r.measured.eta / bound, 1.0),
        Check::at_most("measured beta / eta_for_kappa", r.measured.beta / bound, 1.0),
    ])
}

fn chapman_kolmogorov(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let quad = QuadratureSpec::default().with_tol(1e-10, 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let triples: Vec<[f64; 5]> = (0..50)
        .map(|_| {
            let s = rng.random_range(-1.0..1.0);
            let u = s + rng.random_range(0.05..1.0);
            let t = u + rng.random_range(0.05..1.0);
            [s, rng.random_range(-2.0..2.0), u, t, rng.random_range(-2.0..2.0)]
        })
        .collect();
    let worst = |k: &dyn SpaceTimeKernel| -> Result<f64, CliError> {
        triples.iter().try_fold(0.0f64, |m, v| {
            let r = check_chapman_kolmogorov(k, v[0], &[v[1]], v[2], v[3], &[v[4]], &quad)?;
            Ok(if r.integral.converged { m.max(r.residual) } else { f64::INFINITY })
        })
    };
    Ok(vec![
        Check::at_most("gaussian CK residual on 50 triples", worst(&Gaussian { dim: 1 })?, o.tol(1e-6)),
        Check::at_most("cauchy CK residual on 50 triples", worst(&Cauchy::new(1)?)?, o.tol(1e-5)),
    ])
}

fn weyl(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let spec = QuadratureSpec::default();
    let mut worst = 0.0f64;
    for i in 0..=50 {
        let x = 0.1 * i as f64;
        let d = weyl_half_derivative(|v| -(-v).exp(), x, &spec)?;
        worst = worst.max((d.value + (-x).exp()).abs());
    }
    Ok(vec![Check::at_most("half-derivative of e^-x on [0, 5]", worst, o.tol(1e-6))])
}

fn left_inverse(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let quad = QuadratureSpec::default().with_tol(1e-7, 1e-11);
    let tol = o.tol(5e-3);
    let r = left_inverse_residual(LeftInverseKernel::Kappa, &Bump::default(), 0.0, 0.0, tol, &quad, &SolverSpec::default())?;
    let value = if r.status == CertificateStatus::Inconclusive { f64::INFINITY } else { r.residual };
    Ok(vec![Check::at_most("kappa left-inverse residual", value, tol)])
}

fn kato_lebesgue(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let mu = PerturbingMeasure::lebesgue(1.0)?;
    let mut checks = Vec::new();
    for d in [1usize, 2] {
        let k = Cauchy::new(d)?;
        let mut worst = 0.0f64;
        for &h in &[0.1, 0.5, 1.0] {
            worst = worst.max((kato_modulus(&k, &mu, h, &KatoSpec::default())?.value - 2.0 * h).abs());
        }
        checks.push(Check::at_most(format!("d = {d}: |k(h) - 2h|"), worst, o.tol(1e-4)));
    }
    Ok(checks)
}

fn kato_monotone(_: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let k = Cauchy::new(2)?;
    let mu = PerturbingMeasure::new(Density::Power { eps: 0.5 }, Vec::new())?;
    let spec = KatoSpec {
        dt_fractions: vec![0.5, 1.0],
        offsets: vec![0.0, 0.5, 1.0],
        quad: QuadratureSpec::default().with_tol(1e-8, 1e-12),
        ..KatoSpec::default()
    };
    let vals: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|&h| Ok(kato_modulus(&k, &mu, h, &spec)?.value))
        .collect::<Result<_, CliError>>()?;
    let increases = vals.windows(2).filter(|w| !(w[1] < w[0])).count();
    Ok(vec![Check::zero("d = 2, |z|^-1/2: increases of k(h) along h = 1, 1/2, 1/4, 1/8", increases)])
}

fn kato_certificate(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let k = Cauchy::new(1)?;
    let mu = PerturbingMeasure::new(Density::Power { eps: 0.5 }, Vec::new())?;
    let c = sample_3p(&k, 100_000, o.seed, Exec::Parallel)?.max_3p;
    let sampler = SliceSampler {
        per_slice: 2,
        seed: o.seed,
        ..SliceSampler::default()
    };
    let solver = SolverSpec::default().with_quad_tol(1e-7);
    let cert = kato_certify(&k, &mu, c, 0.0025, 0.0125, 0.0, 5, &sampler, &KatoSpec::default(), &solver)?;
    let valid = cert.points.iter().filter(|p| p.status == CertificateStatus::Valid).count();
    Ok(vec![
        Check::new("eta = c k(h)", cert.eta, Relation::AtMost, 1.0),
        Check::new("sampled points", cert.points.len() as f64, Relation::AtLeast, 10.0),
        Check::new("VALID points", valid as f64, Relation::Equal, cert.points.len() as f64),
    ])
}

/// Seeded samplers run sequentially and in parallel must serialize to the
/// same bytes.
fn determinism(o: &SuiteOptions) -> Result<Vec<Check>, CliError> {
    let run = |exec: Exec| -> Result<String, CliError> {
        let g = sample_3g(20_000, o.seed, exec)?;
        let p = sample_3p(&Cauchy::new(1)?, 20_000, o.seed, exec)?;
        let docs: Vec<_> = corpus(o.seed)?.iter().take(50).map(|i| i.kernel.rows()).collect();
        crate::output::json_string(&(g, p, docs))
    };
    let a = run(Exec::Sequential)?;
    let b = run(Exec::Parallel)?;
    let c = run(Exec::Parallel)?;
    let differing = usize::from(a != b) + usize::from(b != c);
    Ok(vec![Check::zero("differing serializations across reruns", differing)])
}
