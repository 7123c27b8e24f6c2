//! Subcommand drivers. Each returns the process exit code.

use kp_core::bounds::{certify, estimate_matrix_constants, BoundCertificate, CertificateStatus, MatrixSeries};
use kp_core::kernel::AbsorbingChain;
use kp_core::par::Exec;
use kp_core::perturbation::atoms::AtomChainOperator;
use kp_core::perturbation::semi::{theorem46_certify, Engine, SemiProblem};
use kp_core::perturbation::{kappa_certify, series_batch, Density, KappaProblem, KappaSampler, PerturbedValue};
use kp_core::quadrature::QuadratureSpec;
use kp_core::series::SeriesStatus;
use kp_core::spacetime::{
    check_3g, kato_certify, kato_modulus, left_inverse_residual, sample_3g, sample_3p, solve_h, weyl_half_derivative, Bump,
    KatoSpec, LeftInverseKernel, ThreeGSample,
};
use serde::Serialize;

use crate::config::{RunConfig, Slicing};
use crate::output::{csv_string, Output};
use crate::{exit, CliError};

pub fn series_status(s: SeriesStatus) -> &'static str {
    match s {
        SeriesStatus::Converged => "converged",
        SeriesStatus::Truncated => "truncated",
        SeriesStatus::Diverging => "diverging",
    }
}

/// Exit code of a batch of certificate statuses.
pub fn status_code(statuses: impl IntoIterator<Item = CertificateStatus>) -> u8 {
    let (mut invalid, mut open) = (false, false);
    for s in statuses {
        match s {
            CertificateStatus::Valid => {}
            CertificateStatus::Invalid => invalid = true,
            CertificateStatus::Inconclusive | CertificateStatus::HypothesisFail => open = true,
        }
    }
    if invalid {
        exit::INVALID
    } else if open {
        exit::OPEN
    } else {
        exit::OK
    }
}

/// Writes `name` under `--out`, or prints it when there is no output directory.
fn emit<T: Serialize>(out: &Output, name: &str, rows: &[T]) -> Result<(), CliError> {
    if out.dir.is_some() {
        out.csv(name, rows)
    } else {
        print!("{}", csv_string(rows)?);
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesRow {
    pub s: f64,
    pub x: f64,
    pub p: f64,
    pub p_mu: f64,
    pub ratio: f64,
    pub truncation_index: usize,
    pub status: &'static str,
}

impl From<&PerturbedValue> for SeriesRow {
    fn from(v: &PerturbedValue) -> Self {
        SeriesRow {
            s: v.s,
            x: v.x,
            p: v.p,
            p_mu: v.series.value,
            ratio: v.ratio(),
            truncation_index: v.series.truncation_index,
            status: series_status(v.series.status),
        }
    }
}

fn evaluate(cfg: &RunConfig) -> Result<Vec<PerturbedValue>, CliError> {
    let kernel = cfg.kernel()?;
    let mu = cfg.measure()?;
    let pts = cfg.points()?;
    let (t, y) = (cfg.target.t, cfg.target.y);
    let solver = cfg.solver();
    Ok(match cfg.engine {
        Engine::Measure => series_batch(&*kernel, &mu, t, y, &pts, &solver)?,
        Engine::AtomChain => {
            if mu.has_density() {
                return Err(CliError::Config("the atom-chain engine takes atoms only".into()));
            }
            AtomChainOperator::new(&*kernel, mu.atoms(), t, y, &pts, &solver)?.evaluate(&pts)?
        }
    })
}

pub fn cmd_series(cfg: &RunConfig, out: &Output) -> Result<u8, CliError> {
    let rows: Vec<SeriesRow> = evaluate(cfg)?.iter().map(SeriesRow::from).collect();
    emit(out, "series.csv", &rows)?;
    let open = rows.iter().filter(|r| r.status != "converged").count();
    if out.dir.is_some() {
        let max = rows.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
        println!("series: {} points, max ratio {max:.6}", rows.len());
    }
    if open > 0 {
        eprintln!("warning: {open} points did not converge");
    }
    Ok(exit::OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRow {
    pub slice: usize,
    pub eta: f64,
    pub beta: f64,
    pub bound: Option<f64>,
    pub measured_ratio: f64,
    pub margin: Option<f64>,
    pub status: &'static str,
    pub samples: usize,
    pub max_terms: usize,
    pub series_status: &'static str,
}

impl From<&BoundCertificate> for CertificateRow {
    fn from(c: &BoundCertificate) -> Self {
        CertificateRow {
            slice: c.slice,
            eta: c.eta,
            beta: c.beta,
            bound: c.bound,
            measured_ratio: c.measured_ratio,
            margin: c.margin,
            status: c.status.as_str(),
            samples: c.samples,
            max_terms: c.truncation.max_terms,
            series_status: series_status(c.truncation.status),
        }
    }
}

/// Certificates for the discrete, diagonal-level (κ) or time-sliced problem
/// described by `cfg`.
pub fn certificates(cfg: &RunConfig, seed: u64) -> Result<Vec<BoundCertificate>, CliError> {
    if let Some(doc) = cfg.discrete()? {
        let kernel = doc.kernel()?;
        let f = doc.control()?;
        let chain = AbsorbingChain::new(&kernel, doc.chain_sets()?)?;
        let constants = estimate_matrix_constants(&kernel, &f, &chain)?;
        let series = MatrixSeries::new(&kernel, &f, chain)?;
        return Ok(certify(&series, &constants)?);
    }
    if let Some(Slicing::DiagonalLevel { h, eta }) = &cfg.slicing {
        if cfg.kernel.name.trim() != "kappa" {
            return Err(CliError::Config("diagonal-level slicing is only defined for kappa".into()));
        }
        let (c, p) = cfg.q0()?;
        let h = match (h, eta) {
            (Some(h), None) => *h,
            (None, Some(eta)) => solve_h(c, p, *eta)?,
            _ => return Err(CliError::Config("diagonal-level slicing needs exactly one of h and eta".into())),
        };
        let problem = KappaProblem {
            c,
            p,
            t: cfg.target.t,
            y: cfg.target.y,
            h,
        };
        let sampler = KappaSampler {
            per_slice: cfg.sampler.per_slice,
            seed: cfg.sampler.seed.unwrap_or(seed),
        };
        return Ok(kappa_certify(&problem, &sampler, &cfg.solver())?.certificates);
    }
    let kernel = cfg.kernel()?;
    let mu = cfg.measure()?;
    let problem = SemiProblem {
        kernel: &*kernel,
        mu: &mu,
        y: cfg.target.y,
        intervals: cfg.intervals()?,
        engine: cfg.engine,
        solver: cfg.solver(),
    };
    Ok(theorem46_certify(&problem, cfg.eta, &cfg.slice_sampler(seed))?.certificates)
}

pub fn cmd_certify(cfg: &RunConfig, seed: u64, out: &Output) -> Result<u8, CliError> {
    let certs = certificates(cfg, seed)?;
    let rows: Vec<CertificateRow> = certs.iter().map(CertificateRow::from).collect();
    out.json("certificates.json", &certs)?;
    emit(out, "certificates.csv", &rows)?;
    if out.dir.is_some() {
        for r in &rows {
            println!("slice {}: {} (measured {:.6}, bound {:?})", r.slice, r.status, r.measured_ratio, r.bound);
        }
    }
    Ok(status_code(certs.iter().map(|c| c.status)))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub s: f64,
    pub x: f64,
    pub measured: f64,
    pub oracle: f64,
    pub rel_error: f64,
    pub pass: bool,
}

/// Closed-form `p^mu / p` for constant densities on Gaussian or Cauchy
/// kernels, and for pure atoms on Chapman-Kolmogorov kernels.
pub fn oracle_ratio(cfg: &RunConfig, s: f64) -> Result<f64, CliError> {
    let spec = cfg.measure.clone().unwrap_or(kp_core::perturbation::MeasureSpec {
        density: Density::Zero,
        atoms: Vec::new(),
        support: None,
    });
    let t = cfg.target.t;
    let (a, b) = match spec.support {
        Some([a, b]) => (a, b),
        None => (f64::NEG_INFINITY, f64::INFINITY),
    };
    match (&spec.density, spec.atoms.is_empty()) {
        (Density::Const { lambda }, true) => {
            let name = cfg.kernel.name.trim();
            if name != "gaussian" && name != "cauchy" {
                return Err(CliError::Config("the constant-density oracle covers gaussian and cauchy".into()));
            }
            Ok((lambda * (t.min(b) - s.max(a)).max(0.0)).exp())
        }
        (Density::Zero, _) => {
            if !cfg.kernel()?.chapman_kolmogorov() {
                return Err(CliError::Config("the atom oracle needs a Chapman-Kolmogorov kernel".into()));
            }
            let inside = |u: f64| u >= a && u <= b && u < t;
            Ok(spec
                .atoms
                .iter()
                .map(|at| match cfg.engine {
                    Engine::Measure if at.u > s && inside(at.u) => 1.0 + at.eta,
                    Engine::AtomChain if at.u >= s && inside(at.u) => 1.0 / (1.0 - at.eta),
                    _ => 1.0,
                })
                .product())
        }
        _ => Err(CliError::Config("no closed-form oracle for this measure".into())),
    }
}

pub fn cmd_oracle_check(cfg: &RunConfig, out: &Output) -> Result<u8, CliError> {
    let tol = cfg.oracle_tol.unwrap_or(10.0 * cfg.quad().rel_tol);
    let vals = evaluate(cfg)?;
    let rows: Vec<OracleRow> = vals
        .iter()
        .map(|v| {
            let oracle = oracle_ratio(cfg, v.s)?;
            let rel_error = (v.ratio() / oracle - 1.0).abs();
            Ok(OracleRow {
                s: v.s,
                x: v.x,
                measured: v.ratio(),
                oracle,
                rel_error,
                pass: rel_error <= tol,
            })
        })
        .collect::<Result<_, CliError>>()?;
    emit(out, "oracle.csv", &rows)?;
    let worst = rows.iter().map(|r| r.rel_error).fold(0.0f64, f64::max);
    eprintln!("oracle-check: {} points, worst relative error {worst:.3e} (tolerance {tol:.1e})", rows.len());
    Ok(if rows.iter().all(|r| r.pass) { exit::OK } else { exit::INVALID })
}

#[derive(Debug, Clone, Serialize)]
pub struct KatoRow {
    pub h: f64,
    pub k_h: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct KatoPointRow {
    pub s: f64,
    pub x: f64,
    pub ratio: f64,
    pub bound: f64,
    pub status: &'static str,
}

#[derive(Debug, Clone, Serialize)]
struct KatoSummary {
    h: f64,
    k_h: f64,
    c: f64,
    eta: f64,
    certificates: Vec<BoundCertificate>,
}

pub fn cmd_kato(cfg: &RunConfig, seed: u64, out: &Output) -> Result<u8, CliError> {
    let kato = cfg
        .kato
        .clone()
        .ok_or_else(|| CliError::Config("kato needs a \"kato\" section".into()))?;
    let kernel = cfg.kernel()?;
    let mu = cfg.measure()?;
    let d = KatoSpec::default();
    let spec = KatoSpec {
        dt_fractions: kato.dt_fractions.clone().unwrap_or(d.dt_fractions),
        offsets: kato.offsets.clone().unwrap_or(d.offsets),
        quad: match cfg.quad_rel_tol {
            Some(_) => cfg.quad(),
            None => d.quad,
        },
        exec: d.exec,
    };
    let rows: Vec<KatoRow> = kato
        .h
        .iter()
        .map(|&h| {
            let r = kato_modulus(&*kernel, &mu, h, &spec)?;
            Ok(KatoRow {
                h,
                k_h: r.value,
                samples: r.samples,
            })
        })
        .collect::<Result<_, CliError>>()?;
    emit(out, "kato.csv", &rows)?;
    let Some(slices) = kato.slices else {
        return Ok(exit::OK);
    };
    let h = *kato
        .h
        .iter()
        .min_by(|a, b| a.total_cmp(b))
        .ok_or_else(|| CliError::Config("kato.h is empty".into()))?;
    let c = match kato.c {
        Some(c) => c,
        None => sample_3p(&*kernel, kato.three_p_samples, seed, Exec::Parallel)?.max_3p,
    };
    let cert = kato_certify(
        &*kernel,
        &mu,
        c,
        h,
        cfg.target.t,
        cfg.target.y,
        slices,
        &cfg.slice_sampler(seed),
        &spec,
        &cfg.solver(),
    )?;
    let points: Vec<KatoPointRow> = cert
        .points
        .iter()
        .map(|p| KatoPointRow {
            s: p.s,
            x: p.x,
            ratio: p.ratio,
            bound: p.bound,
            status: p.status.as_str(),
        })
        .collect();
    out.json(
        "kato.json",
        &KatoSummary {
            h,
            k_h: cert.k_h,
            c: cert.c,
            eta: cert.eta,
            certificates: cert.slices.certificates.clone(),
        },
    )?;
    emit(out, "kato_points.csv", &points)?;
    eprintln!("kato: h = {h}, k(h) = {:.6}, c = {:.6}, eta = {:.6}", cert.k_h, cert.c, cert.eta);
    Ok(status_code(cert.points.iter().map(|p| p.status)))
}

#[derive(Debug, Clone, Serialize)]
struct ThreeGReport {
    #[serde(flatten)]
    sample: ThreeGSample,
    seed: u64,
    midpoint_ratio: f64,
}

pub fn cmd_3g(samples: usize, seed: u64, out: &Output) -> Result<u8, CliError> {
    let sample = sample_3g(samples, seed, Exec::Parallel)?;
    let report = ThreeGReport {
        sample,
        seed,
        midpoint_ratio: check_3g(0.0, 0.0, 0.5, 0.5, 1.0, 1.0)?.ratio,
    };
    if out.dir.is_some() {
        out.json("3g.json", &report)?;
    } else {
        print!("{}", crate::output::json_string(&report)?);
    }
    Ok(if sample.violations == 0 { exit::OK } else { exit::INVALID })
}

#[derive(Debug, Clone, Serialize)]
pub struct WeylRow {
    pub x: f64,
    pub half_derivative: f64,
    pub expected: f64,
    pub abs_error: f64,
}

/// Half-derivative of `e^{-x}` on `[0, x_max]` and the left-inverse residual
/// of `κ` (or of `κ̃` when `perturbed = Some((c, p))`) at `(s, x)`.
pub fn cmd_weyl(
    x_max: f64,
    points: usize,
    left_inverse: (f64, f64),
    perturbed: Option<(f64, f64)>,
    tolerance: f64,
    out: &Output,
) -> Result<u8, CliError> {
    if points < 2 || !(x_max > 0.0) {
        return Err(CliError::Config("need at least two points and x_max > 0".into()));
    }
    let quad = QuadratureSpec::default();
    let rows: Vec<WeylRow> = (0..points)
        .map(|i| {
            let x = x_max * i as f64 / (points - 1) as f64;
            let d = weyl_half_derivative(|v| -(-v).exp(), x, &quad)?;
            let expected = -(-x).exp();
            Ok(WeylRow {
                x,
                half_derivative: d.value,
                expected,
                abs_error: (d.value - expected).abs(),
            })
        })
        .collect::<Result<_, CliError>>()?;
    emit(out, "weyl.csv", &rows)?;
    let kernel = match perturbed {
        None => LeftInverseKernel::Kappa,
        Some((c, p)) => LeftInverseKernel::Perturbed { c, p },
    };
    let quad = QuadratureSpec::default().with_tol(1e-7, 1e-11);
    let solver = kp_core::perturbation::SolverSpec::default();
    let r = left_inverse_residual(kernel, &Bump::default(), left_inverse.0, left_inverse.1, tolerance, &quad, &solver)?;
    out.json("left_inverse.json", &r)?;
    let worst = rows.iter().map(|r| r.abs_error).fold(0.0f64, f64::max);
    eprintln!(
        "weyl: worst error {worst:.3e}; left-inverse residual {:.3e} ({})",
        r.residual,
        r.status.as_str()
    );
    let weyl_ok = worst <= 1e-6;
    Ok(match (weyl_ok, r.status) {
        (false, _) | (_, CertificateStatus::Invalid) => exit::INVALID,
        (true, CertificateStatus::Valid) => exit::OK,
        _ => exit::OPEN,
    })
}
