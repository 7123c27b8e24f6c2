//! Deterministic sampling of boxes: Halton points and a sup estimator built on
//! them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::{self, Exec};

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut factor = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % b) as f64 * factor;
        index /= b;
        factor *= inv;
    }
    out
}

/// Halton sequence in `[0,1)^dim`, optionally rotated by a seeded shift
/// (Cranley-Patterson) so distinct seeds give distinct point sets.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dim: usize, seed: Option<u64>) -> Result<Self> {
        if dim == 0 || dim > PRIMES.len() {
            return Err(invalid(format!("Halton dimension must be in 1..={}", PRIMES.len())));
        }
        let shift = match seed {
            None => vec![0.0; dim],
            Some(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                (0..dim).map(|_| rng.random::<f64>()).collect()
            }
        };
        Ok(Halton { shift })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// Point number `index` (the origin, index 0, is skipped).
    pub fn point(&self, index: u64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let v = radical_inverse(index + 1, PRIMES[k]) + self.shift[k];
            *o = v - v.floor();
        }
    }
}

/// Axis-aligned box used as a sampling domain. Bounds are treated as open:
/// samples are kept a relative `margin` away from each face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SampleBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("box bounds must have equal, non-zero length"));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(invalid("box bounds must be finite with lower <= upper"));
        }
        Ok(SampleBox { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn map(&self, unit: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = self.lower[k] + (self.upper[k] - self.lower[k]) * unit[k];
        }
    }

    fn clamp(&self, x: &mut [f64], margin: f64) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            let w = hi - lo;
            let (a, b) = (lo + margin * w, hi - margin * w);
            *v = v.clamp(a, b.max(a));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupSpec {
    pub samples: usize,
    pub seed: u64,
    /// Number of best samples refined by pattern search.
    pub refine_starts: usize,
    pub refine_iterations: usize,
    /// Relative distance kept from the faces of the box.
    pub margin: f64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for SupSpec {
    fn default() -> Self {
        SupSpec {
            samples: 2048,
            seed: 0,
            refine_starts: 4,
            refine_iterations: 60,
            margin: 1e-9,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupResult {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub evaluations: usize,
}

/// Lower estimate of `sup f` over a box: Halton sampling, extra caller-given
/// seed points, then compass search from the best few points.
///
/// Non-finite values of `f` are reported as-is if they are `+inf`, and
/// skipped if NaN.
pub fn estimate_sup<F>(f: F, domain: &SampleBox, extra: &[Vec<f64>], spec: &SupSpec) -> Result<SupResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = domain.dim();
    if extra.iter().any(|p| p.len() != dim) {
        return Err(invalid("seed point dimension does not match the box"));
    }
    let halton = Halton::new(dim, Some(spec.seed))?;
    let mut points: Vec<Vec<f64>> = (0..spec.samples as u64)
        .map(|i| {
            let mut u = vec![0.0; dim];
            halton.point(i, &mut u);
            let mut x = vec![0.0; dim];
            domain.map(&u, &mut x);
            domain.clamp(&mut x, spec.margin);
            x
        })
        .collect();
    for p in extra {
        let mut x = p.clone();
        domain.clamp(&mut x, spec.margin);
        points.push(x);
    }
    if points.is_empty() {
        return Err(invalid("sup estimation needs at least one sample"));
    }
    let values = par::map(spec.exec, &points, |x| f(x));
    let mut order: Vec<usize> = (0..points.len()).filter(|&i| !values[i].is_nan()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut evaluations = points.len();
    let Some(&first) = order.first() else {
        return Ok(SupResult {
            value: f64::NAN,
            argmax: points[0].clone(),
            evaluations,
        });
    };
    if values[first] == f64::INFINITY {
        return Ok(SupResult {
            value: f64::INFINITY,
            argmax: points[first].clone(),
            evaluations,
        });
    }
    let starts: Vec<usize> = order.iter().copied().take(spec.refine_starts).collect();
    let refined = par::map(spec.exec, &starts, |&i| {
        compass_search(&f, domain, points[i].clone(), values[i], spec)
    });
    let mut best = SupResult {
        value: values[first],
        argmax: points[first].clone(),
        evaluations: 0,
    };
    for (x, v, n) in refined {
        evaluations += n;
        if v > best.value {
            best.value = v;
            best.argmax = x;
        }
    }
    best.evaluations = evaluations;
    Ok(best)
}

fn compass_search<F>(f: &F, domain: &SampleBox, mut x: Vec<f64>, mut fx: f64, spec: &SupSpec) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let dim = domain.dim();
    let mut step: Vec<f64> = (0..dim)
        .map(|k| 0.1 * (domain.upper[k] - domain.lower[k]))
        .collect();
    let mut evals = 0;
    for _ in 0..spec.refine_iterations {
        let mut improved = false;
        for k in 0..dim {
            if step[k] == 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[k] += sign * step[k];
                domain.clamp(&mut y, spec.margin);
                if y[k] == x[k] {
                    continue;
                }
                let fy = f(&y);
                evals += 1;
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in &mut step {
                *s *= 0.5;
            }
        }
    }
    (x, fx, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(5, 3), 2.0 / 3.0 + 1.0 / 9.0);
    }

    #[test]
    fn halton_points_fill_the_cube() {
        let h = Halton::new(2, None).unwrap();
        let mut p = [0.0; 2];
        let mut mean = [0.0; 2];
        let n = 4096;
        for i in 0..n {
            h.point(i, &mut p);
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
            mean[0] += p[0] / n as f64;
            mean[1] += p[1] / n as f64;
        }
        assert!((mean[0] - 0.5).abs() < 1e-3 && (mean[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn sup_of_smooth_bump_is_found() {
        let b = SampleBox::new(vec![-1.0, -1.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &[f64]| 3.0 - (x[0] - 0.3).powi(2) - 2.0 * (x[1] - 1.1).powi(2);
        let r = estimate_sup(f, &b, &[], &SupSpec::default()).unwrap();
        assert!((r.value - 3.0).abs() < 1e-8, "{}", r.value);
        assert!(r.value <= 3.0);
    }

    #[test]
    fn sup_on_boundary_respects_margin() {
        let b = SampleBox::new(vec![0.0], vec![1.0]).unwrap();
        let r = estimate_sup(|x| x[0], &b, &[vec![1.0]], &SupSpec::default()).unwrap();
        assert!(r.value < 1.0 && r.value > 1.0 - 1e-8);
    }

    #[test]
    fn sup_is_identical_across_exec_modes() {
        let b = SampleBox::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let f = |x: &[f64]| (7.0 * x[0]).sin() * (5.0 * x[1]).cos() + x[2];
        let s = SupSpec {
            exec: Exec::Sequential,
            ..SupSpec::default()
        };
        let a = estimate_sup(f, &b, &[], &s).unwrap();
        let c = estimate_sup(f, &b, &[], &SupSpec { exec: Exec::Parallel, ..s }).unwrap();
        assert_eq!(a, c);
    }
}
