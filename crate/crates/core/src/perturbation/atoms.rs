//! The alternative atom operator
//! `K g(s,x) = sum_i eta_i ( [s = u_i] g(s,x) + [s < u_i] ∫ p(s,x,u_i,z) g(u_i,z) dz )`,
//! which counts coincident times, and its closed forms.

use crate::error::{domain, invalid, precondition, Result};
use crate::par;
use crate::quadrature::{integrate_line, Estimate, QuadratureSpec};
use crate::series::{SeriesResult, SeriesStatus, StopRule};
use crate::special::binomial;
use crate::spacetime::SpaceTimeKernel;

use super::measure::{Atom, PerturbingMeasure};
use super::solver::{Axis, Bridge, PerturbedValue, SolverSpec};

/// One application of the single-atom operator at `u0` to `g`.
pub fn alt_atom_kernel_apply<G>(
    kernel: &dyn SpaceTimeKernel,
    g: G,
    s: f64,
    x: f64,
    u0: f64,
    quad: &QuadratureSpec,
) -> Result<Estimate>
where
    G: Fn(f64, f64) -> f64,
{
    if kernel.dim() != 1 {
        return Err(invalid("atom operator is implemented on R × R"));
    }
    if s > u0 {
        return Ok(Estimate::ZERO);
    }
    if s == u0 {
        return Ok(Estimate::exact(g(s, x)));
    }
    let spread = kernel.spread(u0 - s);
    let cuts = [x - spread, x, x + spread];
    let spec = quad.with_tail_scale(spread.max(f64::MIN_POSITIVE));
    Ok(integrate_line(|z| kernel.density(s, &[x], u0, &[z]) * g(u0, z), &cuts, &spec))
}

/// `#{(i_1..i_n): s <= u_{i_1} <= ... <= u_{i_n}}` with `L` atoms after `s`,
/// i.e. `C(L + n - 1, n)`.
pub fn multi_atom_iterate_count(l: u64, n: u64) -> Option<u64> {
    match (l, n) {
        (_, 0) => Some(1),
        (0, _) => Some(0),
        _ => binomial(l + n - 1, n),
    }
}

/// `(1 - eta)^(-L)`.
pub fn multi_atom_series_factor(eta: f64, l: u32) -> Result<f64> {
    if !(eta >= 0.0) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    if eta >= 1.0 {
        return Err(domain(format!("eta = {eta} >= 1 makes the series explode")));
    }
    Ok((1.0 - eta).powi(-(l as i32)))
}

/// `L(s) = #{i: u_i >= s}`.
pub fn atoms_after(atoms: &[Atom], s: f64) -> usize {
    atoms.iter().filter(|a| a.u >= s).count()
}

type Row = Vec<(u32, f64)>;

/// Neumann series of the multi-atom operator applied to `f = p(., ., t, y)`,
/// in ratio form on per-atom spatial grids.
pub struct AtomChainOperator<'a> {
    kernel: &'a dyn SpaceTimeKernel,
    atoms: Vec<Atom>,
    t: f64,
    y: f64,
    space: Axis,
    rows: Vec<Row>,
    spec: SolverSpec,
}

impl<'a> AtomChainOperator<'a> {
    /// Atoms at or after `t` see `f = 0` and are dropped.
    pub fn new(
        kernel: &'a dyn SpaceTimeKernel,
        atoms: &[Atom],
        t: f64,
        y: f64,
        queries: &[(f64, f64)],
        spec: &SolverSpec,
    ) -> Result<Self> {
        spec.validate()?;
        if !kernel.chapman_kolmogorov() {
            return Err(precondition("the atom operator assumes Chapman-Kolmogorov equations"));
        }
        PerturbingMeasure::new(crate::perturbation::Density::Zero, atoms.to_vec())?;
        let atoms: Vec<Atom> = atoms.iter().copied().filter(|a| a.u < t).collect();
        let x_min = queries.iter().map(|q| q.1).fold(y, f64::min);
        let x_max = queries.iter().map(|q| q.1).fold(y, f64::max);
        let space = if spec.reduce_space {
            Axis::new(vec![x_min - 1.0, x_max + 1.0], 2)
        } else {
            let s_min = queries.iter().map(|q| q.0).chain(atoms.iter().map(|a| a.u)).fold(t, f64::min);
            let margin = spec.space_margin * kernel.spread((t - s_min).max(f64::MIN_POSITIVE));
            let edges = super::solver::graded_edges(x_min - margin, x_max + margin, spec.space_panels, false);
            Axis::new(edges, spec.order)
        };
        let mut op = AtomChainOperator {
            kernel,
            atoms,
            t,
            y,
            space,
            rows: Vec::new(),
            spec: *spec,
        };
        let nz = op.space.len();
        let n_nodes = op.atoms.len() * nz;
        let rows: Vec<Result<Row>> = par::map_range(spec.exec, n_nodes, |i| {
            let (ia, iz) = (i / nz, i % nz);
            op.row_at(op.atoms[ia].u, op.space.nodes[iz])
        });
        op.rows = rows.into_iter().collect::<Result<_>>()?;
        Ok(op)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    fn row_at(&self, s: f64, x: f64) -> Result<Row> {
        let zero = PerturbingMeasure::zero();
        let bridge = Bridge::new(self.kernel, &zero, self.t, self.y, self.spec.quad)?;
        let nz = self.space.len();
        let mut dense = vec![0.0; self.atoms.len() * nz];
        let mut wz = vec![0.0; self.space.m];
        for (i, a) in self.atoms.iter().enumerate() {
            if s == a.u {
                let z0 = self.space.weights(x, &mut wz);
                for (k, w) in wz.iter().enumerate() {
                    dense[i * nz + z0 + k] += a.eta * w;
                }
            } else if s < a.u {
                let (_, rule) = bridge.inner_rule(s, x, a.u, false);
                for (z, w) in rule {
                    let z0 = self.space.weights(z, &mut wz);
                    for (k, wk) in wz.iter().enumerate() {
                        dense[i * nz + z0 + k] += a.eta * w * wk;
                    }
                }
            }
        }
        Ok(dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect())
    }

    /// `sum_i [u_i ∈ slice] (K_i f / f)(s, x)` by direct quadrature, where
    /// `keep` selects the atoms of the slice.
    pub fn local_ratio<F>(&self, s: f64, x: f64, keep: F) -> Result<Estimate>
    where
        F: Fn(&Atom) -> bool,
    {
        let zero = PerturbingMeasure::zero();
        let bridge = Bridge::new(self.kernel, &zero, self.t, self.y, self.spec.quad)?;
        let mut total = Estimate::ZERO;
        for a in self.atoms.iter().filter(|a| keep(a)) {
            if s == a.u {
                total = total + Estimate::exact(a.eta);
            } else if s < a.u {
                total = total + bridge.inner_rule(s, x, a.u, false).0.scale(a.eta);
            }
        }
        Ok(total)
    }

    /// `sum_n (K^n f)(s, x)` at each query.
    pub fn evaluate(&self, queries: &[(f64, f64)]) -> Result<Vec<PerturbedValue>> {
        let qrows: Vec<Result<Row>> = par::map(self.spec.exec, queries, |&(s, x)| self.row_at(s, x));
        let qrows: Vec<Row> = qrows.into_iter().collect::<Result<_>>()?;
        let apply = |row: &Row, h: &[f64]| -> f64 { row.iter().map(|&(j, w)| w * h[j as usize]).sum() };
        let base: Vec<f64> = queries
            .iter()
            .map(|&(s, x)| self.kernel.density(s, &[x], self.t, &[self.y]))
            .collect();
        let mut h = vec![1.0; self.rows.len()];
        let mut ratios: Vec<Vec<f64>> = vec![vec![1.0]; queries.len()];
        let mut sums = vec![1.0; queries.len()];
        let mut rules: Vec<StopRule> = (0..queries.len()).map(|_| StopRule::new(self.spec.tail_tol)).collect();
        let mut status: Vec<Option<SeriesStatus>> = base
            .iter()
            .map(|&p| (p <= 0.0).then_some(SeriesStatus::Converged))
            .collect();
        for _ in 1..self.spec.max_terms {
            if status.iter().all(Option::is_some) {
                break;
            }
            for (i, row) in qrows.iter().enumerate() {
                if status[i].is_some() {
                    continue;
                }
                let term = apply(row, &h);
                ratios[i].push(term);
                sums[i] += term;
                status[i] = rules[i].push(term, sums[i]);
            }
            h = self.rows.iter().map(|row| apply(row, &h)).collect();
        }
        Ok(queries
            .iter()
            .enumerate()
            .map(|(i, &(s, x))| {
                let p = base[i];
                let terms: Vec<f64> = if p > 0.0 {
                    ratios[i].iter().map(|r| r * p).collect()
                } else {
                    vec![0.0]
                };
                let last = *ratios[i].last().unwrap_or(&0.0);
                let st = status[i].unwrap_or(SeriesStatus::Truncated);
                let tail = if p > 0.0 { rules[i].tail(last) * p } else { 0.0 };
                PerturbedValue {
                    s,
                    x,
                    p,
                    series: SeriesResult {
                        value: terms.iter().sum(),
                        terms: terms.len(),
                        truncation_index: terms.len() - 1,
                        tail_estimate: tail,
                        quad_error_estimate: self.spec.quad.rel_tol * terms.len() as f64 * terms.iter().sum::<f64>(),
                        status: st,
                    },
                    terms,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::Gaussian;

    fn chains(l: usize, n: usize) -> u64 {
        // nondecreasing n-tuples over l labels
        fn go(start: usize, l: usize, left: usize) -> u64 {
            if left == 0 {
                return 1;
            }
            (start..l).map(|i| go(i, l, left - 1)).sum()
        }
        go(0, l, n)
    }

    #[test]
    fn counts_match_enumeration() {
        assert_eq!(multi_atom_iterate_count(5, 0), Some(1));
        assert_eq!(multi_atom_iterate_count(2, 3), Some(4));
        for n in 0..8 {
            assert_eq!(multi_atom_iterate_count(1, n), Some(1));
        }
        for l in 0..6 {
            for n in 0..=5 {
                assert_eq!(multi_atom_iterate_count(l as u64, n as u64), Some(chains(l, n)), "L={l} n={n}");
            }
        }
    }

    #[test]
    fn series_factor() {
        assert_eq!(multi_atom_series_factor(0.3, 0).unwrap(), 1.0);
        assert_eq!(multi_atom_series_factor(0.5, 3).unwrap(), 8.0);
        assert_eq!(multi_atom_series_factor(0.5, 1).unwrap(), 2.0);
        assert!(multi_atom_series_factor(1.0, 2).is_err());
        let partial: f64 = (0..200)
            .map(|n| 0.5f64.powi(n) * multi_atom_iterate_count(3, n as u64).unwrap() as f64)
            .sum();
        assert!((partial - 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_atom_apply() {
        let g = Gaussian { dim: 1 };
        let quad = QuadratureSpec::default().with_tol(1e-11, 1e-14);
        let (t, y, u0) = (1.0, 0.3, 0.6);
        let f = |s: f64, x: f64| g.density(s, &[x], t, &[y]);
        assert_eq!(alt_atom_kernel_apply(&g, f, 0.7, 0.0, u0, &quad).unwrap().value, 0.0);
        assert_eq!(alt_atom_kernel_apply(&g, f, u0, 0.1, u0, &quad).unwrap().value, f(u0, 0.1));
        let e = alt_atom_kernel_apply(&g, f, 0.2, -0.4, u0, &quad).unwrap();
        assert!((e.value / f(0.2, -0.4) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn chain_operator_reproduces_inverse_powers() {
        let g = Gaussian { dim: 1 };
        let atoms = [
            Atom { u: 0.2, eta: 0.5 },
            Atom { u: 0.45, eta: 0.5 },
            Atom { u: 0.7, eta: 0.5 },
        ];
        let queries = [(0.0, 0.1), (0.2, -0.3), (0.3, 0.0), (0.7, 0.4), (0.8, 0.0)];
        let spec = SolverSpec {
            max_terms: 200,
            tail_tol: 1e-12,
            ..SolverSpec::default()
        };
        let op = AtomChainOperator::new(&g, &atoms, 1.0, 0.0, &queries, &spec).unwrap();
        let vals = op.evaluate(&queries).unwrap();
        for v in vals {
            let l = atoms_after(&atoms, v.s) as u32;
            let expected = multi_atom_series_factor(0.5, l).unwrap();
            assert!((v.ratio() / expected - 1.0).abs() < 1e-6, "{} {}", v.ratio(), expected);
            assert_eq!(v.series.status, SeriesStatus::Converged);
        }
    }
}
