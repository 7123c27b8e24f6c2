//! Nyström solver for `p_n(., ., t, y) = (K^mu)^n p(., ., t, y)` with the
//! target `(t, y)` held fixed.
//!
//! The unknowns are the ratios `H_n = p_n / p` on a tensor grid of
//! Chebyshev-Lobatto panels in `(u, z)`. In ratio form the recursion reads
//! `H_n(s, x) = ∫ B(s, x, u, z) H_{n-1}(u, z) dmu(u, z)` with the bridge
//! `B = p(s,x,u,z) p(u,z,t,y) / p(s,x,t,y)`. For every grid node one adaptive
//! product rule for `B dmu` is built; folding the interpolation weights into
//! it yields a matrix row, and each level is then a single sparse product.

use crate::error::{invalid, precondition, Result};
use crate::par::{self, Exec};
use crate::quadrature::{kronrod_rule, Estimate, QuadratureSpec};
use crate::series::{SeriesResult, SeriesStatus, StopRule};
use crate::spacetime::SpaceTimeKernel;

use super::measure::{Density, PerturbingMeasure};

/// Discretisation and stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSpec {
    /// Tolerance of every product rule.
    pub quad: QuadratureSpec,
    pub max_terms: usize,
    /// Stop once the newest term is below `tail_tol` times the partial sum.
    pub tail_tol: f64,
    /// Panels per gap between consecutive time breakpoints.
    pub time_panels: usize,
    pub space_panels: usize,
    /// Interpolation nodes per panel.
    pub order: usize,
    /// Half-width of the spatial window beyond the data, in units of the
    /// kernel spread over the whole time range.
    pub space_margin: f64,
    /// Collapse the spatial grid when `H_n` cannot depend on space
    /// (Chapman-Kolmogorov kernel, spatially constant density).
    pub reduce_space: bool,
    pub exec: Exec,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            quad: QuadratureSpec::default().with_tol(1e-9, 1e-13),
            max_terms: 60,
            tail_tol: 1e-10,
            time_panels: 4,
            space_panels: 6,
            order: 8,
            space_margin: 6.0,
            reduce_space: true,
            exec: Exec::Parallel,
        }
    }
}

impl SolverSpec {
    pub fn with_quad_tol(mut self, rel_tol: f64) -> Self {
        self.quad = self.quad.with_tol(rel_tol, self.quad.abs_tol.min(rel_tol * 1e-3));
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.quad.validate()?;
        if self.order < 2 || self.time_panels == 0 || self.space_panels == 0 {
            return Err(invalid("solver needs order >= 2 and at least one panel per axis"));
        }
        if !(self.tail_tol >= 0.0) || self.max_terms == 0 {
            return Err(invalid("tail_tol must be nonnegative and max_terms positive"));
        }
        Ok(())
    }
}

/// `p^mu` at one point, with the individual terms.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedValue {
    pub s: f64,
    pub x: f64,
    /// Unperturbed `p(s, x, t, y)`.
    pub p: f64,
    /// `p_0, p_1, ...` as computed.
    pub terms: Vec<f64>,
    /// `value` is `p^mu`; tail and quadrature estimates are absolute.
    pub series: SeriesResult,
}

impl PerturbedValue {
    /// `p^mu / p`, or 1 where `p` vanishes.
    pub fn ratio(&self) -> f64 {
        if self.p > 0.0 {
            self.series.value / self.p
        } else {
            1.0
        }
    }
}

fn smoothstep(w: f64) -> (f64, f64) {
    (w * w * (3.0 - 2.0 * w), 6.0 * w * (1.0 - w))
}

/// Point of `[a, a + len]` at smoothstep parameter `v`, measured from the
/// nearer end, and the Jacobian.
fn piece_point(a: f64, len: f64, v: f64) -> (f64, f64) {
    if v <= 0.5 {
        let (phi, dphi) = smoothstep(v);
        (a + len * phi, len * dphi)
    } else {
        let (phi, dphi) = smoothstep(1.0 - v);
        ((a + len) - len * phi, len * dphi)
    }
}

/// Product rules for `B(s, x, ., .)` against the perturbing measure.
pub(crate) struct Bridge<'a> {
    kernel: &'a dyn SpaceTimeKernel,
    mu: &'a PerturbingMeasure,
    t: f64,
    y: f64,
    quad: QuadratureSpec,
    /// Extra spatial cut points, e.g. interpolation panel edges.
    space_cuts: Vec<f64>,
    time_cuts: Vec<f64>,
}

impl<'a> Bridge<'a> {
    pub(crate) fn new(
        kernel: &'a dyn SpaceTimeKernel,
        mu: &'a PerturbingMeasure,
        t: f64,
        y: f64,
        quad: QuadratureSpec,
    ) -> Result<Self> {
        if kernel.dim() != 1 {
            return Err(invalid(format!(
                "series engine works on R × R, kernel {} has dimension {}",
                kernel.name(),
                kernel.dim()
            )));
        }
        if !mu.atoms().is_empty() && !kernel.chapman_kolmogorov() {
            return Err(precondition("atoms in time need a Chapman-Kolmogorov kernel"));
        }
        let mut time_cuts = mu.time_breakpoints();
        let mut space_cuts = Vec::new();
        if !mu.density().is_spatially_constant() {
            space_cuts.push(0.0);
        }
        if density_has_time_edge(mu.density()) {
            time_cuts.push(0.0);
        }
        Ok(Bridge {
            kernel,
            mu,
            t,
            y,
            quad,
            space_cuts,
            time_cuts,
        })
    }

    pub(crate) fn b(&self, s: f64, x: f64, u: f64, z: f64) -> f64 {
        let k = self.kernel;
        let den = k.density(s, &[x], self.t, &[self.y]);
        if den <= 0.0 {
            return 0.0;
        }
        let a = k.density(s, &[x], u, &[z]);
        if a == 0.0 {
            return 0.0;
        }
        a * k.density(u, &[z], self.t, &[self.y]) / den
    }

    /// Rule for `z -> B(s, x, u, z) q(u, z)` (or without `q`), as
    /// `(z, weight * integrand)` pairs.
    pub(crate) fn inner_rule(&self, s: f64, x: f64, u: f64, with_q: bool) -> (Estimate, Vec<(f64, f64)>) {
        if !(s < u && u < self.t) {
            return (Estimate::ZERO, Vec::new());
        }
        let integrand = |z: f64| {
            let b = self.b(s, x, u, z);
            if b == 0.0 {
                return 0.0;
            }
            if with_q {
                b * self.mu.q(u, &[z])
            } else {
                b
            }
        };
        let mean = x + (u - s) / (self.t - s) * (self.y - x);
        let mut cuts = vec![x, self.y, mean];
        cuts.extend(self.space_cuts.iter().copied());
        if with_q {
            if let Some(d) = self.mu.diagonal() {
                cuts.extend([d.lower() - u, d.upper() - u].into_iter().filter(|v| v.is_finite()));
            }
        }
        let range = self.kernel.bridge_range(x, self.y);
        if let Some((lo, hi)) = range {
            cuts.retain(|&c| c > lo && c < hi);
            cuts.push(lo);
            cuts.push(hi);
        }
        cuts.retain(|c| c.is_finite());
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        if cuts.len() < 2 && range.is_some() {
            return (Estimate::ZERO, Vec::new());
        }
        let pieces = (cuts.len() + 1) as f64;
        let spec = QuadratureSpec {
            abs_tol: self.quad.abs_tol / pieces,
            ..self.quad
        };
        let mut total = Estimate::ZERO;
        let mut rule = Vec::new();
        for w in cuts.windows(2) {
            let (a, len) = (w[0], w[1] - w[0]);
            let g = |v: f64| {
                let (z, jac) = piece_point(a, len, v);
                integrand(z) * jac
            };
            let (est, r) = kronrod_rule(g, 0.0, 1.0, &spec);
            total = total + est;
            rule.extend(r.into_iter().filter_map(|(v, wt)| {
                let (z, jac) = piece_point(a, len, v);
                let val = integrand(z) * wt * jac;
                (val != 0.0).then_some((z, val))
            }));
        }
        if range.is_none() {
            let scale = self.kernel.spread(u - s) + self.kernel.spread(self.t - u);
            let ends = [(cuts[0], -1.0), (cuts[cuts.len() - 1], 1.0)];
            for (origin, dir) in ends {
                let map = |v: f64| {
                    let om = 1.0 - v;
                    (origin + dir * scale * v / om, scale / (om * om))
                };
                let g = |v: f64| {
                    let (z, jac) = map(v);
                    integrand(z) * jac
                };
                let (est, r) = kronrod_rule(g, 0.0, 1.0, &spec);
                total = total + est;
                rule.extend(r.into_iter().filter_map(|(v, wt)| {
                    let (z, jac) = map(v);
                    let val = integrand(z) * wt * jac;
                    (val != 0.0).then_some((z, val))
                }));
            }
        }
        (total, rule)
    }

    /// Time pieces of `(s, t)` on which the continuous part is smooth.
    fn time_pieces(&self, s: f64, extra: &[f64]) -> Vec<f64> {
        let support = self.mu.support();
        let lo = s.max(support.lower());
        let hi = self.t.min(support.upper());
        if !(lo < hi) || !self.mu.has_density() {
            return Vec::new();
        }
        let mut cuts: Vec<f64> = self
            .time_cuts
            .iter()
            .chain(extra)
            .copied()
            .filter(|&c| c > lo && c < hi)
            .collect();
        cuts.push(lo);
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        cuts
    }

    /// Visits the full product rule of the continuous part at `(s, x)`:
    /// `visit(u, inner_rule)` once per outer node, with the outer weight
    /// already folded into the inner weights. Returns the estimate.
    pub(crate) fn visit_continuous<V>(&self, s: f64, x: f64, time_extra: &[f64], mut visit: V) -> Estimate
    where
        V: FnMut(f64, &[(f64, f64)]),
    {
        let cuts = self.time_pieces(s, time_extra);
        if cuts.len() < 2 {
            return Estimate::ZERO;
        }
        let spec = QuadratureSpec {
            abs_tol: self.quad.abs_tol / (cuts.len() - 1) as f64,
            ..self.quad
        };
        let mut total = Estimate::ZERO;
        for w in cuts.windows(2) {
            let (a, len) = (w[0], w[1] - w[0]);
            let g = |v: f64| {
                let (u, jac) = piece_point(a, len, v);
                let (est, _) = self.inner_rule(s, x, u, true);
                est.value * jac
            };
            let (est, rule) = kronrod_rule(g, 0.0, 1.0, &spec);
            let mut inner_err = 0.0;
            for (v, wt) in rule {
                let (u, jac) = piece_point(a, len, v);
                let (ie, mut inner) = self.inner_rule(s, x, u, true);
                let outer = wt * jac;
                inner_err += outer * ie.error;
                for pair in inner.iter_mut() {
                    pair.1 *= outer;
                }
                if !inner.is_empty() {
                    visit(u, &inner);
                }
            }
            total = total
                + Estimate {
                    error: est.error + inner_err,
                    ..est
                };
        }
        total
    }

    /// Atoms strictly between `s` and `t`.
    pub(crate) fn active_atoms(&self, s: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.mu
            .atoms()
            .iter()
            .filter(move |a| s < a.u && a.u < self.t)
            .map(|a| (a.u, a.eta))
    }

    /// `∫∫ B(s, x, u, z) dmu(u, z)`, i.e. `p_1 / p` at `(s, x)`, by direct
    /// nested quadrature.
    pub(crate) fn first_order(&self, s: f64, x: f64) -> Estimate {
        if !(s < self.t) {
            return Estimate::ZERO;
        }
        let mut total = self.visit_continuous(s, x, &[], |_, _| {});
        for (u, eta) in self.active_atoms(s) {
            total = total + self.inner_rule(s, x, u, false).0.scale(eta);
        }
        total
    }
}

fn density_has_time_edge(d: &Density) -> bool {
    match d {
        Density::Q0 { .. } => true,
        Density::Reflect { inner } => density_has_time_edge(inner),
        _ => false,
    }
}

/// Piecewise Chebyshev-Lobatto interpolation on one axis.
#[derive(Debug, Clone)]
pub(crate) struct Axis {
    edges: Vec<f64>,
    pub(crate) m: usize,
    pub(crate) nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl Axis {
    pub(crate) fn new(edges: Vec<f64>, m: usize) -> Self {
        let mut nodes = Vec::with_capacity((edges.len() - 1) * m);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            for k in 0..m {
                let c = -(std::f64::consts::PI * k as f64 / (m - 1) as f64).cos();
                let v = if k == 0 {
                    a
                } else if k == m - 1 {
                    b
                } else {
                    a + 0.5 * (b - a) * (1.0 + c)
                };
                nodes.push(v);
            }
        }
        let bary = (0..m)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                if k == 0 || k == m - 1 {
                    0.5 * sign
                } else {
                    sign
                }
            })
            .collect();
        Axis { edges, m, nodes, bary }
    }

    pub(crate) fn len(&self) -> usize {
        self.nodes.len()
    }

    fn panels(&self) -> usize {
        self.edges.len() - 1
    }

    /// Panel containing `v`; right-biased at interior edges, clamped outside.
    fn locate(&self, v: f64) -> usize {
        let p = self.edges.partition_point(|&e| e <= v);
        p.saturating_sub(1).min(self.panels() - 1)
    }

    /// Interpolation weights at `v`; returns the first node index.
    pub(crate) fn weights(&self, v: f64, out: &mut [f64]) -> usize {
        let panel = self.locate(v);
        let start = panel * self.m;
        let lo = self.edges[panel];
        let hi = self.edges[panel + 1];
        let v = v.clamp(lo, hi);
        let nodes = &self.nodes[start..start + self.m];
        let snap = 1e-14 * (hi - lo);
        if let Some(k) = nodes.iter().position(|&n| (n - v).abs() <= snap) {
            out.iter_mut().for_each(|w| *w = 0.0);
            out[k] = 1.0;
            return start;
        }
        let mut sum = 0.0;
        for k in 0..self.m {
            let w = self.bary[k] / (v - nodes[k]);
            out[k] = w;
            sum += w;
        }
        out.iter_mut().for_each(|w| *w /= sum);
        start
    }
}

pub(crate) fn graded_edges(a: f64, b: f64, panels: usize, graded: bool) -> Vec<f64> {
    if !graded {
        return (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect();
    }
    // widths halve towards b
    let total: f64 = (0..panels).map(|i| 0.5f64.powi(i as i32)).sum();
    let mut edges = vec![a];
    let mut acc = 0.0;
    for i in 0..panels {
        acc += 0.5f64.powi(i as i32) / total;
        edges.push(if i + 1 == panels { b } else { a + (b - a) * acc });
    }
    edges
}

type Row = Vec<(u32, f64)>;

/// Precomputed Nyström operator for one target `(t, y)`.
pub struct SeriesSolver<'a> {
    bridge: Bridge<'a>,
    time: Axis,
    space: Axis,
    rows: Vec<Row>,
    /// Largest relative rule error over all rows.
    rule_error: f64,
    spec: SolverSpec,
    /// Rows do not depend on the space node; they are built at `z = y`.
    z_independent: bool,
}

impl<'a> SeriesSolver<'a> {
    /// Builds the grid covering `[min s, t] × window` for the given queries.
    pub fn new(
        kernel: &'a dyn SpaceTimeKernel,
        mu: &'a PerturbingMeasure,
        t: f64,
        y: f64,
        queries: &[(f64, f64)],
        spec: &SolverSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let mut bridge = Bridge::new(kernel, mu, t, y, spec.quad)?;
        let s_min = queries.iter().map(|q| q.0).fold(t, f64::min);
        let x_min = queries.iter().map(|q| q.1).fold(y, f64::min);
        let x_max = queries.iter().map(|q| q.1).fold(y, f64::max);

        let mut tcuts: Vec<f64> = bridge
            .time_cuts
            .iter()
            .copied()
            .filter(|&c| c > s_min && c < t)
            .collect();
        tcuts.push(s_min);
        tcuts.push(t);
        tcuts.sort_by(f64::total_cmp);
        tcuts.dedup();
        let mut time_edges = vec![tcuts[0]];
        if tcuts.len() >= 2 {
            time_edges.clear();
            let gaps = tcuts.len() - 1;
            for (g, w) in tcuts.windows(2).enumerate() {
                let e = graded_edges(w[0], w[1], spec.time_panels, g + 1 == gaps);
                let skip = usize::from(!time_edges.is_empty());
                time_edges.extend(e.into_iter().skip(skip));
            }
        } else {
            time_edges.push(t);
        }

        let z_independent =
            spec.reduce_space && kernel.chapman_kolmogorov() && mu.density().is_spatially_constant() && mu.diagonal().is_none();
        let (space_edges, space_m) = match kernel.bridge_range(x_min, y) {
            _ if z_independent => (vec![x_min - 1.0, x_max + 1.0], 2),
            Some((lo, hi)) if lo < hi => {
                let mut edges = graded_edges(lo, hi, spec.space_panels, true);
                for c in &bridge.space_cuts {
                    if *c > lo && *c < hi && !edges.contains(c) {
                        edges.push(*c);
                    }
                }
                edges.sort_by(f64::total_cmp);
                (edges, spec.order)
            }
            Some(_) => (vec![x_min, x_min + 1.0], 2),
            None => {
                let margin = spec.space_margin * kernel.spread((t - s_min).max(f64::MIN_POSITIVE));
                let (lo, hi) = (x_min - margin, x_max + margin);
                let mut edges = graded_edges(lo, hi, spec.space_panels, false);
                for c in &bridge.space_cuts {
                    if *c > lo && *c < hi && !edges.contains(c) {
                        edges.push(*c);
                    }
                }
                edges.sort_by(f64::total_cmp);
                (edges, spec.order)
            }
        };
        let time = Axis::new(time_edges, spec.order);
        let space = Axis::new(space_edges, space_m);
        if !z_independent {
            let inner: Vec<f64> = space.edges[1..space.edges.len() - 1].to_vec();
            bridge.space_cuts.extend(inner);
            bridge.space_cuts.sort_by(f64::total_cmp);
            bridge.space_cuts.dedup();
        }

        let mut solver = SeriesSolver {
            bridge,
            time,
            space,
            rows: Vec::new(),
            rule_error: 0.0,
            spec: *spec,
            z_independent,
        };
        let n_nodes = solver.time.len() * solver.space.len();
        let built: Vec<(Row, f64)> = par::map_range(spec.exec, n_nodes, |i| solver.node_row(i));
        solver.rule_error = built.iter().map(|r| r.1).fold(0.0, f64::max);
        solver.rows = built.into_iter().map(|r| r.0).collect();
        Ok(solver)
    }

    fn node_point(&self, index: usize) -> (usize, usize) {
        (index / self.space.len(), index % self.space.len())
    }

    /// Row of a grid node. Left copies of interior time edges reuse the row of
    /// the matching right node and pick up the atom sitting there.
    fn node_row(&self, index: usize) -> (Row, f64) {
        let (iu, iz) = self.node_point(index);
        let m = self.time.m;
        let u = self.time.nodes[iu];
        let x = if self.z_independent { self.bridge.y } else { self.space.nodes[iz] };
        if iu % m == m - 1 && iu + 1 < self.time.len() {
            let (mut row, err) = self.row_at(u, x);
            for (u0, eta) in self.bridge.mu.atoms().iter().map(|a| (a.u, a.eta)) {
                if u0 == u && u0 < self.bridge.t {
                    let right = ((iu + 1) * self.space.len() + iz) as u32;
                    match row.iter_mut().find(|e| e.0 == right) {
                        Some(e) => e.1 += eta,
                        None => row.push((right, eta)),
                    }
                }
            }
            return (row, err);
        }
        self.row_at(u, x)
    }

    /// Row of `H_n(s, x) = sum_j row_j H_{n-1}(node_j)`.
    fn row_at(&self, s: f64, x: f64) -> (Row, f64) {
        let t = self.bridge.t;
        if !(s < t) {
            return (Vec::new(), 0.0);
        }
        let nz = self.space.len();
        let mut dense = vec![0.0; self.time.len() * nz];
        let mut wu = vec![0.0; self.time.m];
        let mut wz = vec![0.0; self.space.m];
        let mut strip = vec![0.0; nz];
        let mut fold = |u: f64, inner: &[(f64, f64)], dense: &mut [f64]| {
            strip.iter_mut().for_each(|v| *v = 0.0);
            for &(z, w) in inner {
                let z0 = self.space.weights(z, &mut wz);
                for (k, wk) in wz.iter().enumerate() {
                    strip[z0 + k] += w * wk;
                }
            }
            let u0 = self.time.weights(u, &mut wu);
            for (a, wa) in wu.iter().enumerate() {
                if *wa == 0.0 {
                    continue;
                }
                let base = (u0 + a) * nz;
                for (k, v) in strip.iter().enumerate() {
                    dense[base + k] += wa * v;
                }
            }
        };
        let est = self
            .bridge
            .visit_continuous(s, x, &self.time.edges, |u, inner| fold(u, inner, &mut dense));
        let mut value = est.value;
        let mut error = est.error;
        for (u, eta) in self.bridge.active_atoms(s).collect::<Vec<_>>() {
            let (ie, mut inner) = self.bridge.inner_rule(s, x, u, false);
            inner.iter_mut().for_each(|p| p.1 *= eta);
            fold(u, &inner, &mut dense);
            value += eta * ie.value;
            error += eta * ie.error;
        }
        let row: Row = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .collect();
        let rel = if value > 0.0 { error / value } else { 0.0 };
        (row, rel)
    }

    pub fn nodes(&self) -> usize {
        self.rows.len()
    }

    /// Largest relative error estimate among the product rules.
    pub fn rule_error(&self) -> f64 {
        self.rule_error
    }

    /// Row times `h`, with rounding below zero cut off; NaN passes through
    /// so the stopping rule reports it.
    fn apply(row: &Row, h: &[f64]) -> f64 {
        let v: f64 = row.iter().map(|&(j, w)| w * h[j as usize]).sum();
        if v < 0.0 {
            0.0
        } else {
            v
        }
    }

    /// Sums `H_0 + H_1 + ...` on the grid until the largest new term drops
    /// below `tail_tol` times the sum, and returns the interpolant.
    pub fn ratio_field(&self) -> RatioField {
        let mut h = vec![1.0; self.rows.len()];
        let mut total = h.clone();
        let mut status = SeriesStatus::Truncated;
        let mut levels = 1;
        for _ in 1..self.spec.max_terms {
            h = par::map(self.spec.exec, &self.rows, |row| Self::apply(row, &h));
            levels += 1;
            let mut worst = 0.0f64;
            for (t, v) in total.iter_mut().zip(&h) {
                *t += v;
                worst = worst.max(v / *t);
            }
            if worst <= self.spec.tail_tol {
                status = SeriesStatus::Converged;
                break;
            }
        }
        RatioField {
            time: self.time.clone(),
            space: self.space.clone(),
            values: total,
            levels,
            status,
        }
    }

    /// Runs the recursion and evaluates the series at `queries`.
    pub fn evaluate(&self, queries: &[(f64, f64)]) -> Vec<PerturbedValue> {
        let t = self.bridge.t;
        let y = self.bridge.y;
        let k = self.bridge.kernel;
        let qrows: Vec<(Row, f64)> = par::map(self.spec.exec, queries, |&(s, x)| self.row_at(s, x));
        let base: Vec<f64> = queries.iter().map(|&(s, x)| k.density(s, &[x], t, &[y])).collect();

        let mut h = vec![1.0; self.rows.len()];
        let mut ratios: Vec<Vec<f64>> = vec![vec![1.0]; queries.len()];
        let mut sums = vec![1.0; queries.len()];
        let mut rules: Vec<StopRule> = (0..queries.len()).map(|_| StopRule::new(self.spec.tail_tol)).collect();
        let mut status: Vec<Option<SeriesStatus>> = base
            .iter()
            .map(|&p| if p > 0.0 { None } else { Some(SeriesStatus::Converged) })
            .collect();
        for _ in 1..self.spec.max_terms {
            if status.iter().all(Option::is_some) {
                break;
            }
            for (i, (row, _)) in qrows.iter().enumerate() {
                if status[i].is_some() {
                    continue;
                }
                let term = Self::apply(row, &h);
                ratios[i].push(term);
                sums[i] += term;
                status[i] = rules[i].push(term, sums[i]);
            }
            h = par::map(self.spec.exec, &self.rows, |row| Self::apply(row, &h));
        }
        queries
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
                let tail = if p > 0.0 && st != SeriesStatus::Converged {
                    rules[i].tail(last) * p
                } else if p > 0.0 {
                    rules[i].tail(last).min(last) * p
                } else {
                    0.0
                };
                let rel = self.rule_error.max(qrows[i].1);
                let quad_err: f64 = ratios[i].iter().enumerate().map(|(n, r)| n as f64 * rel * r).sum::<f64>() * p;
                PerturbedValue {
                    s,
                    x,
                    p,
                    series: SeriesResult {
                        value: terms.iter().sum(),
                        terms: terms.len(),
                        truncation_index: terms.len() - 1,
                        tail_estimate: tail,
                        quad_error_estimate: quad_err,
                        status: st,
                    },
                    terms,
                }
            })
            .collect()
    }
}

/// `p^mu(s, x, t, y)` at several `(s, x)` for one target, on a shared grid.
pub fn series_batch(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    t: f64,
    y: f64,
    points: &[(f64, f64)],
    spec: &SolverSpec,
) -> Result<Vec<PerturbedValue>> {
    let solver = SeriesSolver::new(kernel, mu, t, y, points, spec)?;
    Ok(solver.evaluate(points))
}

/// `p^mu(s, x, t, y)`.
pub fn series(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    spec: &SolverSpec,
) -> Result<PerturbedValue> {
    Ok(series_batch(kernel, mu, t, y, &[(s, x)], spec)?.remove(0))
}

/// `p_n^mu(s, x, t, y)`.
pub fn pn_term(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    n: usize,
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    spec: &SolverSpec,
) -> Result<f64> {
    let spec = SolverSpec {
        max_terms: n + 1,
        tail_tol: 0.0,
        ..*spec
    };
    let v = series(kernel, mu, s, x, t, y, &spec)?;
    Ok(v.terms.get(n).copied().unwrap_or(0.0))
}

/// `p_1 / p` at `(s, x)` by direct nested quadrature.
pub fn first_order_ratio(
    kernel: &dyn SpaceTimeKernel,
    mu: &PerturbingMeasure,
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    let bridge = Bridge::new(kernel, mu, t, y, *quad)?;
    Ok(bridge.first_order(s, x))
}

/// Interpolant of `p^mu / p` over the solver grid for a fixed target.
#[derive(Debug, Clone)]
pub struct RatioField {
    time: Axis,
    space: Axis,
    values: Vec<f64>,
    pub levels: usize,
    pub status: SeriesStatus,
}

impl RatioField {
    /// Value at `(s, x)`; points off the grid are clamped to it.
    pub fn eval(&self, s: f64, x: f64) -> f64 {
        let mut wu = vec![0.0; self.time.m];
        let mut wz = vec![0.0; self.space.m];
        let u0 = self.time.weights(s, &mut wu);
        let z0 = self.space.weights(x, &mut wz);
        let nz = self.space.len();
        let mut out = 0.0;
        for (a, wa) in wu.iter().enumerate() {
            if *wa == 0.0 {
                continue;
            }
            let base = (u0 + a) * nz + z0;
            out += wa * wz.iter().enumerate().map(|(k, w)| w * self.values[base + k]).sum::<f64>();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::Gaussian;
    use approx::assert_abs_diff_eq;

    #[test]
    fn piece_point_hits_both_ends_exactly() {
        let (a, len) = (0.1, 0.7);
        assert_eq!(piece_point(a, len, 0.0).0, a);
        assert_eq!(piece_point(a, len, 1.0).0, a + len);
        let (mid, jac) = piece_point(a, len, 0.5);
        assert_abs_diff_eq!(mid, a + 0.5 * len, epsilon = 1e-15);
        assert_abs_diff_eq!(jac, 1.5 * len, epsilon = 1e-15);
        assert!(piece_point(0.3, 1e-3, 1.0 - 1e-9).0 <= 0.3 + 1e-3);
        assert!(piece_point(0.3, 1e-3, 1e-6).0 > 0.3);
    }

    #[test]
    fn axis_interpolates_polynomials_exactly() {
        let axis = Axis::new(graded_edges(-1.0, 2.0, 3, false), 8);
        let f = |v: f64| 1.0 - 2.0 * v + v.powi(5);
        let vals: Vec<f64> = axis.nodes.iter().map(|&v| f(v)).collect();
        let mut w = vec![0.0; axis.m];
        for &v in &[-1.0, -0.3, 0.0, 1.0, 1.7, 2.0] {
            let start = axis.weights(v, &mut w);
            let got: f64 = w.iter().zip(&vals[start..]).map(|(a, b)| a * b).sum();
            assert_abs_diff_eq!(got, f(v), epsilon = 1e-11);
        }
        let start = axis.weights(axis.nodes[3] + 1e-17, &mut w);
        assert_eq!(start, 0);
        assert_eq!(w[3], 1.0);
    }

    #[test]
    fn graded_edges_halve_towards_the_end() {
        let e = graded_edges(0.0, 1.0, 3, true);
        assert_eq!(e.len(), 4);
        assert_eq!(e[3], 1.0);
        assert_abs_diff_eq!(e[2] - e[1], 0.5 * (e[1] - e[0]), epsilon = 1e-15);
    }

    #[test]
    fn apply_clips_rounding_but_keeps_nan() {
        let row: Row = vec![(0, 1.0), (1, -1.0)];
        assert_eq!(SeriesSolver::apply(&row, &[1.0, 1.0 + 1e-16]), 0.0);
        assert!(SeriesSolver::apply(&row, &[f64::NAN, 0.0]).is_nan());
    }

    #[test]
    fn spec_validation() {
        assert!(SolverSpec::default().validate().is_ok());
        let bad = SolverSpec { order: 1, ..SolverSpec::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_measure_leaves_the_kernel_unchanged() {
        let g = Gaussian { dim: 1 };
        let v = series(&g, &PerturbingMeasure::zero(), 0.0, 0.3, 1.0, 0.0, &SolverSpec::default()).unwrap();
        assert_eq!(v.ratio(), 1.0);
        assert_eq!(v.series.status, SeriesStatus::Converged);
    }

    #[test]
    fn first_order_ratio_of_lebesgue_is_elapsed_time() {
        let g = Gaussian { dim: 1 };
        let mu = PerturbingMeasure::lebesgue(2.0).unwrap();
        let quad = SolverSpec::default().quad;
        let r = first_order_ratio(&g, &mu, 0.25, 0.4, 1.0, -0.2, &quad).unwrap();
        assert_abs_diff_eq!(r.value, 1.5, epsilon = 1e-7);
    }
}
