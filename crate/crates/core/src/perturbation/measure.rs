//! Perturbing measures on space-time: a density part `q(u, z) du dm(z)` plus
//! atoms in time `eta_i eps_{u_i} ⊗ m`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Open(f64),
    Closed(f64),
    Unbounded,
}

/// Interval of the real line with any mix of open, closed and infinite ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Bound,
    pub hi: Bound,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: Bound::Unbounded,
        hi: Bound::Unbounded,
    };

    pub const EMPTY: Interval = Interval {
        lo: Bound::Open(0.0),
        hi: Bound::Open(0.0),
    };

    pub fn closed(a: f64, b: f64) -> Self {
        Interval {
            lo: Bound::Closed(a),
            hi: Bound::Closed(b),
        }
    }

    pub fn open(a: f64, b: f64) -> Self {
        Interval {
            lo: Bound::Open(a),
            hi: Bound::Open(b),
        }
    }

    /// `[a, b)`.
    pub fn left_closed(a: f64, b: f64) -> Self {
        Interval {
            lo: Bound::Closed(a),
            hi: Bound::Open(b),
        }
    }

    /// `[a, inf)`.
    pub fn at_least(a: f64) -> Self {
        Interval {
            lo: Bound::Closed(a),
            hi: Bound::Unbounded,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        let lo_ok = match self.lo {
            Bound::Open(a) => v > a,
            Bound::Closed(a) => v >= a,
            Bound::Unbounded => true,
        };
        let hi_ok = match self.hi {
            Bound::Open(b) => v < b,
            Bound::Closed(b) => v <= b,
            Bound::Unbounded => true,
        };
        lo_ok && hi_ok
    }

    pub fn lower(&self) -> f64 {
        match self.lo {
            Bound::Open(a) | Bound::Closed(a) => a,
            Bound::Unbounded => f64::NEG_INFINITY,
        }
    }

    pub fn upper(&self) -> f64 {
        match self.hi {
            Bound::Open(b) | Bound::Closed(b) => b,
            Bound::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_empty(&self) -> bool {
        let (a, b) = (self.lower(), self.upper());
        if a > b {
            return true;
        }
        a == b && !(matches!(self.lo, Bound::Closed(_)) && matches!(self.hi, Bound::Closed(_)))
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = match (self.lo, other.lo) {
            (Bound::Unbounded, b) | (b, Bound::Unbounded) => b,
            (x, y) => {
                let (a, b) = (bound_value(x), bound_value(y));
                if a > b || (a == b && matches!(x, Bound::Open(_))) {
                    x
                } else {
                    y
                }
            }
        };
        let hi = match (self.hi, other.hi) {
            (Bound::Unbounded, b) | (b, Bound::Unbounded) => b,
            (x, y) => {
                let (a, b) = (bound_value(x), bound_value(y));
                if a < b || (a == b && matches!(x, Bound::Open(_))) {
                    x
                } else {
                    y
                }
            }
        };
        Interval { lo, hi }
    }

    /// Every point of `self` precedes every point of `other`.
    pub fn precedes(&self, other: &Interval) -> bool {
        if self.is_empty() || other.is_empty() {
            return true;
        }
        let (a, b) = (self.upper(), other.lower());
        a < b || (a == b && (matches!(self.hi, Bound::Open(_)) || matches!(other.lo, Bound::Open(_))))
    }
}

fn bound_value(b: Bound) -> f64 {
    match b {
        Bound::Open(v) | Bound::Closed(v) => v,
        Bound::Unbounded => f64::NAN,
    }
}

/// Density `q(u, z)` of the absolutely continuous part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Density {
    Zero,
    /// `lambda`.
    Const { lambda: f64 },
    /// `c (u + z)^(-p)` for `u, z > 0`.
    Q0 { c: f64, p: f64 },
    /// `|z|^(-1 + eps)`.
    Power { eps: f64 },
    /// `q(-u, -z)`.
    Reflect { inner: Box<Density> },
}

impl Density {
    pub fn eval(&self, u: f64, z: &[f64]) -> f64 {
        match self {
            Density::Zero => 0.0,
            Density::Const { lambda } => *lambda,
            Density::Q0 { c, p } => {
                let z0 = z[0];
                if u > 0.0 && z0 > 0.0 {
                    c * (u + z0).powf(-p)
                } else {
                    0.0
                }
            }
            Density::Power { eps } => {
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.powf(eps - 1.0)
            }
            Density::Reflect { inner } => {
                let mz: Vec<f64> = z.iter().map(|v| -v).collect();
                inner.eval(-u, &mz)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Density::Zero => true,
            Density::Const { lambda } => *lambda == 0.0,
            Density::Q0 { c, .. } => *c == 0.0,
            Density::Power { .. } => false,
            Density::Reflect { inner } => inner.is_zero(),
        }
    }

    /// Whether `q` depends on `z` at all.
    pub fn is_spatially_constant(&self) -> bool {
        match self {
            Density::Zero | Density::Const { .. } => true,
            Density::Reflect { inner } => inner.is_spatially_constant(),
            _ => false,
        }
    }

    pub fn reflect(&self) -> Density {
        match self {
            Density::Reflect { inner } => (**inner).clone(),
            Density::Zero | Density::Const { .. } => self.clone(),
            other => Density::Reflect {
                inner: Box::new(other.clone()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Density::Zero => Ok(()),
            Density::Const { lambda } if *lambda >= 0.0 && lambda.is_finite() => Ok(()),
            Density::Q0 { c, p } if *c >= 0.0 && c.is_finite() && *p > 0.0 && *p < 0.5 => Ok(()),
            Density::Power { eps } if *eps > 0.0 && *eps <= 1.0 => Ok(()),
            Density::Reflect { inner } => inner.validate(),
            other => Err(invalid(format!("density parameters out of range: {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub u: f64,
    pub eta: f64,
}

/// `q(u, z) 1_I(u) 1_D(u + z) du dm(z) + sum_i eta_i eps_{u_i} ⊗ m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbingMeasure {
    density: Density,
    atoms: Vec<Atom>,
    support: Interval,
    /// Restriction of the density part to `{u + z ∈ D}`; used for the
    /// level-line slices of the two-subordinator example.
    diagonal: Option<Interval>,
}

impl PerturbingMeasure {
    pub fn new(density: Density, atoms: Vec<Atom>) -> Result<Self> {
        density.validate()?;
        for a in &atoms {
            if !(a.eta > 0.0 && a.eta.is_finite() && a.u.is_finite()) {
                return Err(invalid(format!("atom weights must be positive, got {a:?}")));
            }
        }
        if atoms.windows(2).any(|w| w[1].u <= w[0].u) {
            return Err(invalid("atom times must be strictly increasing"));
        }
        Ok(PerturbingMeasure {
            density,
            atoms,
            support: Interval::REAL_LINE,
            diagonal: None,
        })
    }

    pub fn zero() -> Self {
        PerturbingMeasure {
            density: Density::Zero,
            atoms: Vec::new(),
            support: Interval::REAL_LINE,
            diagonal: None,
        }
    }

    pub fn lebesgue(lambda: f64) -> Result<Self> {
        Self::new(Density::Const { lambda }, Vec::new())
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn diagonal(&self) -> Option<Interval> {
        self.diagonal
    }

    /// Atoms inside the time support.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `mu_I(A) = mu(A ∩ (I × X))`.
    pub fn restrict(&self, interval: &Interval) -> PerturbingMeasure {
        let support = self.support.intersect(interval);
        PerturbingMeasure {
            density: self.density.clone(),
            atoms: self.atoms.iter().copied().filter(|a| support.contains(a.u)).collect(),
            support,
            diagonal: self.diagonal,
        }
    }

    /// Restricts the density part to `{u + z ∈ band}`. Atoms are dropped.
    pub fn restrict_diagonal(&self, band: &Interval) -> PerturbingMeasure {
        let diagonal = Some(match self.diagonal {
            Some(d) => d.intersect(band),
            None => *band,
        });
        PerturbingMeasure {
            density: self.density.clone(),
            atoms: Vec::new(),
            support: self.support,
            diagonal,
        }
    }

    /// Density of the continuous part at `(u, z)`, zero off the support.
    pub fn q(&self, u: f64, z: &[f64]) -> f64 {
        if !self.support.contains(u) {
            return 0.0;
        }
        if let Some(d) = &self.diagonal {
            if !d.contains(u + z[0]) {
                return 0.0;
            }
        }
        self.density.eval(u, z)
    }

    pub fn has_density(&self) -> bool {
        !self.density.is_zero() && !self.support.is_empty() && !self.diagonal.is_some_and(|d| d.is_empty())
    }

    pub fn is_zero(&self) -> bool {
        !self.has_density() && self.atoms.is_empty()
    }

    /// Mirror image under `(u, z) -> (-u, -z)`.
    pub fn reflect(&self) -> PerturbingMeasure {
        let flip = |b: Bound| match b {
            Bound::Open(v) => Bound::Open(-v),
            Bound::Closed(v) => Bound::Closed(-v),
            Bound::Unbounded => Bound::Unbounded,
        };
        let flip_iv = |i: Interval| Interval {
            lo: flip(i.hi),
            hi: flip(i.lo),
        };
        let mut atoms: Vec<Atom> = self.atoms.iter().map(|a| Atom { u: -a.u, eta: a.eta }).collect();
        atoms.reverse();
        PerturbingMeasure {
            density: self.density.reflect(),
            atoms,
            support: flip_iv(self.support),
            diagonal: self.diagonal.map(flip_iv),
        }
    }

    /// Finite time points where the measure changes character.
    pub fn time_breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.atoms.iter().map(|a| a.u).collect();
        for v in [self.support.lower(), self.support.upper()] {
            if v.is_finite() {
                out.push(v);
            }
        }
        out
    }
}

/// JSON form of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    #[serde(default = "zero_density")]
    pub density: Density,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    /// Closed time support `[a, b]`; absent or null means the whole line.
    #[serde(default)]
    pub support: Option<[f64; 2]>,
}

fn zero_density() -> Density {
    Density::Zero
}

impl MeasureSpec {
    pub fn build(&self) -> Result<PerturbingMeasure> {
        let m = PerturbingMeasure::new(self.density.clone(), self.atoms.clone())?;
        Ok(match self.support {
            Some([a, b]) => m.restrict(&Interval::closed(a, b)),
            None => m,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_examples() {
        let m = PerturbingMeasure::new(Density::Const { lambda: 1.0 }, vec![Atom { u: 1.0, eta: 0.5 }]).unwrap();
        assert_eq!(m.restrict(&Interval::REAL_LINE), m);
        let empty = m.restrict(&Interval::EMPTY);
        assert!(empty.is_zero());
        assert!(m.restrict(&Interval::left_closed(0.0, 1.0)).atoms().is_empty());
        assert_eq!(m.restrict(&Interval::closed(0.0, 1.0)).atoms().len(), 1);
        let once = m.restrict(&Interval::open(0.0, 2.0));
        assert_eq!(once.restrict(&Interval::open(0.0, 2.0)), once);
    }

    #[test]
    fn interval_order_and_intersection() {
        let a = Interval::left_closed(0.0, 1.0);
        let b = Interval::left_closed(1.0, 2.0);
        assert!(a.precedes(&b));
        assert!(!b.precedes(&a));
        assert!(a.intersect(&b).is_empty());
        assert!(!Interval::closed(0.0, 1.0).intersect(&Interval::closed(1.0, 2.0)).is_empty());
        assert_eq!(Interval::REAL_LINE.intersect(&a), a);
    }

    #[test]
    fn invalid_measures_are_rejected() {
        assert!(PerturbingMeasure::new(Density::Zero, vec![Atom { u: 0.0, eta: 0.0 }]).is_err());
        let unordered = vec![Atom { u: 1.0, eta: 0.1 }, Atom { u: 0.5, eta: 0.1 }];
        assert!(PerturbingMeasure::new(Density::Zero, unordered).is_err());
        assert!(PerturbingMeasure::new(Density::Q0 { c: 1.0, p: 0.7 }, vec![]).is_err());
    }

    #[test]
    fn q0_and_reflection() {
        let m = PerturbingMeasure::new(Density::Q0 { c: 2.0, p: 0.25 }, vec![Atom { u: 0.5, eta: 0.3 }]).unwrap();
        assert_eq!(m.q(1.0, &[15.0]), 2.0 * 16f64.powf(-0.25));
        assert_eq!(m.q(-1.0, &[3.0]), 0.0);
        let r = m.reflect();
        assert_eq!(r.q(-1.0, &[-15.0]), m.q(1.0, &[15.0]));
        assert_eq!(r.atoms()[0].u, -0.5);
        assert_eq!(r.reflect(), m);
    }

    #[test]
    fn spec_from_json() {
        let text = r#"{"density":{"kind":"q0","c":0.05,"p":0.25},"atoms":[{"u":0.5,"eta":0.2}],"support":[0,1]}"#;
        let spec: MeasureSpec = serde_json::from_str(text).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.support(), Interval::closed(0.0, 1.0));
        let text = r#"{"density":{"kind":"const","lambda":1.0},"support":null}"#;
        let m = serde_json::from_str::<MeasureSpec>(text).unwrap().build().unwrap();
        assert_eq!(m.support(), Interval::REAL_LINE);
    }
}
