//! Probe functions for the bounded-Lipschitz proxy distance. Every probe takes
//! values in `[0, 1]` and is 1-Lipschitz.

use serde::{Deserialize, Serialize};

use super::ParticleMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Probe {
    /// `clamp(x_coord - shift, 0, 1)`.
    Ramp { coord: usize, shift: f64 },
    /// `exp(-|x - center|^2 / (2 width^2))`; 1-Lipschitz for `width >= e^{-1/2}`.
    Gaussian { center: Vec<f64>, width: f64 },
}

impl Probe {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Probe::Ramp { coord, shift } => (x[*coord] - shift).clamp(0.0, 1.0),
            Probe::Gaussian { center, width } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    probes: Vec<Probe>,
}

impl ProbeSet {
    pub fn new(probes: Vec<Probe>) -> Self {
        assert!(!probes.is_empty(), "probe set must be nonempty");
        ProbeSet { probes }
    }

    /// 32 ramps with shifts spread over `[lo, hi)` (cycling through the coordinates)
    /// and 32 unit-width Gaussians centred on the diagonal of the box.
    pub fn on_box(dim: usize, lo: f64, hi: f64) -> Self {
        let k = 32;
        let step = (hi - lo) / k as f64;
        let mut probes = Vec::with_capacity(2 * k);
        for i in 0..k {
            probes.push(Probe::Ramp {
                coord: i % dim,
                shift: lo + i as f64 * step,
            });
        }
        for i in 0..k {
            let c = lo + (i as f64 + 0.5) * step;
            probes.push(Probe::Gaussian {
                center: vec![c; dim],
                width: 1.0,
            });
        }
        ProbeSet { probes }
    }

    /// The shipped 64-function set on `[-4, 4]^dim`.
    pub fn default_for(dim: usize) -> Self {
        ProbeSet::on_box(dim, -4.0, 4.0)
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }
    pub fn len(&self) -> usize {
        self.probes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }
}

/// `max_phi |mu1(phi) - mu2(phi)|` over the probe set.
pub fn distance_bl(mu1: &ParticleMeasure, mu2: &ParticleMeasure, probes: &ProbeSet) -> f64 {
    probes
        .probes
        .iter()
        .map(|p| (mu1.integrate(|x| p.eval(x)) - mu2.integrate(|x| p.eval(x))).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn delta(x: f64, mass: f64) -> ParticleMeasure {
        ParticleMeasure::new(1, vec![x], vec![mass]).unwrap()
    }

    #[test]
    fn default_set_shape() {
        let p = ProbeSet::default_for(1);
        assert_eq!(p.len(), 64);
        assert!(p.probes().contains(&Probe::Ramp {
            coord: 0,
            shift: 0.0
        }));
    }

    #[test]
    fn point_masses_at_distance_one() {
        let p = ProbeSet::default_for(1);
        assert_eq!(distance_bl(&delta(0.0, 1.0), &delta(1.0, 1.0), &p), 1.0);
        assert_eq!(distance_bl(&delta(0.3, 1.0), &delta(0.3, 1.0), &p), 0.0);
    }

    #[test]
    fn mass_gap_bound() {
        // delta_0 with mass 2 vs mass 1: brute-force maximum over the set equals
        // sup_phi phi(0), which is the largest probe value at the origin.
        let p = ProbeSet::default_for(1);
        let brute = p
            .probes()
            .iter()
            .map(|f| f.eval(&[0.0]))
            .fold(0.0, f64::max);
        let d = distance_bl(&delta(0.0, 2.0), &delta(0.0, 1.0), &p);
        assert_eq!(d, brute);
        assert!(d <= 1.0);
    }

    #[test]
    fn probes_are_bounded_and_lipschitz() {
        let p = ProbeSet::default_for(2);
        for f in p.probes() {
            for i in 0..400 {
                let a = [-6.0 + 0.03 * i as f64, 0.5 - 0.01 * i as f64];
                let b = [a[0] + 1e-3, a[1] - 2e-3];
                let (fa, fb) = (f.eval(&a), f.eval(&b));
                assert!((0.0..=1.0).contains(&fa));
                let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                assert!((fa - fb).abs() <= dist * (1.0 + 1e-9));
            }
        }
    }

    fn measure(pts: &[f64], ws: &[f64]) -> ParticleMeasure {
        ParticleMeasure::new(1, pts.to_vec(), ws.to_vec()).unwrap()
    }

    proptest! {
        #[test]
        fn pseudometric(
            a in prop::collection::vec((-5.0f64..5.0, 0.0f64..1.0), 1..8),
            b in prop::collection::vec((-5.0f64..5.0, 0.0f64..1.0), 1..8),
            c in prop::collection::vec((-5.0f64..5.0, 0.0f64..1.0), 1..8),
        ) {
            let p = ProbeSet::default_for(1);
            let mk = |v: &Vec<(f64, f64)>| {
                let (x, w): (Vec<f64>, Vec<f64>) = v.iter().cloned().unzip();
                measure(&x, &w)
            };
            let (ma, mb, mc) = (mk(&a), mk(&b), mk(&c));
            prop_assert_eq!(distance_bl(&ma, &ma, &p), 0.0);
            prop_assert_eq!(distance_bl(&ma, &mb, &p), distance_bl(&mb, &ma, &p));
            prop_assert!(distance_bl(&ma, &mc, &p) <= distance_bl(&ma, &mb, &p) + distance_bl(&mb, &mc, &p) + 1e-12);
        }
    }
}
