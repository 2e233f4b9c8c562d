//! Geometry of the unit torus `[0,1)^d`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{floor, round};

/// Reduce a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let w = x - floor(x);
    // -1e-18 - floor(-1e-18) rounds to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Minimal-image representative of a coordinate difference, in `[-1/2, 1/2)`.
#[inline]
pub fn min_image(dx: f64) -> f64 {
    let r = dx - floor(dx + 0.5);
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

/// A point of the torus; every coordinate lies in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn origin(dim: usize) -> Self {
        TorusPoint {
            coords: alloc::vec![0.0; dim],
        }
    }
}

/// Wrap raw coordinates onto the torus.
pub fn wrap(raw: &[f64]) -> Result<TorusPoint> {
    if raw.is_empty() {
        return Err(Error::invalid("torus point needs at least one coordinate"));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(alloc::format!("non-finite coordinate {bad}")));
    }
    Ok(TorusPoint {
        coords: raw.iter().map(|&x| wrap_coord(x)).collect(),
    })
}

/// Periodic displacement `a - b` with every component in `[-1/2, 1/2)`.
pub fn displacement(a: &TorusPoint, b: &TorusPoint) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(alloc::format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| min_image(x - y))
        .collect())
}

/// Round to the nearest integer multiple of `step`, returning the multiple if
/// `value` sits within `rel_tol` (relative to `step`) of it.
pub(crate) fn as_multiple(value: f64, step: f64, rel_tol: f64) -> Option<u64> {
    if value < 0.0 {
        return None;
    }
    let q = value / step;
    let r = round(q);
    if (q - r).abs() <= rel_tol {
        Some(r as u64)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn wrap_examples() {
        assert!(close(wrap(&[0.3, 0.7]).unwrap().coords(), &[0.3, 0.7]));
        assert!(close(wrap(&[1.25, -0.25]).unwrap().coords(), &[0.25, 0.75]));
        assert_eq!(wrap(&[3.0]).unwrap().coords(), &[0.0]);
        assert!(wrap(&[f64::NAN]).is_err());
        assert!(wrap(&[f64::INFINITY, 0.0]).is_err());
        assert_eq!(wrap(&[-1e-18]).unwrap().coords(), &[0.0]);
    }

    #[test]
    fn displacement_examples() {
        let p = |v: &[f64]| wrap(v).unwrap();
        assert!(close(&displacement(&p(&[0.9]), &p(&[0.1])).unwrap(), &[-0.2]));
        assert!(close(&displacement(&p(&[0.1]), &p(&[0.9])).unwrap(), &[0.2]));
        assert_eq!(
            displacement(&p(&[0.5, 0.5]), &p(&[0.5, 0.5])).unwrap(),
            alloc::vec![0.0, 0.0]
        );
        assert!(displacement(&p(&[0.5]), &p(&[0.5, 0.5])).is_err());
    }

    proptest! {
        #[test]
        fn wrap_round_trips(x in proptest::collection::vec(-50.0f64..50.0, 1..4)) {
            let p = wrap(&x).unwrap();
            for &c in p.coords() {
                prop_assert!((0.0..1.0).contains(&c));
            }
            let d = displacement(&p, &TorusPoint::origin(x.len())).unwrap();
            for (di, xi) in d.iter().zip(&x) {
                prop_assert!((-0.5..0.5).contains(di));
                let k = di - xi;
                prop_assert!((k - round(k)).abs() < 1e-9);
            }
        }

        #[test]
        fn displacement_antisymmetric(a in proptest::collection::vec(0.0f64..1.0, 2),
                                      b in proptest::collection::vec(0.0f64..1.0, 2)) {
            let pa = wrap(&a).unwrap();
            let pb = wrap(&b).unwrap();
            let dab = displacement(&pa, &pb).unwrap();
            let dba = displacement(&pb, &pa).unwrap();
            let on_edge = dab.iter().any(|v| (v.abs() - 0.5).abs() < 1e-12);
            prop_assume!(!on_edge);
            for (x, y) in dab.iter().zip(&dba) {
                prop_assert!((x + y).abs() < 1e-12);
            }
        }
    }
}
