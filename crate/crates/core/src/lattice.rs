//! Discrete derivative operators on periodic/windowed integer lattices.
//!
//! The first and second differences used throughout the crate are
//!
//! ```text
//! (d1 f)_n = (f_{n+1} - f_{n-1}) / 2
//! (d2 f)_n = (f_{n+1} + f_{n-1} - 2 f_n) / 2
//! ```
//!
//! Note the factor 1/2 on `d2`: it is *not* the conventional second
//! difference, and `d2 != d1 ∘ d1` (the composition has stride 2). With this
//! normalization the neighbor reconstruction
//!
//! ```text
//! f_{n±1} = f_n ± (d1 f)_n + (d2 f)_n
//! ```
//!
//! and the product rules
//!
//! ```text
//! d1(f g) = (d1 f) g + f (d1 g) + (d1 f)(d2 g) + (d2 f)(d1 g)
//! ```
//!
//! hold exactly in floating point up to rounding; every identity downstream
//! assumes this normalization.
//!
//! Axes are labeled, and each carries a boundary policy. On a periodic axis
//! the stencils wrap. On a windowed axis results are defined only on interior
//! indices: each derivative shrinks the axis validity window by one on each
//! side, invalid slots are zeroed, and the window must be consulted instead of
//! trusting padded values.

use ndarray::{ArrayD, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use std::ops::Range;

use crate::error::{Error, Result};

/// Axis labels for the four lattice directions used in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AxisLabel {
    /// Base time `j`.
    Time,
    /// Base position `p`.
    Space,
    /// Relative time displacement `n_j`.
    NTime,
    /// Relative position displacement `n_p`.
    NSpace,
}

/// Boundary policy of one lattice axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    Periodic,
    Windowed,
}

/// One labeled axis with its boundary policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisSpec {
    pub label: AxisLabel,
    pub boundary: Boundary,
}

impl AxisSpec {
    pub fn periodic(label: AxisLabel) -> Self {
        Self {
            label,
            boundary: Boundary::Periodic,
        }
    }

    pub fn windowed(label: AxisLabel) -> Self {
        Self {
            label,
            boundary: Boundary::Windowed,
        }
    }
}

/// Stored extents of a walk trajectory: `J` time steps by `N` periodic sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatticeShape {
    pub time_extent: usize,
    pub space_extent: usize,
}

impl LatticeShape {
    /// Validates `N` even and >= 4 (Brillouin grid symmetry) and `J >= 3`
    /// (central time differences need both neighbors).
    pub fn new(time_extent: usize, space_extent: usize) -> Result<Self> {
        if space_extent < 4 || space_extent % 2 != 0 {
            return Err(Error::BadShape(format!(
                "space extent N must be even and >= 4, got {space_extent}"
            )));
        }
        if time_extent < 3 {
            return Err(Error::BadShape(format!(
                "time extent J must be >= 3, got {time_extent}"
            )));
        }
        Ok(Self {
            time_extent,
            space_extent,
        })
    }
}

/// A complex field over one or more labeled lattice axes.
///
/// Carries a per-axis validity window; on periodic axes the window always
/// spans the whole axis, on windowed axes it shrinks under derivatives and
/// out-of-window shifts.
#[derive(Debug, Clone)]
pub struct ComplexLatticeField {
    values: ArrayD<Complex64>,
    axes: Vec<AxisSpec>,
    valid: Vec<Range<usize>>,
}

impl ComplexLatticeField {
    pub fn new(values: ArrayD<Complex64>, axes: Vec<AxisSpec>) -> Result<Self> {
        if values.ndim() != axes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} array axes vs {} axis specs",
                values.ndim(),
                axes.len()
            )));
        }
        let valid = values.shape().iter().map(|&n| 0..n).collect();
        Ok(Self {
            values,
            axes,
            valid,
        })
    }

    /// Field with entries drawn uniformly from the complex unit square and
    /// rescaled so `max |f| = 1`. Used by the machine-precision identity
    /// suites, which state their tolerances on unit-normalized fields.
    pub fn random_unit(
        shape: &[usize],
        axes: Vec<AxisSpec>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut values = ArrayD::zeros(ndarray::IxDyn(shape));
        for v in values.iter_mut() {
            *v = Complex64::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
        }
        let max = values.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if max > 0.0 {
            values.mapv_inplace(|c| c / max);
        }
        Self::new(values, axes)
    }

    pub fn values(&self) -> &ArrayD<Complex64> {
        &self.values
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn valid_range(&self, label: AxisLabel) -> Result<Range<usize>> {
        let ax = self.axis_index(label)?;
        Ok(self.valid[ax].clone())
    }

    fn axis_index(&self, label: AxisLabel) -> Result<usize> {
        self.axes
            .iter()
            .position(|a| a.label == label)
            .ok_or(Error::UnknownAxis(label))
    }

    fn extent(&self, ax: usize) -> usize {
        self.values.shape()[ax]
    }

    /// `out[i] = in[i + offset]` along `ax`, wrapping when periodic and
    /// zero-filling otherwise.
    fn shifted_values(&self, ax: usize, offset: isize, periodic: bool) -> ArrayD<Complex64> {
        let n = self.extent(ax) as isize;
        let mut out = ArrayD::zeros(self.values.raw_dim());
        for i in 0..n {
            let src = if periodic {
                (i + offset).rem_euclid(n)
            } else {
                let s = i + offset;
                if s < 0 || s >= n {
                    continue;
                }
                s
            };
            out.index_axis_mut(Axis(ax), i as usize)
                .assign(&self.values.index_axis(Axis(ax), src as usize));
        }
        out
    }

    fn check_windowed_extent(&self, ax: usize) -> Result<()> {
        if self.axes[ax].boundary == Boundary::Windowed && self.extent(ax) < 3 {
            return Err(Error::AxisTooShort {
                axis: self.axes[ax].label,
                extent: self.extent(ax),
                needed: 3,
            });
        }
        Ok(())
    }

    /// Shrinks the validity window of `ax` by one slot on each side and zeroes
    /// everything that fell out, so stale stencil output cannot be mistaken
    /// for data.
    fn shrink_validity(&mut self, ax: usize) -> Result<()> {
        let r = &self.valid[ax];
        if r.end - r.start < 3 {
            return Err(Error::EmptyValidity {
                axis: self.axes[ax].label,
            });
        }
        let new = (r.start + 1)..(r.end - 1);
        self.valid[ax] = new.clone();
        let n = self.extent(ax);
        for i in (0..n).filter(|i| !new.contains(i)) {
            self.values
                .index_axis_mut(Axis(ax), i)
                .fill(Complex64::ZERO);
        }
        Ok(())
    }

    /// Centered first difference `(f_{i+1} - f_{i-1}) / 2` along `axis`.
    pub fn d1(&self, axis: AxisLabel) -> Result<Self> {
        let ax = self.axis_index(axis)?;
        self.check_windowed_extent(ax)?;
        let periodic = self.axes[ax].boundary == Boundary::Periodic;
        let plus = self.shifted_values(ax, 1, periodic);
        let minus = self.shifted_values(ax, -1, periodic);
        let mut out = self.clone();
        out.values = (plus - minus) * Complex64::new(0.5, 0.0);
        if !periodic {
            out.shrink_validity(ax)?;
        }
        Ok(out)
    }

    /// Half-normalized second difference `(f_{i+1} + f_{i-1} - 2 f_i) / 2`.
    pub fn d2(&self, axis: AxisLabel) -> Result<Self> {
        let ax = self.axis_index(axis)?;
        self.check_windowed_extent(ax)?;
        let periodic = self.axes[ax].boundary == Boundary::Periodic;
        let plus = self.shifted_values(ax, 1, periodic);
        let minus = self.shifted_values(ax, -1, periodic);
        let mut out = self.clone();
        out.values =
            (plus + minus - &self.values * Complex64::new(2.0, 0.0)) * Complex64::new(0.5, 0.0);
        if !periodic {
            out.shrink_validity(ax)?;
        }
        Ok(out)
    }

    /// `result[i] = field[i + offset]` with the axis boundary policy applied.
    pub fn shift(&self, axis: AxisLabel, offset: isize) -> Result<Self> {
        let ax = self.axis_index(axis)?;
        let n = self.extent(ax);
        if offset.unsigned_abs() >= n {
            return Err(Error::ShiftOutOfRange { offset, extent: n });
        }
        let periodic = self.axes[ax].boundary == Boundary::Periodic;
        let mut out = self.clone();
        out.values = self.shifted_values(ax, offset, periodic);
        if !periodic {
            let r = &self.valid[ax];
            let start = (r.start as isize - offset).clamp(0, n as isize) as usize;
            let end = (r.end as isize - offset).clamp(0, n as isize) as usize;
            if start >= end {
                return Err(Error::EmptyValidity {
                    axis: self.axes[ax].label,
                });
            }
            out.valid[ax] = start..end;
            for i in (0..n).filter(|i| !(start..end).contains(i)) {
                out.values
                    .index_axis_mut(Axis(ax), i)
                    .fill(Complex64::ZERO);
            }
        }
        Ok(out)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.values.shape() != other.values.shape() || self.axes != other.axes {
            return Err(Error::ShapeMismatch(
                "fields have different shapes or axis layouts".into(),
            ));
        }
        Ok(())
    }

    /// Elementwise combination; the validity window is the intersection.
    pub fn zip_with(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        ndarray::Zip::from(&mut out.values)
            .and(&other.values)
            .for_each(|a, &b| *a = f(*a, b));
        for (ra, rb) in out.valid.iter_mut().zip(&other.valid) {
            *ra = ra.start.max(rb.start)..ra.end.min(rb.end);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.values.mapv_inplace(|v| v * c);
        out
    }

    /// Max modulus over the jointly valid region.
    pub fn max_abs_on_valid(&self) -> f64 {
        self.values
            .slice_each_axis(|ad| {
                let r = &self.valid[ad.axis.index()];
                ndarray::Slice::from(r.start as isize..r.end as isize)
            })
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// Max modulus of the difference over the intersection of both windows.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.max_abs_on_valid())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    fn ring(values: Vec<Complex64>) -> ComplexLatticeField {
        let n = values.len();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&[n]), values).unwrap();
        ComplexLatticeField::new(arr, vec![AxisSpec::periodic(AxisLabel::Space)]).unwrap()
    }

    fn window(values: Vec<Complex64>) -> ComplexLatticeField {
        let n = values.len();
        let arr = ArrayD::from_shape_vec(ndarray::IxDyn(&[n]), values).unwrap();
        ComplexLatticeField::new(arr, vec![AxisSpec::windowed(AxisLabel::Time)]).unwrap()
    }

    fn random_ring(n: usize, seed: u64) -> ComplexLatticeField {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ComplexLatticeField::random_unit(
            &[n],
            vec![AxisSpec::periodic(AxisLabel::Space)],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn d1_of_constant_is_zero() {
        let f = ring(vec![Complex64::new(2.5, -1.0); 8]);
        assert!(f.d1(AxisLabel::Space).unwrap().max_abs_on_valid() < 1e-15);
    }

    #[test]
    fn d1_of_plane_wave_is_i_sin_kappa() {
        let n = 12usize;
        let m = 5;
        let kappa = 2.0 * PI * m as f64 / n as f64;
        let f = ring(
            (0..n)
                .map(|i| Complex64::from_polar(1.0, kappa * i as f64))
                .collect(),
        );
        let expected = f.scaled(Complex64::new(0.0, kappa.sin()));
        assert!(f.d1(AxisLabel::Space).unwrap().max_abs_diff(&expected).unwrap() <= 1e-13);
    }

    #[test]
    fn d1_of_alternating_field_is_zero() {
        let f = ring(
            (0..8)
                .map(|i| Complex64::new(if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
                .collect(),
        );
        assert!(f.d1(AxisLabel::Space).unwrap().max_abs_on_valid() < 1e-15);
    }

    #[test]
    fn d2_of_constant_is_zero() {
        let f = ring(vec![Complex64::new(-0.3, 0.7); 6]);
        assert!(f.d2(AxisLabel::Space).unwrap().max_abs_on_valid() < 1e-15);
    }

    #[test]
    fn d2_of_plane_wave_is_cos_kappa_minus_one() {
        let n = 16usize;
        let kappa = 2.0 * PI * 3.0 / n as f64;
        let f = ring(
            (0..n)
                .map(|i| Complex64::from_polar(1.0, kappa * i as f64))
                .collect(),
        );
        let expected = f.scaled(Complex64::new(kappa.cos() - 1.0, 0.0));
        assert!(f.d2(AxisLabel::Space).unwrap().max_abs_diff(&expected).unwrap() <= 1e-13);
    }

    #[test]
    fn d2_of_alternating_field_is_minus_two_f() {
        let f = ring(
            (0..8)
                .map(|i| Complex64::new(if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
                .collect(),
        );
        let expected = f.scaled(Complex64::new(-2.0, 0.0));
        assert!(f.d2(AxisLabel::Space).unwrap().max_abs_diff(&expected).unwrap() <= 1e-13);
    }

    #[test]
    fn shift_zero_is_identity_and_shifts_compose() {
        let f = random_ring(10, 7);
        assert!(f.shift(AxisLabel::Space, 0).unwrap().max_abs_diff(&f).unwrap() < 1e-15);
        let roundtrip = f
            .shift(AxisLabel::Space, 1)
            .unwrap()
            .shift(AxisLabel::Space, -1)
            .unwrap();
        assert!(roundtrip.max_abs_diff(&f).unwrap() < 1e-15);
    }

    #[test]
    fn shift_moves_delta_against_offset() {
        let n = 8;
        let mut vals = vec![Complex64::ZERO; n];
        vals[0] = Complex64::ONE;
        let f = ring(vals);
        // result[i] = field[i+1]: the spike lands at index -1 (mod n).
        let g = f.shift(AxisLabel::Space, 1).unwrap();
        assert_eq!(g.values()[[n - 1]], Complex64::ONE);
        assert_eq!(g.values()[[0]], Complex64::ZERO);
    }

    #[test]
    fn windowed_derivative_shrinks_validity_and_zeroes_outside() {
        let f = window((0..6).map(|i| Complex64::new(i as f64, 0.0)).collect());
        let d = f.d1(AxisLabel::Time).unwrap();
        assert_eq!(d.valid_range(AxisLabel::Time).unwrap(), 1..5);
        assert_eq!(d.values()[[0]], Complex64::ZERO);
        assert_eq!(d.values()[[5]], Complex64::ZERO);
        assert_eq!(d.values()[[2]], Complex64::ONE);
    }

    #[test]
    fn windowed_axis_too_short_errors() {
        let f = window(vec![Complex64::ONE; 2]);
        assert!(matches!(
            f.d1(AxisLabel::Time),
            Err(Error::AxisTooShort { .. })
        ));
    }

    #[test]
    fn unknown_axis_errors() {
        let f = ring(vec![Complex64::ONE; 4]);
        assert!(matches!(
            f.d1(AxisLabel::NTime),
            Err(Error::UnknownAxis(AxisLabel::NTime))
        ));
    }

    #[test]
    fn shift_out_of_range_on_window_errors() {
        let f = window(vec![Complex64::ONE; 4]);
        assert!(matches!(
            f.shift(AxisLabel::Time, 4),
            Err(Error::ShiftOutOfRange { .. })
        ));
    }

    /// Neighbor reconstruction: shift(f, +1) = f + d1 f + d2 f and
    /// shift(f, -1) = f - d1 f + d2 f.
    #[test]
    fn inversion_identities_on_random_fields() {
        for seed in 0..20 {
            let f = random_ring(32, seed);
            let d1 = f.d1(AxisLabel::Space).unwrap();
            let d2 = f.d2(AxisLabel::Space).unwrap();
            let plus = f.add(&d1).unwrap().add(&d2).unwrap();
            let minus = f.sub(&d1).unwrap().add(&d2).unwrap();
            assert!(
                f.shift(AxisLabel::Space, 1).unwrap().max_abs_diff(&plus).unwrap() <= 1e-13
            );
            assert!(
                f.shift(AxisLabel::Space, -1).unwrap().max_abs_diff(&minus).unwrap() <= 1e-13
            );
        }
    }

    #[test]
    fn product_rule_on_random_fields() {
        for seed in 100..110 {
            let f = random_ring(24, seed);
            let g = random_ring(24, seed + 1000);
            let lhs = f.mul(&g).unwrap().d1(AxisLabel::Space).unwrap();
            let d1f = f.d1(AxisLabel::Space).unwrap();
            let d1g = g.d1(AxisLabel::Space).unwrap();
            let d2f = f.d2(AxisLabel::Space).unwrap();
            let d2g = g.d2(AxisLabel::Space).unwrap();
            let rhs = d1f
                .mul(&g)
                .unwrap()
                .add(&f.mul(&d1g).unwrap())
                .unwrap()
                .add(&d1f.mul(&d2g).unwrap())
                .unwrap()
                .add(&d2f.mul(&d1g).unwrap())
                .unwrap();
            assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-13);
        }
    }

    proptest! {
        #[test]
        fn d1_linearity(seed in 0u64..1000, re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let alpha = Complex64::new(re, im);
            let f = random_ring(16, seed);
            let g = random_ring(16, seed.wrapping_add(1));
            let lhs = f.scaled(alpha).add(&g).unwrap().d1(AxisLabel::Space).unwrap();
            let rhs = f.d1(AxisLabel::Space).unwrap().scaled(alpha)
                .add(&g.d1(AxisLabel::Space).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-13);
        }

        #[test]
        fn derivatives_commute_with_shift_on_periodic_axes(
            seed in 0u64..1000, offset in -7isize..8
        ) {
            let f = random_ring(16, seed);
            let a = f.shift(AxisLabel::Space, offset).unwrap().d1(AxisLabel::Space).unwrap();
            let b = f.d1(AxisLabel::Space).unwrap().shift(AxisLabel::Space, offset).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-14);
            let c = f.shift(AxisLabel::Space, offset).unwrap().d2(AxisLabel::Space).unwrap();
            let d = f.d2(AxisLabel::Space).unwrap().shift(AxisLabel::Space, offset).unwrap();
            prop_assert!(c.max_abs_diff(&d).unwrap() <= 1e-14);
        }
    }
}
