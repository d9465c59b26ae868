//! Cartesian/polar resampling, radial sampling density and halo profiles.
//!
//! Angles are measured from the +column axis toward +row (downwards in
//! raster coordinates). Row `r` of a polar image samples radius
//! `(r + 0.5) * r_max / R`; column `t` samples angle `2 pi t / T`.

use std::f64::consts::PI;
use std::rc::Rc;

use crate::autograd::SparseMap;
use crate::error::{Error, Result};
use crate::mnist::{Image, IMAGE_PIXELS, IMAGE_SIDE};

pub const MIN_RADII: usize = 2;
pub const MIN_ANGLES: usize = 4;

/// Resolution and placement of the polar sampling grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarGrid {
    pub n_radii: usize,
    pub n_angles: usize,
    pub r_max: f64,
    /// Center as (column, row) in pixel coordinates.
    pub center: (f64, f64),
}

impl Default for PolarGrid {
    fn default() -> Self {
        PolarGrid {
            n_radii: 16,
            n_angles: 32,
            r_max: 14.0,
            center: (13.5, 13.5),
        }
    }
}

impl PolarGrid {
    pub fn new(n_radii: usize, n_angles: usize) -> Result<Self> {
        let g = PolarGrid {
            n_radii,
            n_angles,
            ..PolarGrid::default()
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_radii < MIN_RADII {
            return Err(Error::Parameter(format!("need at least {MIN_RADII} radii, got {}", self.n_radii)));
        }
        if self.n_angles < MIN_ANGLES {
            return Err(Error::Parameter(format!("need at least {MIN_ANGLES} angles, got {}", self.n_angles)));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::Parameter(format!("r_max must be positive, got {}", self.r_max)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_radii * self.n_angles
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn radius(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.r_max / self.n_radii as f64
    }

    pub fn angle(&self, col: usize) -> f64 {
        2.0 * PI * col as f64 / self.n_angles as f64
    }

    /// Linear map from a flattened 28x28 raster to the flattened polar grid.
    pub fn forward_map(&self) -> Result<SparseMap> {
        self.validate()?;
        let mut rows = Vec::with_capacity(self.len());
        for r in 0..self.n_radii {
            let rad = self.radius(r);
            for t in 0..self.n_angles {
                let th = self.angle(t);
                let x = self.center.0 + rad * th.cos();
                let y = self.center.1 + rad * th.sin();
                rows.push(bilinear_taps(x, y));
            }
        }
        SparseMap::new(IMAGE_PIXELS, rows)
    }

    /// Linear map from the flattened polar grid back to a 28x28 raster.
    /// Pixels beyond `r_max` read nothing. Values are not clamped here.
    pub fn inverse_map(&self) -> Result<SparseMap> {
        self.validate()?;
        let mut rows = Vec::with_capacity(IMAGE_PIXELS);
        for i in 0..IMAGE_SIDE {
            for j in 0..IMAGE_SIDE {
                let u = j as f64 - self.center.0;
                let v = i as f64 - self.center.1;
                rows.push(self.polar_taps(u.hypot(v), v.atan2(u)));
            }
        }
        SparseMap::new(self.len(), rows)
    }

    /// Interpolation taps into the polar grid for the point at `(r, theta)`.
    /// Radially clamps to the first/last ring; angularly wraps.
    fn polar_taps(&self, r: f64, theta: f64) -> Vec<(usize, f64)> {
        if r > self.r_max {
            return Vec::new();
        }
        let nr = self.n_radii;
        let na = self.n_angles;
        let rho = r * nr as f64 / self.r_max - 0.5;
        let (r0, r1, fr) = if rho <= 0.0 {
            (0, 0, 0.0)
        } else if rho >= (nr - 1) as f64 {
            (nr - 1, nr - 1, 0.0)
        } else {
            let f = rho.floor();
            (f as usize, f as usize + 1, rho - f)
        };
        let tau = theta.rem_euclid(2.0 * PI) * na as f64 / (2.0 * PI);
        let f = tau.floor();
        let ft = tau - f;
        let t0 = (f as usize) % na;
        let t1 = (t0 + 1) % na;
        let mut taps = Vec::with_capacity(4);
        for (rr, wr) in [(r0, 1.0 - fr), (r1, fr)] {
            for (tt, wt) in [(t0, 1.0 - ft), (t1, ft)] {
                let w = wr * wt;
                if w != 0.0 {
                    taps.push((rr * na + tt, w));
                }
            }
        }
        taps
    }
}

/// Bilinear taps into a 28x28 raster at continuous `(x = col, y = row)`;
/// neighbors outside the raster contribute zero.
fn bilinear_taps(x: f64, y: f64) -> Vec<(usize, f64)> {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut taps = Vec::with_capacity(4);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            let w = wy * wx;
            if w != 0.0 && yy >= 0.0 && xx >= 0.0 && (yy as usize) < IMAGE_SIDE && (xx as usize) < IMAGE_SIDE {
                taps.push((yy as usize * IMAGE_SIDE + xx as usize, w));
            }
        }
    }
    taps
}

/// An `R x T` grid of polar samples, row-major by radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarImage {
    pub grid: PolarGrid,
    data: Vec<f64>,
}

impl PolarImage {
    pub fn new(grid: PolarGrid, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::Shape(format!("polar grid needs {} samples, got {}", grid.len(), data.len())));
        }
        Ok(PolarImage { grid, data })
    }

    pub fn constant(grid: PolarGrid, value: f64) -> Result<Self> {
        PolarImage::new(grid, vec![value; grid.len()])
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, t: usize) -> f64 {
        self.data[r * self.grid.n_angles + t]
    }

    pub fn set(&mut self, r: usize, t: usize, v: f64) {
        self.data[r * self.grid.n_angles + t] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let na = self.grid.n_angles;
        &self.data[r * na..(r + 1) * na]
    }

    /// Interpolated value at continuous polar coordinates, 0 beyond `r_max`.
    pub fn sample_at(&self, r: f64, theta: f64) -> f64 {
        self.grid
            .polar_taps(r, theta)
            .iter()
            .map(|&(i, w)| w * self.data[i])
            .sum()
    }

    /// Circular shift of the angle columns: column `t` moves to `t + shift`.
    pub fn roll_angles(&self, shift: isize) -> PolarImage {
        let na = self.grid.n_angles as isize;
        let mut out = self.clone();
        for r in 0..self.grid.n_radii {
            for t in 0..self.grid.n_angles {
                let dst = (t as isize + shift).rem_euclid(na) as usize;
                out.set(r, dst, self.get(r, t));
            }
        }
        out
    }
}

/// Resamples onto the polar grid; points off the raster read as 0.
pub fn to_polar(img: &Image, grid: &PolarGrid) -> Result<PolarImage> {
    let map = grid.forward_map()?;
    let mut data = vec![0.0; grid.len()];
    map.apply(img.pixels(), &mut data);
    PolarImage::new(*grid, data)
}

/// Maps a polar image back to a 28x28 raster clamped to `[0, 1]`.
pub fn from_polar(p: &PolarImage) -> Image {
    let map = p.grid.inverse_map().expect("grid validated at construction");
    from_polar_with(&map, p.data())
}

pub(crate) fn from_polar_with(inverse: &SparseMap, polar: &[f64]) -> Image {
    let mut px = vec![0.0; IMAGE_PIXELS];
    inverse.apply(polar, &mut px);
    px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Image::new(px).expect("clamped raster")
}

/// Precomputed forward and inverse maps for repeated resampling.
#[derive(Debug, Clone)]
pub struct PolarTransform {
    pub grid: PolarGrid,
    pub forward: Rc<SparseMap>,
    pub inverse: Rc<SparseMap>,
}

impl PolarTransform {
    pub fn new(grid: PolarGrid) -> Result<Self> {
        Ok(PolarTransform {
            grid,
            forward: Rc::new(grid.forward_map()?),
            inverse: Rc::new(grid.inverse_map()?),
        })
    }

    pub fn to_polar(&self, img: &Image) -> PolarImage {
        let mut data = vec![0.0; self.grid.len()];
        self.forward.apply(img.pixels(), &mut data);
        PolarImage {
            grid: self.grid,
            data,
        }
    }

    pub fn from_polar(&self, p: &[f64]) -> Image {
        from_polar_with(&self.inverse, p)
    }
}

/// Number of polar samples per unit arc length at radius `r`.
pub fn sampling_density(r: f64) -> Result<f64> {
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::Domain(format!("sampling density is undefined at r = {r}")));
    }
    Ok(1.0 / r)
}

/// Per-radius reconstruction error of a polar image.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloProfile {
    pub rmse: Vec<f64>,
    pub components: usize,
}

impl HaloProfile {
    /// Spearman rank correlation between radius index and RMSE.
    pub fn radius_correlation(&self) -> f64 {
        let radii: Vec<f64> = (0..self.rmse.len()).map(|r| r as f64).collect();
        spearman(&radii, &self.rmse)
    }
}

pub fn halo_profile(original: &PolarImage, reconstructed: &PolarImage, components: usize) -> Result<HaloProfile> {
    let (a, b) = (&original.grid, &reconstructed.grid);
    if (a.n_radii, a.n_angles) != (b.n_radii, b.n_angles) {
        return Err(Error::Shape(format!(
            "polar grids differ: {}x{} vs {}x{}",
            a.n_radii, a.n_angles, b.n_radii, b.n_angles
        )));
    }
    let rmse = (0..a.n_radii)
        .map(|r| {
            let ms = original
                .row(r)
                .iter()
                .zip(reconstructed.row(r))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.n_angles as f64;
            ms.sqrt()
        })
        .collect();
    Ok(HaloProfile { rmse, components })
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_radius_ok(grid: &PolarGrid, i: usize, j: usize) -> bool {
        let u = j as f64 - grid.center.0;
        let v = i as f64 - grid.center.1;
        u.hypot(v) <= grid.r_max
    }

    #[test]
    fn constant_image_gives_constant_interior_samples() {
        let grid = PolarGrid::default();
        let img = Image::new(vec![0.6; IMAGE_PIXELS]).unwrap();
        let p = to_polar(&img, &grid).unwrap();
        // Radii up to 13.5 stay inside the raster at every angle.
        for r in 0..grid.n_radii {
            if grid.radius(r) + 1e-9 < 13.5 {
                for &v in p.row(r) {
                    assert!((v - 0.6).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn center_pixel_is_local() {
        let grid = PolarGrid::default();
        let mut img = Image::zeros();
        img.set(13, 13, 1.0);
        img.set(14, 14, 1.0);
        img.set(13, 14, 1.0);
        img.set(14, 13, 1.0);
        let p = to_polar(&img, &grid).unwrap();
        assert!(p.row(0).iter().all(|&v| v > 0.5));
        for r in 4..grid.n_radii {
            assert!(p.row(r).iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn parameter_minimums() {
        assert!(matches!(PolarGrid::new(1, 32), Err(Error::Parameter(_))));
        assert!(matches!(PolarGrid::new(16, 3), Err(Error::Parameter(_))));
        assert!(PolarGrid::new(2, 4).is_ok());
    }

    #[test]
    fn constant_polar_gives_constant_disk() {
        let grid = PolarGrid::default();
        let img = from_polar(&PolarImage::constant(grid, 0.3).unwrap());
        for i in 0..IMAGE_SIDE {
            for j in 0..IMAGE_SIDE {
                let want = if disk_radius_ok(&grid, i, j) { 0.3 } else { 0.0 };
                assert!((img.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_output_is_clamped() {
        let grid = PolarGrid::default();
        let data: Vec<f64> = (0..grid.len()).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let img = from_polar(&PolarImage::new(grid, data).unwrap());
        assert!(img.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn angular_wrap_has_no_seam() {
        let grid = PolarGrid::default();
        let mut p = PolarImage::constant(grid, 0.0).unwrap();
        for r in 0..grid.n_radii {
            p.set(r, grid.n_angles - 1, 1.0);
        }
        let eps = 1e-9;
        let mut worst: f64 = 0.0;
        for k in 1..200 {
            let r = k as f64 * grid.r_max / 200.0;
            worst = worst.max((p.sample_at(r, 2.0 * PI - eps) - p.sample_at(r, eps)).abs());
        }
        assert!(worst < 0.05, "seam discontinuity {worst}");
        // The blob straddles the last column's angle.
        let ang = grid.angle(grid.n_angles - 1);
        assert!(p.sample_at(8.0, ang) > 0.99);
        assert!(p.sample_at(8.0, ang + PI / 64.0) > 0.3);
        assert!(p.sample_at(8.0, ang - PI / 64.0) > 0.3);
    }

    #[test]
    fn bright_first_column_is_mirror_symmetric_across_seam() {
        let grid = PolarGrid::default();
        let mut p = PolarImage::constant(grid, 0.0).unwrap();
        for r in 0..grid.n_radii {
            p.set(r, 0, 1.0);
        }
        let img = from_polar(&p);
        let mut worst: f64 = 0.0;
        for d in 0..14 {
            for c in 0..IMAGE_SIDE {
                worst = worst.max((img.get(13 - d, c) - img.get(14 + d, c)).abs());
            }
        }
        assert!(worst < 0.05, "asymmetry across theta = 0: {worst}");
        assert!(img.get(13, 24) > 0.5);
    }

    #[test]
    fn density_is_reciprocal() {
        assert_eq!(sampling_density(1.0).unwrap(), 1.0);
        assert_eq!(sampling_density(2.0).unwrap(), 0.5);
        assert!(matches!(sampling_density(0.0), Err(Error::Domain(_))));
        assert!(matches!(sampling_density(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn halo_identity_and_outer_offset() {
        let grid = PolarGrid::default();
        let data: Vec<f64> = (0..grid.len()).map(|i| (i % 7) as f64 / 7.0).collect();
        let p = PolarImage::new(grid, data).unwrap();
        let h = halo_profile(&p, &p, 3).unwrap();
        assert!(h.rmse.iter().all(|&e| e == 0.0));
        assert_eq!(h.components, 3);

        let mut q = p.clone();
        for t in 0..grid.n_angles {
            let v = q.get(grid.n_radii - 1, t);
            q.set(grid.n_radii - 1, t, v + 0.1);
        }
        let h = halo_profile(&p, &q, 3).unwrap();
        for &e in &h.rmse[..grid.n_radii - 1] {
            assert_eq!(e, 0.0);
        }
        assert!((h.rmse[grid.n_radii - 1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn halo_shape_mismatch() {
        let a = PolarImage::constant(PolarGrid::new(16, 32).unwrap(), 0.0).unwrap();
        let b = PolarImage::constant(PolarGrid::new(8, 32).unwrap(), 0.0).unwrap();
        assert!(matches!(halo_profile(&a, &b, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 0.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // Ties use average ranks.
        let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]);
        assert!(s > 0.9 && s < 1.0);
    }
}
