//! Anisotropic Gaussian fields and the topology description function (TDF)
//! built by summing them.
//!
//! A field is `exp(-0.5 dᵀ Σ⁻¹ d)` with `d = x - μ` and `Σ⁻¹ = R S⁻² Rᵀ`, where
//! `R` is a rotation (one angle in 2D, an Euler triple in 3D) and `S` holds the
//! per-axis standard deviations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Dim, StructuredMesh};

pub type Mat3 = [[f64; 3]; 3];

/// Quadratic-form cut-off used when evaluating fields on grids. Beyond it a
/// field contributes less than `exp(-37) ≈ 8.5e-17`, which is below the
/// resolution of any TDF value near the projection band.
pub const TRUNCATION_QUAD: f64 = 74.0;

/// One anisotropic Gaussian field.
///
/// Unused trailing entries of the arrays are zero in 2D (`angles[0]` is θ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRecord", into = "FieldRecord")]
pub struct GaussianField {
    pub dim: Dim,
    pub mu: [f64; 3],
    pub sigma: [f64; 3],
    pub angles: [f64; 3],
    pub active: bool,
}

impl GaussianField {
    pub fn new_2d(mu: [f64; 2], sigma: [f64; 2], theta: f64) -> Self {
        Self {
            dim: Dim::Two,
            mu: [mu[0], mu[1], 0.0],
            sigma: [sigma[0], sigma[1], 0.0],
            angles: [theta, 0.0, 0.0],
            active: true,
        }
    }

    pub fn new_3d(mu: [f64; 3], sigma: [f64; 3], euler: [f64; 3]) -> Self {
        Self {
            dim: Dim::Three,
            mu,
            sigma,
            angles: euler,
            active: true,
        }
    }

    fn n_angles(&self) -> usize {
        match self.dim {
            Dim::Two => 1,
            Dim::Three => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim.n();
        let finite = self.mu[..n]
            .iter()
            .chain(&self.sigma[..n])
            .chain(&self.angles[..self.n_angles()])
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidField("non-finite parameter".into()));
        }
        if self.sigma[..n].iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidField(format!(
                "standard deviations must be positive, got {:?}",
                &self.sigma[..n]
            )));
        }
        Ok(())
    }

    pub fn min_sigma(&self) -> f64 {
        self.sigma[..self.dim.n()]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Writes this field's parameter block (μ, σ, angles) into `out`.
    pub fn write_block(&self, out: &mut [f64]) {
        let n = self.dim.n();
        out[..n].copy_from_slice(&self.mu[..n]);
        out[n..2 * n].copy_from_slice(&self.sigma[..n]);
        out[2 * n..].copy_from_slice(&self.angles[..self.n_angles()]);
    }

    /// Reads a parameter block; the active flag is left untouched.
    pub fn read_block(&mut self, block: &[f64]) {
        let n = self.dim.n();
        self.mu[..n].copy_from_slice(&block[..n]);
        self.sigma[..n].copy_from_slice(&block[n..2 * n]);
        let na = self.n_angles();
        self.angles[..na].copy_from_slice(&block[2 * n..2 * n + na]);
    }

    fn from_block(dim: Dim, block: &[f64]) -> Self {
        let mut f = Self {
            dim,
            mu: [0.0; 3],
            sigma: [0.0; 3],
            angles: [0.0; 3],
            active: true,
        };
        f.read_block(block);
        f
    }

    pub fn rotation(&self) -> Mat3 {
        match self.dim {
            Dim::Two => rotation_2d(self.angles[0]),
            Dim::Three => rotation_3d(self.angles[0], self.angles[1], self.angles[2]),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRecord {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    angles: Vec<f64>,
    #[serde(default = "default_true")]
    active: bool,
}

fn default_true() -> bool {
    true
}

impl From<GaussianField> for FieldRecord {
    fn from(f: GaussianField) -> Self {
        let n = f.dim.n();
        FieldRecord {
            mu: f.mu[..n].to_vec(),
            sigma: f.sigma[..n].to_vec(),
            angles: f.angles[..f.n_angles()].to_vec(),
            active: f.active,
        }
    }
}

impl TryFrom<FieldRecord> for GaussianField {
    type Error = String;

    fn try_from(r: FieldRecord) -> std::result::Result<Self, String> {
        let dim = match (r.mu.len(), r.sigma.len(), r.angles.len()) {
            (2, 2, 1) => Dim::Two,
            (3, 3, 3) => Dim::Three,
            (m, s, a) => {
                return Err(format!(
                    "field needs mu/sigma/angles of lengths 2/2/1 or 3/3/3, got {m}/{s}/{a}"
                ))
            }
        };
        let mut block = r.mu;
        block.extend(r.sigma);
        block.extend(r.angles);
        let mut f = GaussianField::from_block(dim, &block);
        f.active = r.active;
        Ok(f)
    }
}

pub fn rotation_2d(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

pub fn rotation_2d_derivative(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    [[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]]
}

/// Euler-angle rotation with rows
/// `(cβcγ, cβsγ, -sβ)`, `(sαsβcγ - cαsγ, sαsβsγ + cαcγ, sαcβ)`,
/// `(cαsβcγ + sαsγ, cαsβsγ - sαcγ, cαcβ)`.
pub fn rotation_3d(alpha: f64, beta: f64, gamma: f64) -> Mat3 {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    [
        [cb * cg, cb * sg, -sb],
        [sa * sb * cg - ca * sg, sa * sb * sg + ca * cg, sa * cb],
        [ca * sb * cg + sa * sg, ca * sb * sg - sa * cg, ca * cb],
    ]
}

/// Partial derivatives of [`rotation_3d`] with respect to (α, β, γ).
pub fn rotation_3d_derivatives(alpha: f64, beta: f64, gamma: f64) -> [Mat3; 3] {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let d_alpha = [
        [0.0, 0.0, 0.0],
        [ca * sb * cg + sa * sg, ca * sb * sg - sa * cg, ca * cb],
        [-sa * sb * cg + ca * sg, -sa * sb * sg - ca * cg, -sa * cb],
    ];
    let d_beta = [
        [-sb * cg, -sb * sg, -cb],
        [sa * cb * cg, sa * cb * sg, -sa * sb],
        [ca * cb * cg, ca * cb * sg, -ca * sb],
    ];
    let d_gamma = [
        [-cb * sg, cb * cg, 0.0],
        [-sa * sb * sg - ca * cg, sa * sb * cg - ca * sg, 0.0],
        [-ca * sb * sg + sa * cg, ca * sb * cg + sa * sg, 0.0],
    ];
    [d_alpha, d_beta, d_gamma]
}

/// `R diag(1/σ²) Rᵀ`, assembled in closed form (no numeric inversion).
///
/// The entries are written as sums of products that are odd in each sine, so
/// that negating an angle negates the off-diagonal terms exactly.
pub fn covariance_inverse(field: &GaussianField) -> Result<Mat3> {
    field.validate()?;
    let n = field.dim.n();
    let r = field.rotation();
    let mut inv_s2 = [0.0; 3];
    for k in 0..n {
        inv_s2[k] = 1.0 / (field.sigma[k] * field.sigma[k]);
    }
    let mut out = [[0.0; 3]; 3];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += (r[i][k] * r[j][k]) * inv_s2[k];
            }
            out[i][j] = acc;
        }
    }
    Ok(out)
}

/// A field with its rotation, inverse covariance, and rotation derivatives
/// precomputed for repeated evaluation.
#[derive(Debug, Clone)]
pub struct FieldKernel {
    dim: Dim,
    mu: [f64; 3],
    sigma: [f64; 3],
    inv_s2: [f64; 3],
    rot: Mat3,
    drot: [Mat3; 3],
    inv_cov: Mat3,
}

impl FieldKernel {
    pub fn new(field: &GaussianField) -> Result<Self> {
        let inv_cov = covariance_inverse(field)?;
        let n = field.dim.n();
        let mut inv_s2 = [0.0; 3];
        for k in 0..n {
            inv_s2[k] = 1.0 / (field.sigma[k] * field.sigma[k]);
        }
        let drot = match field.dim {
            Dim::Two => [
                rotation_2d_derivative(field.angles[0]),
                [[0.0; 3]; 3],
                [[0.0; 3]; 3],
            ],
            Dim::Three => {
                rotation_3d_derivatives(field.angles[0], field.angles[1], field.angles[2])
            }
        };
        Ok(Self {
            dim: field.dim,
            mu: field.mu,
            sigma: field.sigma,
            inv_s2,
            rot: field.rotation(),
            drot,
            inv_cov,
        })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn mu(&self) -> &[f64; 3] {
        &self.mu
    }

    pub fn inverse_covariance(&self) -> &Mat3 {
        &self.inv_cov
    }

    /// `dᵀ Σ⁻¹ d` for an offset `d = x - μ`.
    #[inline]
    pub fn quad(&self, d: &[f64; 3]) -> f64 {
        let a = &self.inv_cov;
        match self.dim {
            Dim::Two => d[0] * (a[0][0] * d[0] + a[0][1] * d[1]) + d[1] * (a[1][0] * d[0] + a[1][1] * d[1]),
            Dim::Three => {
                d[0] * (a[0][0] * d[0] + a[0][1] * d[1] + a[0][2] * d[2])
                    + d[1] * (a[1][0] * d[0] + a[1][1] * d[1] + a[1][2] * d[2])
                    + d[2] * (a[2][0] * d[0] + a[2][1] * d[1] + a[2][2] * d[2])
            }
        }
    }

    #[inline]
    pub fn offset(&self, x: &[f64]) -> [f64; 3] {
        let mut d = [0.0; 3];
        for a in 0..self.dim.n() {
            d[a] = x[a] - self.mu[a];
        }
        d
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (-0.5 * self.quad(&self.offset(x))).exp()
    }

    /// Exact derivatives of the field value at offset `d` (with value `phi`)
    /// with respect to the field's own parameters, in block order.
    pub fn gradient_at_offset(&self, d: &[f64; 3], phi: f64, out: &mut [f64]) {
        let n = self.dim.n();
        let a = &self.inv_cov;
        let r = &self.rot;
        // Σ⁻¹ d and Rᵀ d
        let mut w = [0.0; 3];
        let mut v = [0.0; 3];
        for i in 0..n {
            let mut wi = 0.0;
            let mut vi = 0.0;
            for j in 0..n {
                wi += a[i][j] * d[j];
                vi += r[j][i] * d[j];
            }
            w[i] = wi;
            v[i] = vi;
        }
        for j in 0..n {
            out[j] = phi * w[j];
        }
        for k in 0..n {
            let s = self.sigma[k];
            out[n + k] = phi * v[k] * v[k] / (s * s * s);
        }
        let n_angles = out.len() - 2 * n;
        for m in 0..n_angles {
            let dr = &self.drot[m];
            let mut acc = 0.0;
            for k in 0..n {
                let mut dv = 0.0;
                for j in 0..n {
                    dv += dr[j][k] * d[j];
                }
                acc += dv * v[k] * self.inv_s2[k];
            }
            out[2 * n + m] = -phi * acc;
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.offset(x);
        let phi = (-0.5 * self.quad(&d)).exp();
        self.gradient_at_offset(&d, phi, out);
    }

    /// Half-widths of the axis-aligned box enclosing `{dᵀ Σ⁻¹ d ≤ q}`.
    pub fn bounding_half_widths(&self, q: f64) -> [f64; 3] {
        let n = self.dim.n();
        let mut out = [0.0; 3];
        for (a, o) in out.iter_mut().enumerate().take(n) {
            let var: f64 = (0..n)
                .map(|k| self.rot[a][k] * self.rot[a][k] * self.sigma[k] * self.sigma[k])
                .sum();
            *o = (q * var).sqrt();
        }
        out
    }
}

pub fn eval_field(field: &GaussianField, x: &[f64]) -> Result<f64> {
    Ok(FieldKernel::new(field)?.value(x))
}

pub fn grad_field_params(field: &GaussianField, x: &[f64]) -> Result<Vec<f64>> {
    let k = FieldKernel::new(field)?;
    let mut out = vec![0.0; field.dim.block_len()];
    k.gradient(x, &mut out);
    Ok(out)
}

/// Marks every active field whose smallest standard deviation dropped below
/// half the element edge length as inactive. Returns how many were switched off.
pub fn deactivate_degenerate(fields: &mut [GaussianField], edge_length: f64) -> usize {
    let cut = 0.5 * edge_length;
    let mut count = 0;
    for f in fields.iter_mut().filter(|f| f.active) {
        if f.min_sigma() < cut {
            f.active = false;
            count += 1;
        }
    }
    count
}

/// An ordered collection of Gaussian fields of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub dim: Dim,
    pub fields: Vec<GaussianField>,
}

impl Ensemble {
    pub fn new(dim: Dim, fields: Vec<GaussianField>) -> Result<Self> {
        if let Some(f) = fields.iter().find(|f| f.dim != dim) {
            return Err(Error::Shape(format!(
                "field of dimension {} in a {}D ensemble",
                f.dim.n(),
                dim.n()
            )));
        }
        Ok(Self { dim, fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.fields.iter().filter(|f| f.active).count()
    }

    pub fn active_flags(&self) -> Vec<bool> {
        self.fields.iter().map(|f| f.active).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for f in self.fields.iter().filter(|f| f.active) {
            f.validate()?;
        }
        Ok(())
    }

    pub fn design_vector(&self) -> DesignVector {
        pack(self)
    }

    /// Overwrites all parameters from `v`, keeping the active flags.
    pub fn set_design(&mut self, v: &DesignVector) -> Result<()> {
        let b = self.dim.block_len();
        if v.dim != self.dim || v.values.len() != b * self.fields.len() {
            return Err(Error::Shape(format!(
                "design vector of length {} does not fit {} fields of {} parameters",
                v.values.len(),
                self.fields.len(),
                b
            )));
        }
        for (f, block) in self.fields.iter_mut().zip(v.values.chunks(b)) {
            f.read_block(block);
        }
        Ok(())
    }

    /// Kernels of the active fields, paired with their ensemble index.
    pub fn active_kernels(&self) -> Result<Vec<(usize, FieldKernel)>> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.active)
            .map(|(i, f)| Ok((i, FieldKernel::new(f)?)))
            .collect()
    }
}

/// Flat parameter vector: one block per field, (μ, σ, angles) in each block.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignVector {
    pub dim: Dim,
    pub values: Vec<f64>,
}

impl DesignVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn field_count(&self) -> usize {
        self.values.len() / self.dim.block_len()
    }
}

pub fn pack(ensemble: &Ensemble) -> DesignVector {
    let b = ensemble.dim.block_len();
    let mut values = vec![0.0; b * ensemble.fields.len()];
    for (f, block) in ensemble.fields.iter().zip(values.chunks_mut(b)) {
        f.write_block(block);
    }
    DesignVector {
        dim: ensemble.dim,
        values,
    }
}

/// Rebuilds `n` fields from a flat vector; every field comes back active.
pub fn unpack(values: &[f64], dim: Dim, n: usize) -> Result<Ensemble> {
    let b = dim.block_len();
    if values.len() != b * n {
        return Err(Error::Shape(format!(
            "expected {} values for {n} fields, got {}",
            b * n,
            values.len()
        )));
    }
    let fields = values
        .chunks(b)
        .map(|block| GaussianField::from_block(dim, block))
        .collect();
    Ok(Ensemble { dim, fields })
}

/// Pointwise sum of the active fields (no truncation).
pub fn eval_tdf(ensemble: &Ensemble, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    let kernels = ensemble.active_kernels()?;
    Ok(points
        .iter()
        .map(|p| kernels.iter().map(|(_, k)| k.value(p)).sum())
        .collect())
}

/// Fixed-point scale of the order-independent accumulator (2¹⁰⁰).
const FIXED_SCALE: f64 = 1.267_650_600_228_229_4e30;

/// Sum of f64 terms in [0, 2²⁶) that does not depend on the order of addition.
///
/// Terms are truncated to multiples of 2⁻¹⁰⁰ and summed exactly in `i128`, so
/// two nodes that receive the same multiset of contributions get bitwise equal
/// totals whatever order the fields were visited in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactSum(i128);

impl ExactSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        self.0 += (v * FIXED_SCALE) as i128;
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0 as f64 / FIXED_SCALE
    }
}

/// Coordinates of a tensor-product point lattice (mesh nodes, cell centres...).
#[derive(Debug, Clone)]
pub struct Lattice {
    dim: Dim,
    coords: [Vec<f64>; 3],
}

impl Lattice {
    pub fn new(dim: Dim, coords: [Vec<f64>; 3]) -> Result<Self> {
        for (a, c) in coords.iter().enumerate() {
            if a < dim.n() && c.is_empty() {
                return Err(Error::Shape("empty lattice axis".into()));
            }
            if c.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Shape("lattice coordinates must increase".into()));
            }
        }
        let mut coords = coords;
        if dim == Dim::Two {
            coords[2] = vec![0.0];
        }
        Ok(Self { dim, coords })
    }

    /// The nodes of `mesh`.
    pub fn nodes(mesh: &StructuredMesh) -> Self {
        Self {
            dim: mesh.dim(),
            coords: [mesh.axis_coords(0), mesh.axis_coords(1), mesh.axis_coords(2)],
        }
    }

    /// The element centroids of `mesh`.
    pub fn centroids(mesh: &StructuredMesh) -> Self {
        let counts = mesh.element_counts3();
        let mut coords: [Vec<f64>; 3] = Default::default();
        for (a, c) in coords.iter_mut().enumerate() {
            if a >= mesh.dim().n() {
                *c = vec![0.0];
                continue;
            }
            *c = (0..counts[a])
                .map(|i| {
                    let centre = mesh.origin()[a] + 0.5 * mesh.extent()[a];
                    centre + (i as f64 + 0.5 - 0.5 * counts[a] as f64) * mesh.spacing()[a]
                })
                .collect();
        }
        Self {
            dim: mesh.dim(),
            coords,
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.coords[0].len(), self.coords[1].len(), self.coords[2].len()]
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.coords[a]
    }

    pub fn point(&self, flat: usize) -> [f64; 3] {
        let s = self.shape();
        let i = flat % s[0];
        let j = (flat / s[0]) % s[1];
        let k = flat / (s[0] * s[1]);
        [self.coords[0][i], self.coords[1][j], self.coords[2][k]]
    }

    fn index_range(&self, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
        let c = &self.coords[axis];
        // one extra point on either side; membership is decided by the
        // quadratic-form test, not by the box
        let start = c.partition_point(|&x| x < lo).saturating_sub(1);
        let end = (c.partition_point(|&x| x <= hi) + 1).min(c.len());
        (start, end)
    }

    /// Calls `visit(flat_index, offset, quad)` for every lattice point with
    /// `dᵀΣ⁻¹d ≤ TRUNCATION_QUAD`.
    pub fn visit_support<F>(&self, kernel: &FieldKernel, mut visit: F)
    where
        F: FnMut(usize, &[f64; 3], f64),
    {
        let n = self.dim.n();
        let hw = kernel.bounding_half_widths(TRUNCATION_QUAD);
        let mu = kernel.mu();
        let mut ranges = [(0usize, 1usize); 3];
        for a in 0..n {
            ranges[a] = self.index_range(a, mu[a] - hw[a], mu[a] + hw[a]);
            if ranges[a].0 >= ranges[a].1 {
                return;
            }
        }
        let s = self.shape();
        let mut d = [0.0; 3];
        for k in ranges[2].0..ranges[2].1 {
            if n == 3 {
                d[2] = self.coords[2][k] - mu[2];
            }
            for j in ranges[1].0..ranges[1].1 {
                d[1] = self.coords[1][j] - mu[1];
                let row = s[0] * (j + s[1] * k);
                for i in ranges[0].0..ranges[0].1 {
                    d[0] = self.coords[0][i] - mu[0];
                    let q = kernel.quad(&d);
                    if q <= TRUNCATION_QUAD {
                        visit(row + i, &d, q);
                    }
                }
            }
        }
    }

    /// Truncated TDF at every lattice point, accumulated order-independently.
    pub fn tdf(&self, kernels: &[(usize, FieldKernel)]) -> Vec<f64> {
        let mut acc = vec![ExactSum::default(); self.len()];
        for (_, k) in kernels {
            self.visit_support(k, |idx, _, q| acc[idx].add((-0.5 * q).exp()));
        }
        acc.into_iter().map(ExactSum::value).collect()
    }
}

/// Truncated TDF at the nodes of `mesh`.
pub fn tdf_on_mesh(ensemble: &Ensemble, mesh: &StructuredMesh) -> Result<Vec<f64>> {
    if ensemble.dim != mesh.dim() {
        return Err(Error::Shape("ensemble and mesh dimensions differ".into()));
    }
    let kernels = ensemble.active_kernels()?;
    Ok(Lattice::nodes(mesh).tdf(&kernels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn transpose(a: &Mat3) -> Mat3 {
        let mut t = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = a[j][i];
            }
        }
        t
    }

    #[test]
    fn covariance_inverse_axis_aligned() {
        let f = GaussianField::new_2d([0.0, 0.0], [2.0, 1.0], 0.0);
        let a = covariance_inverse(&f).unwrap();
        assert_eq!(a[0][0], 0.25);
        assert_eq!(a[1][1], 1.0);
        assert_eq!(a[0][1], 0.0);
    }

    #[test]
    fn covariance_inverse_quarter_turn_swaps_axes() {
        let f = GaussianField::new_2d([0.0, 0.0], [2.0, 1.0], FRAC_PI_2);
        let a = covariance_inverse(&f).unwrap();
        assert_relative_eq!(a[0][0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(a[1][1], 0.25, epsilon = 1e-15);
        assert!(a[0][1].abs() < 1e-15);
    }

    #[test]
    fn covariance_inverse_3d_matches_explicit_product() {
        let (al, be, ga) = (0.3, 0.5, 0.7);
        let f = GaussianField::new_3d([0.0; 3], [1.0, 2.0, 3.0], [al, be, ga]);
        // R assembled entry by entry from the Euler-angle formula
        let (sa, ca) = (al.sin(), al.cos());
        let (sb, cb) = (be.sin(), be.cos());
        let (sg, cg) = (ga.sin(), ga.cos());
        let r: Mat3 = [
            [cb * cg, cb * sg, -sb],
            [sa * sb * cg - ca * sg, sa * sb * sg + ca * cg, sa * cb],
            [ca * sb * cg + sa * sg, ca * sb * sg - sa * cg, ca * cb],
        ];
        let s2: Mat3 = [[1.0, 0.0, 0.0], [0.0, 0.25, 0.0], [0.0, 0.0, 1.0 / 9.0]];
        let expected = mat_mul(&mat_mul(&r, &s2), &transpose(&r));
        let got = covariance_inverse(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(got[i][j], expected[i][j], epsilon = 1e-14);
            }
        }
        // Σ Σ⁻¹ = I with Σ = R S² Rᵀ
        let s_sq: Mat3 = [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 9.0]];
        let cov = mat_mul(&mat_mul(&r, &s_sq), &transpose(&r));
        let id = mat_mul(&cov, &got);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(id[i][j], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn rotation_3d_is_orthogonal() {
        let r = rotation_3d(0.4, -1.1, 2.3);
        let i = mat_mul(&r, &transpose(&r));
        for a in 0..3 {
            for b in 0..3 {
                assert_relative_eq!(i[a][b], if a == b { 1.0 } else { 0.0 }, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn invalid_sigma_rejected() {
        let f = GaussianField::new_2d([0.0, 0.0], [0.0, 1.0], 0.0);
        assert!(matches!(covariance_inverse(&f), Err(Error::InvalidField(_))));
        let f = GaussianField::new_3d([0.0; 3], [1.0, -1.0, 1.0], [0.0; 3]);
        assert!(eval_field(&f, &[0.0; 3]).is_err());
    }

    #[test]
    fn eval_field_identities() {
        let f = GaussianField::new_2d([0.3, -0.2], [0.7, 0.1], 1.3);
        assert_eq!(eval_field(&f, &[0.3, -0.2]).unwrap(), 1.0);

        let iso = GaussianField::new_2d([1.0, 1.0], [0.5, 0.5], 0.4);
        let v = eval_field(&iso, &[1.0 + 0.3, 1.0 + 0.4]).unwrap();
        assert_relative_eq!(v, (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v, 0.6065306597126334, epsilon = 1e-15);

        // offset of length one along the rotated major axis (σ = 2): Mahalanobis 1/2
        let f = GaussianField::new_2d([0.0, 0.0], [2.0, 0.5], FRAC_PI_4);
        let s = 1.0 / 2f64.sqrt();
        let v = eval_field(&f, &[s, s]).unwrap();
        assert_relative_eq!(v, (-0.125f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(v, 0.8824969025845955, epsilon = 1e-15);
    }

    #[test]
    fn eval_tdf_sums_active_fields() {
        let empty = Ensemble::new(Dim::Two, vec![]).unwrap();
        assert_eq!(eval_tdf(&empty, &[[0.1, 0.2, 0.0]]).unwrap(), vec![0.0]);

        let f = GaussianField::new_2d([0.5, 0.5], [0.2, 0.1], 0.3);
        let two = Ensemble::new(Dim::Two, vec![f, f]).unwrap();
        assert_eq!(eval_tdf(&two, &[[0.5, 0.5, 0.0]]).unwrap(), vec![2.0]);

        let one = Ensemble::new(Dim::Two, vec![f]).unwrap();
        let p = [0.61, 0.47, 0.0];
        assert_eq!(eval_tdf(&one, &[p]).unwrap()[0], eval_field(&f, &p).unwrap());

        let mut off = f;
        off.active = false;
        let mixed = Ensemble::new(Dim::Two, vec![off, f]).unwrap();
        assert_eq!(eval_tdf(&mixed, &[p]).unwrap()[0], eval_field(&f, &p).unwrap());
    }

    #[test]
    fn gradient_vanishes_at_centre_and_for_isotropic_angle() {
        let f = GaussianField::new_2d([0.2, 0.4], [0.3, 0.1], 0.9);
        let g = grad_field_params(&f, &[0.2, 0.4]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let iso = GaussianField::new_2d([0.0, 0.0], [0.3, 0.3], 0.9);
        let g = grad_field_params(&iso, &[0.11, -0.23]).unwrap();
        assert!(g[4].abs() < 1e-15);

        let iso3 = GaussianField::new_3d([0.0; 3], [0.5; 3], [0.3, 0.2, 0.1]);
        let g = grad_field_params(&iso3, &[0.1, 0.2, -0.3]).unwrap();
        for v in &g[6..] {
            assert!(v.abs() < 1e-15);
        }
    }

    fn fd_gradient(field: &GaussianField, x: &[f64]) -> Vec<f64> {
        let b = field.dim.block_len();
        let mut block = vec![0.0; b];
        field.write_block(&mut block);
        let n = field.dim.n();
        (0..b)
            .map(|p| {
                let step = if p >= 2 * n { 1e-7 } else { 1e-6 };
                let mut plus = *field;
                let mut minus = *field;
                let mut bp = block.clone();
                let mut bm = block.clone();
                bp[p] += step;
                bm[p] -= step;
                plus.read_block(&bp);
                minus.read_block(&bm);
                (eval_field(&plus, x).unwrap() - eval_field(&minus, x).unwrap()) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for trial in 0..100 {
            let field = if trial % 2 == 0 {
                GaussianField::new_2d(
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)],
                    rng.gen_range(-PI..PI),
                )
            } else {
                GaussianField::new_3d(
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)],
                    [rng.gen_range(-PI..PI), rng.gen_range(-PI..PI), rng.gen_range(-PI..PI)],
                )
            };
            let n = field.dim.n();
            let mut x = [0.0; 3];
            for a in 0..n {
                x[a] = field.mu[a] + rng.gen_range(-0.8..0.8);
            }
            let analytic = grad_field_params(&field, &x[..n]).unwrap();
            let fd = fd_gradient(&field, &x[..n]);
            let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, f) in analytic.iter().zip(&fd) {
                let err = (a - f).abs() / a.abs().max(f.abs()).max(1e-3 * scale).max(1e-12);
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn angle_periodicity() {
        let f = GaussianField::new_2d([0.0, 0.0], [0.7, 0.2], 0.35);
        let mut g = f;
        g.angles[0] += 2.0 * PI;
        let a = covariance_inverse(&f).unwrap();
        let b = covariance_inverse(&g).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(a[i][j], b[i][j], epsilon = 1e-13);
            }
        }
        let f = GaussianField::new_3d([0.0; 3], [0.7, 0.2, 0.4], [0.3, -0.6, 1.2]);
        let mut g = f;
        for v in g.angles.iter_mut() {
            *v += 2.0 * PI;
        }
        let a = covariance_inverse(&f).unwrap();
        let b = covariance_inverse(&g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(a[i][j], b[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn deactivation_rule() {
        let h = 0.01;
        let mut fields = vec![
            GaussianField::new_2d([0.0, 0.0], [0.4 * h, 3.0 * h], 0.0),
            GaussianField::new_2d([0.0, 0.0], [0.5 * h, 0.5 * h], 0.0),
            GaussianField::new_3d([0.0; 3], [h, h, 0.45 * h], [0.0; 3]),
        ];
        assert_eq!(deactivate_degenerate(&mut fields, h), 2);
        assert!(!fields[0].active);
        assert!(fields[1].active);
        assert!(!fields[2].active);
        // permanent: growing σ back does not reactivate
        fields[0].sigma = [1.0, 1.0, 0.0];
        assert_eq!(deactivate_degenerate(&mut fields, h), 0);
        assert!(!fields[0].active);
    }

    #[test]
    fn fully_deactivated_ensemble_is_zero() {
        let mut fields = vec![GaussianField::new_2d([0.5, 0.5], [0.001, 0.2], 0.0); 3];
        deactivate_degenerate(&mut fields, 0.01);
        let e = Ensemble::new(Dim::Two, fields).unwrap();
        let v = eval_tdf(&e, &[[0.5, 0.5, 0.0], [0.1, 0.9, 0.0]]).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn pack_single_field() {
        let e = Ensemble::new(Dim::Two, vec![GaussianField::new_2d([1.0, 2.0], [0.3, 0.4], 0.5)])
            .unwrap();
        assert_eq!(pack(&e).values, vec![1.0, 2.0, 0.3, 0.4, 0.5]);
        assert!(unpack(&[1.0, 2.0], Dim::Two, 1).is_err());
    }

    #[test]
    fn grid_tdf_matches_direct_sum() {
        let mesh = StructuredMesh::new(Dim::Two, &[40, 20], &[0.0, 0.0], &[2.0, 1.0]).unwrap();
        let e = Ensemble::new(
            Dim::Two,
            vec![
                GaussianField::new_2d([0.5, 0.5], [0.3, 0.05], 0.7),
                GaussianField::new_2d([1.4, 0.3], [0.2, 0.1], -0.4),
            ],
        )
        .unwrap();
        let grid = tdf_on_mesh(&e, &mesh).unwrap();
        let pts: Vec<[f64; 3]> = (0..mesh.num_nodes()).map(|n| mesh.node_position(n)).collect();
        let direct = eval_tdf(&e, &pts).unwrap();
        for (g, d) in grid.iter().zip(&direct) {
            assert!((g - d).abs() < 1e-15, "{g} vs {d}");
        }
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let vals = [0.1, 0.7, 1e-9, 0.333333, 0.25, 3.2e-14];
        let mut a = ExactSum::default();
        let mut b = ExactSum::default();
        for v in vals {
            a.add(v);
        }
        for v in vals.iter().rev() {
            b.add(*v);
        }
        assert_eq!(a, b);
        assert!((a.value() - vals.iter().sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn field_serde_roundtrip() {
        let f = GaussianField::new_3d([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], [0.4, 0.5, 0.6]);
        let s = serde_json::to_string(&f).unwrap();
        let back: GaussianField = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
        let two: GaussianField =
            serde_json::from_str(r#"{"mu":[1,2],"sigma":[0.1,0.2],"angles":[0.3],"active":false}"#)
                .unwrap();
        assert_eq!(two.dim, Dim::Two);
        assert!(!two.active);
        assert!(serde_json::from_str::<GaussianField>(r#"{"mu":[1,2],"sigma":[0.1],"angles":[0.3]}"#).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn field_2d() -> impl Strategy<Value = GaussianField> {
            (-1.0..1.0f64, -1.0..1.0f64, 0.05..0.8f64, 0.05..0.8f64, -6.0..6.0f64)
                .prop_map(|(x, y, sx, sy, t)| GaussianField::new_2d([x, y], [sx, sy], t))
        }

        proptest! {
            #[test]
            fn field_value_in_unit_interval(f in field_2d(), px in -2.0..2.0f64, py in -2.0..2.0f64) {
                let v = eval_field(&f, &[px, py]).unwrap();
                prop_assert!(v >= 0.0 && v <= 1.0);
            }

            #[test]
            fn pack_unpack_roundtrip(fields in proptest::collection::vec(field_2d(), 0..6)) {
                let e = Ensemble::new(Dim::Two, fields).unwrap();
                let v = pack(&e);
                let back = unpack(&v.values, Dim::Two, e.len()).unwrap();
                prop_assert_eq!(&back, &e);
                prop_assert_eq!(pack(&back), v);
            }

            #[test]
            fn tdf_is_permutation_invariant_and_additive(
                a in proptest::collection::vec(field_2d(), 1..5),
                b in proptest::collection::vec(field_2d(), 1..5),
                px in -1.5..1.5f64, py in -1.5..1.5f64,
            ) {
                let p = [[px, py, 0.0]];
                let ea = Ensemble::new(Dim::Two, a.clone()).unwrap();
                let eb = Ensemble::new(Dim::Two, b.clone()).unwrap();
                let mut all = a.clone();
                all.extend(b.iter().copied());
                let mut rev = all.clone();
                rev.reverse();
                let ab = eval_tdf(&Ensemble::new(Dim::Two, all).unwrap(), &p).unwrap()[0];
                let ba = eval_tdf(&Ensemble::new(Dim::Two, rev).unwrap(), &p).unwrap()[0];
                let sep = eval_tdf(&ea, &p).unwrap()[0] + eval_tdf(&eb, &p).unwrap()[0];
                prop_assert!((ab - ba).abs() <= 1e-14 * ab.max(1.0));
                prop_assert!((ab - sep).abs() <= 1e-14 * ab.max(1.0));
            }
        }
    }
}
