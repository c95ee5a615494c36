//! Axisymmetric finite-difference model of retinal laser heating.
//!
//! The temperature increase x(r, z, t) obeys the heat equation
//! `rho*c_p*dx/dt = k*Lap(x) + u(t)*chi(r <= R_I)/(pi R_I^2) * g_alpha(z)`
//! on a cylinder with homogeneous Dirichlet boundary, where the cylindrical
//! Laplacian is `d_rr + (1/r) d_r + d_zz` (with the symmetry limit
//! `2 d_rr + d_zz` on the axis) and `g_alpha` is the Beer-Lambert
//! absorbed-power profile of [`beam`]. Discretizing on the tensor mesh of
//! [`mesh`] (Dirichlet nodes eliminated) yields the LTI system
//!
//! ```text
//! x' = A_c x + B(alpha) u,     y = [C_vol(alpha); C_peak] x,
//! ```
//!
//! with `n = (n_r - 1) * (n_z - 2)` interior unknowns. `C_vol` averages the
//! temperature over the beam cylinder weighted by the absorbed-power profile
//! (trapezoidal quadrature in r, composite Simpson in z); `C_peak` selects
//! the node at the centre of the RPE on the axis. `B`, `C_vol`, and all their derivatives in
//! the two absorption scales have closed forms.

pub mod beam;
pub mod mesh;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Banded, BandedLu};
pub use beam::{BeamParams, GPoint};
pub use mesh::{AxialMesh, Layer, RadialMesh};

/// Tissue stack geometry, optical reference coefficients, and the (single,
/// homogeneous) thermal material constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    /// Sclera thickness [m].
    pub d_sclera: f64,
    /// Choroid thickness [m].
    pub d_choroid: f64,
    /// Unpigmented-epithelium thickness [m].
    pub d_unpigmented: f64,
    /// RPE thickness [m].
    pub d_rpe: f64,
    /// Retina thickness [m].
    pub d_retina: f64,
    /// Reference absorption coefficient of the choroid [1/m].
    pub mu_choroid: f64,
    /// Reference absorption coefficient of the RPE [1/m].
    pub mu_rpe: f64,
    /// Density [kg/m^3].
    pub rho: f64,
    /// Specific heat capacity [J/(kg K)].
    pub c_p: f64,
    /// Thermal conductivity [W/(m K)].
    pub k: f64,
}

impl Default for LayerStack {
    fn default() -> Self {
        LayerStack {
            d_sclera: 139e-6,
            d_choroid: 400e-6,
            d_unpigmented: 4e-6,
            d_rpe: 6e-6,
            d_retina: 190e-6,
            mu_choroid: 270e2,
            mu_rpe: 1204e2,
            rho: 993.0,
            c_p: 4176.0,
            k: 0.627,
        }
    }
}

impl LayerStack {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_sclera", self.d_sclera),
            ("d_choroid", self.d_choroid),
            ("d_unpigmented", self.d_unpigmented),
            ("d_rpe", self.d_rpe),
            ("d_retina", self.d_retina),
            ("mu_choroid", self.mu_choroid),
            ("mu_rpe", self.mu_rpe),
            ("rho", self.rho),
            ("c_p", self.c_p),
            ("k", self.k),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "layer parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Total thickness of the five tissue layers [m].
    pub fn stack_thickness(&self) -> f64 {
        self.d_sclera + self.d_choroid + self.d_unpigmented + self.d_rpe + self.d_retina
    }

    /// Thermal diffusivity k/(rho c_p) [m^2/s].
    pub fn diffusivity(&self) -> f64 {
        self.k / (self.rho * self.c_p)
    }
}

/// Dimensionless absorption scales `alpha = (alpha_RPE, alpha_ch)` mapping
/// the reference coefficients to patient-specific ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionScale {
    pub rpe: f64,
    pub ch: f64,
}

impl AbsorptionScale {
    pub fn new(rpe: f64, ch: f64) -> Self {
        AbsorptionScale { rpe, ch }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rpe > 0.0 && self.rpe.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha_rpe must be positive, got {}",
                self.rpe
            )));
        }
        if !(self.ch >= 0.0 && self.ch.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha_ch must be non-negative, got {}",
                self.ch
            )));
        }
        Ok(())
    }
}

/// Admissible box for the absorption scales (cohort mean +/- 2 sigma).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaDomain {
    pub rpe_min: f64,
    pub rpe_max: f64,
    pub ch_min: f64,
    pub ch_max: f64,
}

impl Default for AlphaDomain {
    fn default() -> Self {
        AlphaDomain {
            rpe_min: 0.3821,
            rpe_max: 1.1451,
            ch_min: 0.0424,
            ch_max: 0.1549,
        }
    }
}

impl AlphaDomain {
    pub fn contains(&self, a: &AbsorptionScale) -> bool {
        a.rpe >= self.rpe_min && a.rpe <= self.rpe_max && a.ch >= self.ch_min && a.ch <= self.ch_max
    }

    pub fn center(&self) -> AbsorptionScale {
        AbsorptionScale {
            rpe: 0.5 * (self.rpe_min + self.rpe_max),
            ch: 0.5 * (self.ch_min + self.ch_max),
        }
    }

    /// Tensor grid of `nr x nc` points (row-major over rpe, then ch).
    pub fn grid(&self, nr: usize, nc: usize) -> Vec<AbsorptionScale> {
        let mut out = Vec::with_capacity(nr * nc);
        for i in 0..nr {
            let t = if nr == 1 { 0.5 } else { i as f64 / (nr - 1) as f64 };
            let rpe = self.rpe_min + t * (self.rpe_max - self.rpe_min);
            for j in 0..nc {
                let s = if nc == 1 { 0.5 } else { j as f64 / (nc - 1) as f64 };
                let ch = self.ch_min + s * (self.ch_max - self.ch_min);
                out.push(AbsorptionScale { rpe, ch });
            }
        }
        out
    }

    /// Equally spaced points along alpha_RPE with alpha_ch held fixed.
    pub fn line_rpe(&self, k: usize, ch: f64) -> Vec<AbsorptionScale> {
        (0..k)
            .map(|i| {
                let t = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
                AbsorptionScale {
                    rpe: self.rpe_min + t * (self.rpe_max - self.rpe_min),
                    ch,
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rpe_min > 0.0 && self.rpe_max > self.rpe_min) {
            return Err(Error::InvalidConfig(
                "alpha domain: need 0 < rpe_min < rpe_max".into(),
            ));
        }
        if !(self.ch_min >= 0.0 && self.ch_max > self.ch_min) {
            return Err(Error::InvalidConfig(
                "alpha domain: need 0 <= ch_min < ch_max".into(),
            ));
        }
        Ok(())
    }
}

/// Cohort statistics of the absorption scales (sample mean and standard
/// deviation over the constant-power fits).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaStats {
    pub mean: AbsorptionScale,
    pub std: AbsorptionScale,
}

impl Default for AlphaStats {
    fn default() -> Self {
        AlphaStats {
            mean: AbsorptionScale { rpe: 0.7636, ch: 0.0986 },
            std: AbsorptionScale { rpe: 0.1907, ch: 0.0281 },
        }
    }
}

/// Discretization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Domain radius R [m].
    pub radius: f64,
    /// Beam (irradiation) radius R_I [m]; must coincide with a radial node.
    pub beam_radius: f64,
    /// Axial margin ahead of the retina [m].
    pub margin_top: f64,
    /// Axial margin behind the sclera [m].
    pub margin_bottom: f64,
    /// Radial node count including both the axis and the boundary node.
    pub n_r: usize,
    /// Axial node count including both boundary nodes.
    pub n_z: usize,
    /// Sampling/integration step [s].
    pub dt: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            radius: 1e-3,
            beam_radius: 100e-6,
            margin_top: 200e-6,
            margin_bottom: 200e-6,
            n_r: 31,
            n_z: 81,
            dt: 1e-3,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.beam_radius > 0.0 && self.beam_radius < self.radius) {
            return Err(Error::InvalidConfig(format!(
                "grid: need 0 < beam_radius < radius, got beam_radius {} radius {}",
                self.beam_radius, self.radius
            )));
        }
        if self.margin_top < 0.0 || self.margin_bottom < 0.0 {
            return Err(Error::InvalidConfig("grid: margins must be >= 0".into()));
        }
        if self.n_r < 3 {
            return Err(Error::InvalidConfig(format!(
                "grid: n_r must be >= 3, got {}",
                self.n_r
            )));
        }
        if self.n_z < 7 {
            return Err(Error::InvalidConfig(format!(
                "grid: n_z must be >= (number of layers + 2) = 7, got {}",
                self.n_z
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid: dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Selects the value or one of the analytic first derivatives of a
/// parameter-dependent operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deriv {
    None,
    Rpe,
    Ch,
}

impl Deriv {
    /// Mixed derivative orders `(i, j)` in `(alpha_rpe, alpha_ch)`.
    pub fn orders(self) -> (u32, u32) {
        match self {
            Deriv::None => (0, 0),
            Deriv::Rpe => (1, 0),
            Deriv::Ch => (0, 1),
        }
    }
}

/// Everything needed to evaluate one entry of B(alpha) and of the stacked
/// output matrix at a single node, without the full model: used by reduced
/// models to keep online evaluation O(1) in the full order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEvalData {
    pub in_beam: bool,
    pub gpoint: GPoint,
    /// Beam-average radial weight of this node (0 outside the beam column).
    pub radial_weight: f64,
    /// Axial quadrature contributions of this node to the volume output.
    pub vol_axial: Vec<(GPoint, f64)>,
    pub is_peak: bool,
}

impl NodeEvalData {
    /// Entry of B(alpha) at this node.
    pub fn input_entry(&self, bp: &BeamParams, alpha: &AbsorptionScale) -> f64 {
        if self.in_beam {
            bp.input_scale * bp.g(self.gpoint, alpha)
        } else {
            0.0
        }
    }

    /// Entries of the stacked output [C_vol; C_peak] at this node.
    pub fn output_entries(&self, bp: &BeamParams, alpha: &AbsorptionScale) -> [f64; 2] {
        let mut vol = 0.0;
        for &(p, w) in &self.vol_axial {
            vol += w * bp.g(p, alpha);
        }
        [self.radial_weight * vol, if self.is_peak { 1.0 } else { 0.0 }]
    }
}

/// The assembled full-order model.
#[derive(Debug)]
pub struct FullOrderModel {
    pub layers: LayerStack,
    pub grid: GridConfig,
    beam: BeamParams,
    axial: AxialMesh,
    radial: RadialMesh,
    a_c: Banded<f64>,
    a_c_lu: BandedLu<f64>,
    n: usize,
    peak_index: usize,
    /// Beam-average weights per radial node index (0..=beam_node).
    radial_mean_w: Vec<f64>,
    /// Axial quadrature against g: (axial node, layer-local point, weight).
    axial_quad: Vec<(usize, GPoint, f64)>,
}

impl FullOrderModel {
    /// Assemble the full-order model. Fails on invalid layers/grid, meshes
    /// that starve a layer of nodes, misaligned beam radius, or (for small
    /// instances, n <= 400) a non-negative spectral abscissa of A_c.
    pub fn build(layers: LayerStack, grid: GridConfig) -> Result<Self> {
        layers.validate()?;
        grid.validate()?;
        let radial = mesh::build_radial(grid.radius, grid.beam_radius, grid.n_r)?;
        let axial = mesh::build_axial(
            (
                layers.d_retina,
                layers.d_rpe,
                layers.d_unpigmented,
                layers.d_choroid,
                layers.d_sclera,
            ),
            (grid.margin_top, grid.margin_bottom),
            grid.n_z,
        )?;

        let nri = grid.n_r - 1;
        let nzi = grid.n_z - 2;
        let n = nri * nzi;

        // Peak node: on-axis at the RPE mid-depth; must be interior and
        // within half a cell of the exact mid-depth.
        let rpe = axial
            .segment(Layer::Rpe)
            .expect("RPE segment always present");
        let jmid = axial.rpe_mid_node;
        if jmid < 1 || jmid > grid.n_z - 2 {
            return Err(Error::InvalidGrid(
                "RPE mid-depth node is not an interior node".into(),
            ));
        }
        let target = rpe.start + 0.5 * rpe.thickness;
        if (axial.z[jmid] - target).abs() > 0.5 * rpe.h {
            return Err(Error::InvalidGrid(
                "no axial node within half a cell of the RPE mid-depth".into(),
            ));
        }
        let peak_index = (jmid - 1) * nri;

        let beam = BeamParams {
            mu_rpe: layers.mu_rpe,
            mu_choroid: layers.mu_choroid,
            d_rpe: layers.d_rpe,
            d_choroid: layers.d_choroid,
            input_scale: 1.0
                / (layers.rho * layers.c_p * std::f64::consts::PI * grid.beam_radius.powi(2)),
        };

        let a_c = assemble_diffusion(&layers, &axial, &radial, grid.n_z);
        let a_c_lu = a_c.lu().map_err(|e| {
            Error::Numerical(format!("diffusion operator factorization failed: {e}"))
        })?;

        if n <= 400 {
            let abscissa = a_c
                .to_dense()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            if abscissa >= 0.0 {
                return Err(Error::Numerical(format!(
                    "diffusion operator has non-negative spectral abscissa {abscissa}"
                )));
            }
        }

        // Beam-average radial weights: (2/R_I^2) * trapezoid(x * r dr).
        let mut radial_mean_w = Vec::with_capacity(radial.beam_node + 1);
        for i in 0..=radial.beam_node {
            let r = i as f64 * radial.h;
            let tw = if i == 0 || i == radial.beam_node {
                0.5 * radial.h
            } else {
                radial.h
            };
            radial_mean_w.push(2.0 / grid.beam_radius.powi(2) * tw * r);
        }

        // Axial quadrature against g over the absorbing layers, segment by
        // segment so that the discontinuities at layer boundaries are handled
        // with one-sided limits. Simpson weights resolve the exponential
        // attenuation well even at the coarser choroid spacing.
        let mut axial_quad = Vec::new();
        for s in &axial.segments {
            let mk = |local: f64| match s.layer {
                Layer::Rpe => Some(GPoint::Rpe(local)),
                Layer::Choroid => Some(GPoint::Choroid(local)),
                _ => None,
            };
            if mk(0.0).is_none() {
                continue;
            }
            let w = newton_cotes_weights(s.intervals, s.h);
            for t in 0..=s.intervals {
                let local = if t == s.intervals {
                    s.thickness
                } else {
                    s.h * t as f64
                };
                axial_quad.push((s.first + t, mk(local).unwrap(), w[t]));
            }
        }

        Ok(FullOrderModel {
            layers,
            grid,
            beam,
            axial,
            radial,
            a_c,
            a_c_lu,
            n,
            peak_index,
            radial_mean_w,
            axial_quad,
        })
    }

    /// Number of interior unknowns, (n_r - 1) * (n_z - 2).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Interior radial node count (bandwidth of the diffusion operator).
    pub fn nri(&self) -> usize {
        self.grid.n_r - 1
    }

    /// Linear index of interior node (radial i, axial j).
    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nri() && j >= 1 && j <= self.grid.n_z - 2);
        (j - 1) * self.nri() + i
    }

    /// Inverse of [`node_index`]: (radial i, axial j).
    #[inline]
    pub fn node_coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nri(), idx / self.nri() + 1)
    }

    /// (r, z) coordinates of an interior node.
    pub fn node_position(&self, idx: usize) -> (f64, f64) {
        let (i, j) = self.node_coords(idx);
        (i as f64 * self.radial.h, self.axial.z[j])
    }

    pub fn a_c(&self) -> &Banded<f64> {
        &self.a_c
    }

    /// Reusable factorization of A_c (DC gains, sensitivities).
    pub fn a_c_lu(&self) -> &BandedLu<f64> {
        &self.a_c_lu
    }

    pub fn beam_params(&self) -> &BeamParams {
        &self.beam
    }

    pub fn axial_mesh(&self) -> &AxialMesh {
        &self.axial
    }

    /// Total axial extent of the computational domain [m].
    pub fn axial_extent(&self) -> f64 {
        *self.axial.z.last().expect("non-empty mesh")
    }

    pub fn peak_index(&self) -> usize {
        self.peak_index
    }

    /// Discrete cylindrical cell measure per interior node (volume up to a
    /// factor 2 pi): radial half-cell area times axial cell size. The
    /// diffusion stencil balances fluxes against exactly these cells, so
    /// weighting the state inner product with them makes the operator
    /// self-adjoint: diag(w) * A_c is a symmetric negative-definite matrix.
    pub fn cell_measure(&self) -> DVector<f64> {
        let h = self.radial.h;
        let mut w = DVector::zeros(self.n);
        for jz in 1..=self.grid.n_z - 2 {
            let zeta = 0.5 * (self.axial.z[jz + 1] - self.axial.z[jz - 1]);
            for ir in 0..self.nri() {
                let rho = if ir == 0 {
                    h * h / 8.0
                } else {
                    ir as f64 * h * h
                };
                w[self.node_index(ir, jz)] = rho * zeta;
            }
        }
        w
    }

    fn gpoint_of_axial(&self, j: usize) -> GPoint {
        match self.axial.layer_of_node(j) {
            Layer::Rpe => {
                let s = self.axial.segment(Layer::Rpe).unwrap();
                GPoint::Rpe(self.axial.z[j] - s.start)
            }
            Layer::Choroid => {
                let s = self.axial.segment(Layer::Choroid).unwrap();
                GPoint::Choroid(self.axial.z[j] - s.start)
            }
            _ => GPoint::Zero,
        }
    }

    /// Input vector B(alpha), or its analytic first derivative.
    pub fn input_vector(&self, alpha: &AbsorptionScale, deriv: Deriv) -> DVector<f64> {
        let (i, j) = deriv.orders();
        self.input_taylor_scaled(alpha, i, j, 1.0)
    }

    /// Taylor coefficient vector of B around `alpha0`:
    /// d^{i+j} B / (da^i dc^j) / (i! j!).
    pub fn input_taylor_coeff(&self, alpha0: &AbsorptionScale, i: u32, j: u32) -> DVector<f64> {
        let fact = |k: u32| (1..=k).map(|v| v as f64).product::<f64>();
        self.input_taylor_scaled(alpha0, i, j, 1.0 / (fact(i) * fact(j)))
    }

    fn input_taylor_scaled(
        &self,
        alpha: &AbsorptionScale,
        di: u32,
        dj: u32,
        scale: f64,
    ) -> DVector<f64> {
        let mut b = DVector::zeros(self.n);
        for jz in 1..=self.grid.n_z - 2 {
            let gp = self.gpoint_of_axial(jz);
            if gp == GPoint::Zero {
                continue;
            }
            let val = scale * self.beam.input_scale * self.beam.g_deriv(gp, alpha, di, dj);
            if val == 0.0 {
                continue;
            }
            for ir in 0..=self.radial.beam_node {
                b[self.node_index(ir, jz)] = val;
            }
        }
        b
    }

    /// Selected entries of B(alpha) (DEIM online evaluation path).
    pub fn input_entries(&self, alpha: &AbsorptionScale, nodes: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            nodes.len(),
            nodes.iter().map(|&idx| {
                let (ir, jz) = self.node_coords(idx);
                if ir > self.radial.beam_node {
                    return 0.0;
                }
                let gp = self.gpoint_of_axial(jz);
                self.beam.input_scale * self.beam.g(gp, alpha)
            }),
        )
    }

    /// Volume-output covector C_vol(alpha), or its analytic first derivative.
    pub fn output_vol(&self, alpha: &AbsorptionScale, deriv: Deriv) -> DVector<f64> {
        let (i, j) = deriv.orders();
        self.output_vol_taylor_scaled(alpha, i, j, 1.0)
    }

    /// Taylor coefficient covector of C_vol around `alpha0`.
    pub fn output_vol_taylor_coeff(&self, alpha0: &AbsorptionScale, i: u32, j: u32) -> DVector<f64> {
        let fact = |k: u32| (1..=k).map(|v| v as f64).product::<f64>();
        self.output_vol_taylor_scaled(alpha0, i, j, 1.0 / (fact(i) * fact(j)))
    }

    fn output_vol_taylor_scaled(
        &self,
        alpha: &AbsorptionScale,
        di: u32,
        dj: u32,
        scale: f64,
    ) -> DVector<f64> {
        let mut c = DVector::zeros(self.n);
        for &(jz, p, w) in &self.axial_quad {
            debug_assert!(jz >= 1 && jz <= self.grid.n_z - 2);
            let val = scale * w * self.beam.g_deriv(p, alpha, di, dj);
            if val == 0.0 {
                continue;
            }
            for ir in 0..=self.radial.beam_node {
                c[self.node_index(ir, jz)] += self.radial_mean_w[ir] * val;
            }
        }
        c
    }

    /// Peak-output covector (unit selection at the on-axis RPE centre node).
    pub fn output_peak(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.n);
        c[self.peak_index] = 1.0;
        c
    }

    /// Columns of the stacked output [C_vol(alpha); C_peak] at the selected
    /// nodes: a 2 x len matrix (DEIM online evaluation path).
    pub fn output_stack_cols(&self, alpha: &AbsorptionScale, nodes: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(2, nodes.len());
        let bp = &self.beam;
        for (k, &idx) in nodes.iter().enumerate() {
            let data = self.node_eval_data(idx);
            let [vol, peak] = data.output_entries(bp, alpha);
            m[(0, k)] = vol;
            m[(1, k)] = peak;
        }
        m
    }

    /// Self-contained evaluation data for one node.
    pub fn node_eval_data(&self, idx: usize) -> NodeEvalData {
        let (ir, jz) = self.node_coords(idx);
        let in_beam = ir <= self.radial.beam_node;
        let gpoint = self.gpoint_of_axial(jz);
        let radial_weight = if in_beam { self.radial_mean_w[ir] } else { 0.0 };
        let vol_axial: Vec<(GPoint, f64)> = self
            .axial_quad
            .iter()
            .filter(|&&(j, _, _)| j == jz)
            .map(|&(_, p, w)| (p, w))
            .collect();
        NodeEvalData {
            in_beam,
            gpoint,
            radial_weight,
            vol_axial,
            is_peak: idx == self.peak_index,
        }
    }
}

/// Closed Newton-Cotes weights on a uniform segment of `m` intervals with
/// spacing `h`: composite Simpson where possible (even `m`), with a 3/8 tail
/// for odd `m` and a single trapezoid when `m == 1`. All variants reproduce
/// constants exactly (weights sum to `m * h`).
fn newton_cotes_weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    if m == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    // Even prefix of Simpson pairs; for odd m the last three intervals use
    // the 3/8 rule.
    let simpson_end = if m % 2 == 0 { m } else { m - 3 };
    if m >= 3 && m % 2 == 1 {
        for (k, c) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
            w[m - 3 + k] += 0.375 * h * c;
        }
    }
    let mut t = 0;
    while t + 2 <= simpson_end {
        w[t] += h / 3.0;
        w[t + 1] += 4.0 * h / 3.0;
        w[t + 2] += h / 3.0;
        t += 2;
    }
    w
}

/// Assemble the interior-node diffusion operator A_c = (k/(rho c_p)) * Lap_h.
fn assemble_diffusion(
    layers: &LayerStack,
    axial: &AxialMesh,
    radial: &RadialMesh,
    n_z: usize,
) -> Banded<f64> {
    let nri = radial.n_r - 1;
    let nzi = n_z - 2;
    let n = nri * nzi;
    let kappa = layers.diffusivity();
    let h = radial.h;
    let mut a = Banded::zeros(n, nri, nri);
    let idx = |i: usize, j: usize| (j - 1) * nri + i;

    for j in 1..=nzi {
        let hm = axial.z[j] - axial.z[j - 1];
        let hp = axial.z[j + 1] - axial.z[j];
        for i in 0..nri {
            let row = idx(i, j);
            let mut diag = 0.0;
            if i == 0 {
                // On-axis symmetry limit: 2 d_rr.
                diag += -4.0 * kappa / (h * h);
                a.add_to(row, idx(1, j), 4.0 * kappa / (h * h));
            } else {
                let r = i as f64 * h;
                let ce = kappa * (1.0 / (h * h) + 1.0 / (2.0 * r * h));
                let cw = kappa * (1.0 / (h * h) - 1.0 / (2.0 * r * h));
                diag += -2.0 * kappa / (h * h);
                a.add_to(row, idx(i - 1, j), cw);
                if i + 1 < nri {
                    a.add_to(row, idx(i + 1, j), ce);
                }
            }
            let cu = 2.0 * kappa / (hm * (hm + hp));
            let cd = 2.0 * kappa / (hp * (hm + hp));
            diag += -2.0 * kappa / (hm * hp);
            if j > 1 {
                a.add_to(row, idx(i, j - 1), cu);
            }
            if j < nzi {
                a.add_to(row, idx(i, j + 1), cd);
            }
            a.add_to(row, row, diag);
        }
    }
    a
}

/// Piecewise-constant absorption coefficient mu(z) [1/m] at depth `z`
/// measured from the anterior surface of the tissue stack (retina top).
/// Layers are half-open `[top, bottom)`; z outside the stack returns 0.
pub fn absorption_profile(layers: &LayerStack, alpha: &AbsorptionScale, z: f64) -> f64 {
    let rpe_top = layers.d_retina;
    let rpe_bot = rpe_top + layers.d_rpe;
    let ch_top = rpe_bot + layers.d_unpigmented;
    let ch_bot = ch_top + layers.d_choroid;
    if z >= rpe_top && z < rpe_bot {
        alpha.rpe * layers.mu_rpe
    } else if z >= ch_top && z < ch_bot {
        alpha.ch * layers.mu_choroid
    } else {
        0.0
    }
}
