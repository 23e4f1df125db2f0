//! Inhomogeneous line shapes, spectral preparation and the discretized medium.
//!
//! Frequencies are angular (rad per time unit) and must share a time unit with
//! everything else in a run. The scenario layer works in microseconds, so a
//! detuning of `2π` here is 1 MHz.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI, SQRT_2};

use crate::error::{ensure, invalid, Error, Result};

/// Family of an inhomogeneous line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Gaussian,
    Lorentzian,
    FlatTop,
    PreparedSpike,
}

/// Record of the hole-burning edit that produced a [`LineKind::PreparedSpike`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralHole {
    pub parent_kind: LineKind,
    pub parent_center: f64,
    pub parent_width: f64,
    pub pit_width: f64,
    /// Area of the parent line that survives the pit (parent is unit-area).
    pub surviving_area: f64,
}

/// Unit-area inhomogeneous line shape G(Δ).
///
/// `width` is the full width at half maximum. For a prepared spike it is the
/// width of the antihole left in the pit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineShape {
    pub kind: LineKind,
    pub center: f64,
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole: Option<SpectralHole>,
}

fn gaussian_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

fn base_density(kind: LineKind, center: f64, width: f64, x: f64) -> f64 {
    let d = x - center;
    match kind {
        LineKind::Gaussian => {
            let s = gaussian_sigma(width);
            (-(d * d) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
        }
        LineKind::Lorentzian | LineKind::PreparedSpike => {
            let g = 0.5 * width;
            g / (PI * (d * d + g * g))
        }
        LineKind::FlatTop => {
            if d.abs() <= 0.5 * width {
                1.0 / width
            } else {
                0.0
            }
        }
    }
}

fn base_cdf(kind: LineKind, center: f64, width: f64, x: f64) -> f64 {
    let d = x - center;
    match kind {
        LineKind::Gaussian => 0.5 * (1.0 + libm::erf(d / (gaussian_sigma(width) * SQRT_2))),
        LineKind::Lorentzian | LineKind::PreparedSpike => 0.5 + (d / (0.5 * width)).atan() / PI,
        LineKind::FlatTop => (d / width + 0.5).clamp(0.0, 1.0),
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (rounded up to even) panels.
pub(crate) fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

impl LineShape {
    /// Builds a normalized line of the requested family.
    pub fn new(kind: LineKind, center: f64, width: f64) -> Result<Self> {
        build_line_shape(kind, center, width)
    }

    pub fn lorentzian_hwhm(&self) -> Option<f64> {
        match self.kind {
            LineKind::Lorentzian | LineKind::PreparedSpike => Some(0.5 * self.width),
            _ => None,
        }
    }

    /// Lorentzian-family lines behave as a homogeneous decay under linear response.
    pub fn is_lorentzian_family(&self) -> bool {
        self.lorentzian_hwhm().is_some()
    }

    fn parent(&self) -> Option<(LineKind, f64, f64)> {
        self.hole
            .as_ref()
            .map(|h| (h.parent_kind, h.parent_center, h.parent_width))
    }

    /// Ratio applied inside the pit: 1 at the spike centre, Lorentzian falloff.
    fn spike_ratio(&self, x: f64) -> f64 {
        let g = 0.5 * self.width;
        let d = x - self.center;
        g * g / (d * d + g * g)
    }

    /// ∫_a^b parent(x)·ratio(x) dx, computed with the substitution x = c + γ·tan(u).
    fn spike_integral(&self, a: f64, b: f64) -> f64 {
        let (pk, pc, pw) = self.parent().expect("prepared spike has a parent");
        let g = 0.5 * self.width;
        let ua = ((a - self.center) / g).atan();
        let ub = ((b - self.center) / g).atan();
        if ub <= ua {
            return 0.0;
        }
        simpson(
            |u| base_density(pk, pc, pw, self.center + g * u.tan()) * g,
            ua,
            ub,
            4000,
        )
    }

    /// Population density before renormalization. For a prepared spike this is
    /// the parent line with the pit emptied except for the antihole; for the
    /// other kinds it is the normalized density.
    pub fn absolute_density(&self, x: f64) -> f64 {
        match (&self.hole, self.kind) {
            (Some(hole), LineKind::PreparedSpike) => {
                let parent = base_density(hole.parent_kind, hole.parent_center, hole.parent_width, x);
                if (x - self.center).abs() < 0.5 * hole.pit_width {
                    parent * self.spike_ratio(x)
                } else {
                    parent
                }
            }
            _ => base_density(self.kind, self.center, self.width, x),
        }
    }

    /// Normalized density G(Δ).
    pub fn density(&self, x: f64) -> f64 {
        match &self.hole {
            Some(hole) => self.absolute_density(x) / hole.surviving_area,
            None => base_density(self.kind, self.center, self.width, x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let Some(hole) = &self.hole else {
            return base_cdf(self.kind, self.center, self.width, x);
        };
        let (pk, pc, pw) = (hole.parent_kind, hole.parent_center, hole.parent_width);
        let lo = self.center - 0.5 * hole.pit_width;
        let hi = self.center + 0.5 * hole.pit_width;
        let mut removed = 0.0;
        if x > lo {
            let top = x.min(hi);
            removed = base_cdf(pk, pc, pw, top) - base_cdf(pk, pc, pw, lo) - self.spike_integral(lo, top);
        }
        (base_cdf(pk, pc, pw, x) - removed) / hole.surviving_area
    }

    pub fn peak_density(&self) -> f64 {
        self.density(self.center)
    }
}

/// Builds a unit-area line. Prepared spikes come from [`prepare_spike`] only.
pub fn build_line_shape(kind: LineKind, center: f64, width: f64) -> Result<LineShape> {
    ensure(width > 0.0 && width.is_finite(), "width", || {
        format!("line width must be positive, got {width}")
    })?;
    ensure(center.is_finite(), "center", || "line centre must be finite".into())?;
    if kind == LineKind::PreparedSpike {
        return Err(invalid(
            "kind",
            "prepared_spike lines are produced by prepare_spike, not built directly",
        ));
    }
    Ok(LineShape {
        kind,
        center,
        width,
        hole: None,
    })
}

/// Burns a pit of `pit_width` into `line` and leaves a Lorentzian antihole of
/// `spike_width` at its centre.
///
/// The result is renormalized to unit area over what survives; its
/// [`LineShape::absolute_density`] never exceeds the input line.
pub fn prepare_spike(
    line: &LineShape,
    pit_width: f64,
    spike_width: f64,
    homogeneous_width: f64,
) -> Result<LineShape> {
    ensure(line.hole.is_none(), "line", || {
        "line has already been prepared by hole burning".into()
    })?;
    ensure(spike_width > 0.0, "spike_width", || {
        format!("spike width must be positive, got {spike_width}")
    })?;
    ensure(homogeneous_width >= 0.0, "homogeneous_width", || {
        format!("homogeneous width must be non-negative, got {homogeneous_width}")
    })?;
    ensure(spike_width < pit_width, "spike_width", || {
        format!("spike width {spike_width} must be narrower than the pit {pit_width}")
    })?;
    ensure(spike_width >= homogeneous_width, "spike_width", || {
        format!("spike width {spike_width} is below the homogeneous limit {homogeneous_width}")
    })?;

    let mut spike = LineShape {
        kind: LineKind::PreparedSpike,
        center: line.center,
        width: spike_width,
        hole: Some(SpectralHole {
            parent_kind: line.kind,
            parent_center: line.center,
            parent_width: line.width,
            pit_width,
            surviving_area: 1.0,
        }),
    };
    let lo = line.center - 0.5 * pit_width;
    let hi = line.center + 0.5 * pit_width;
    let pit_mass = line.cdf(hi) - line.cdf(lo);
    let area = 1.0 - pit_mass + spike.spike_integral(lo, hi);
    if let Some(hole) = spike.hole.as_mut() {
        hole.surviving_area = area;
    }
    Ok(spike)
}

/// Field-free amplitude decay time of a Lorentzian feature of FWHM `width`
/// (angular), i.e. the free-induction-decay envelope e^{-t·width/2}.
pub fn dephasing_time(width: f64) -> f64 {
    2.0 / width
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BroadeningMode {
    #[default]
    Transverse,
    Longitudinal,
}

/// Kernel used for transverse broadening.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Flat,
    Gaussian,
}

/// Controlled, reversible broadening applied to the prepared line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BroadeningControl {
    pub mode: BroadeningMode,
    /// Total induced width (transverse) or gradient χ per unit length (longitudinal).
    pub magnitude: f64,
    /// Time after the start of the input record at which Δ → −Δ is applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_time: Option<f64>,
    /// Mode-matching transfer efficiency η_m.
    pub transfer_efficiency: f64,
    #[serde(default)]
    pub kernel: Kernel,
}

impl BroadeningControl {
    pub fn transverse(magnitude: f64) -> Self {
        Self {
            mode: BroadeningMode::Transverse,
            magnitude,
            switch_time: None,
            transfer_efficiency: 1.0,
            kernel: Kernel::Flat,
        }
    }

    pub fn longitudinal(gradient: f64) -> Self {
        Self {
            mode: BroadeningMode::Longitudinal,
            ..Self::transverse(gradient)
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.magnitude >= 0.0 && self.magnitude.is_finite(), "magnitude", || {
            format!("broadening magnitude must be finite and non-negative, got {}", self.magnitude)
        })?;
        ensure((0.0..=1.0).contains(&self.transfer_efficiency), "transfer_efficiency", || {
            format!("η_m must lie in [0, 1], got {}", self.transfer_efficiency)
        })?;
        if let Some(t) = self.switch_time {
            ensure(t >= 0.0 && t.is_finite(), "switch_time", || {
                format!("switch time must be non-negative, got {t}")
            })?;
        }
        Ok(())
    }
}

/// A line after controlled broadening: the spectral map a [`Medium`] is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralMap {
    pub intrinsic: LineShape,
    pub mode: BroadeningMode,
    pub kernel: Kernel,
    /// Transverse: kernel FWHM. Longitudinal: signed gradient χ per unit length.
    pub magnitude: f64,
}

impl SpectralMap {
    /// Line centre of the slice at position `z` in a medium of length `length`.
    pub fn slice_center(&self, z: f64, length: f64) -> f64 {
        match self.mode {
            BroadeningMode::Transverse => self.intrinsic.center,
            BroadeningMode::Longitudinal => self.intrinsic.center + self.magnitude * (z - 0.5 * length),
        }
    }

    /// Density seen by the slice at `z`.
    pub fn density_at(&self, z: f64, length: f64, x: f64) -> f64 {
        match self.mode {
            BroadeningMode::Transverse => self.transverse_density(x),
            BroadeningMode::Longitudinal => {
                let shift = self.slice_center(z, length) - self.intrinsic.center;
                self.intrinsic.density(x - shift)
            }
        }
    }

    /// Density averaged along the medium. Equal to [`Self::density_at`] for
    /// transverse broadening.
    pub fn averaged_density(&self, length: f64, x: f64) -> f64 {
        match self.mode {
            BroadeningMode::Transverse => self.transverse_density(x),
            BroadeningMode::Longitudinal => {
                convolve_flat(&self.intrinsic, (self.magnitude * length).abs(), x)
            }
        }
    }

    fn transverse_density(&self, x: f64) -> f64 {
        if self.magnitude == 0.0 {
            return self.intrinsic.density(x);
        }
        match self.kernel {
            Kernel::Flat => convolve_flat(&self.intrinsic, self.magnitude, x),
            Kernel::Gaussian => convolve_gaussian(&self.intrinsic, self.magnitude, x),
        }
    }
}

fn convolve_flat(line: &LineShape, width: f64, x: f64) -> f64 {
    if width == 0.0 {
        return line.density(x);
    }
    (line.cdf(x + 0.5 * width) - line.cdf(x - 0.5 * width)) / width
}

/// (G ⊛ K)(x) = ∫ K'(x − u)·C(u) du, with C the CDF of G; integrating by
/// parts keeps the quadrature on the smooth kernel even when G is narrow.
fn convolve_gaussian(line: &LineShape, fwhm: f64, x: f64) -> f64 {
    let s = gaussian_sigma(fwhm);
    let norm = 1.0 / (s * (2.0 * PI).sqrt());
    let dk = |y: f64| -y / (s * s) * norm * (-(y * y) / (2.0 * s * s)).exp();
    simpson(|u| dk(x - u) * line.cdf(u), x - 8.0 * s, x + 8.0 * s, 1200)
}

/// Applies controlled broadening to a prepared line. A zero magnitude leaves
/// the line unchanged.
pub fn apply_broadening(line: &LineShape, control: &BroadeningControl) -> Result<SpectralMap> {
    control.validate()?;
    Ok(SpectralMap {
        intrinsic: line.clone(),
        mode: control.mode,
        kernel: control.kernel,
        magnitude: control.magnitude,
    })
}

/// Full width at half maximum of a single-peaked density around `center`,
/// found by bisection on either side.
pub fn measure_fwhm(f: impl Fn(f64) -> f64, center: f64, search: f64) -> f64 {
    let half = 0.5 * f(center);
    let edge = |sign: f64| {
        let (mut inside, mut outside) = (0.0, search);
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if f(center + sign * mid) >= half {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    edge(1.0) + edge(-1.0)
}

/// Quadrature nodes and weights over detuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetuningGrid {
    pub nodes: Vec<f64>,
    /// Quadrature weights, scaled so that Σ w_j G(Δ_j) = 1.
    pub weights: Vec<f64>,
    /// Spectral mass per node, w_j·G(Δ_j).
    pub mass: Vec<f64>,
    /// Half-span of the grid around its centre.
    pub cutoff: f64,
    pub center: f64,
    /// Unscaled midpoint-rule mass, i.e. the fraction of the line inside the grid.
    pub captured: f64,
}

impl DetuningGrid {
    /// A single node carrying all the mass.
    pub fn delta(center: f64) -> Self {
        Self {
            nodes: vec![center],
            weights: vec![1.0],
            mass: vec![1.0],
            cutoff: 0.0,
            center,
            captured: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        if self.nodes.len() < 2 {
            0.0
        } else {
            2.0 * self.cutoff / self.nodes.len() as f64
        }
    }

    /// Frequency band covered by the nodes (half a cell beyond the outer nodes).
    pub fn band(&self) -> (f64, f64) {
        let (lo, hi) = self
            .nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pad = 0.5 * self.spacing();
        (lo - pad, hi + pad)
    }

    /// Σ w_j·G(Δ_j).
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn moment(&self, order: i32) -> f64 {
        self.nodes
            .iter()
            .zip(&self.mass)
            .map(|(x, m)| m * (x - self.center).powi(order))
            .sum()
    }

    /// True when the node multiset (with masses) is mirror-symmetric about `axis`.
    pub fn is_symmetric_about(&self, axis: f64) -> bool {
        let n = self.nodes.len();
        let scale = self.cutoff.max(axis.abs()).max(1.0);
        (0..n).all(|j| {
            let k = n - 1 - j;
            ((self.nodes[j] - axis) + (self.nodes[k] - axis)).abs() <= 1e-12 * scale
                && (self.mass[j] - self.mass[k]).abs() <= 1e-9 * self.mass[j].abs().max(1e-300)
        })
    }
}

/// Midpoint-rule discretization of `line` over ±cutoff·width/2 with `n_bins`
/// nodes. Flat-top lines are discretized over their exact band.
pub fn discretize(line: &LineShape, n_bins: usize, cutoff_in_linewidths: f64) -> Result<DetuningGrid> {
    ensure(n_bins >= 16, "n_bins", || format!("need at least 16 bins, got {n_bins}"))?;
    ensure(cutoff_in_linewidths >= 3.0, "cutoff", || {
        format!("cutoff must be at least 3 linewidths, got {cutoff_in_linewidths}")
    })?;
    let mut half = 0.5 * cutoff_in_linewidths * line.width;
    if line.kind == LineKind::FlatTop {
        half = half.min(0.5 * line.width);
    }
    Ok(discretize_density(|x| line.density(x), line.center, half, n_bins))
}

pub(crate) fn discretize_density(
    density: impl Fn(f64) -> f64,
    center: f64,
    half: f64,
    n: usize,
) -> DetuningGrid {
    let h = 2.0 * half / n as f64;
    // Mirror the lower half so the offsets are exactly antisymmetric.
    let mut offsets: Vec<f64> = (0..n).map(|j| -half + (j as f64 + 0.5) * h).collect();
    for j in 0..n / 2 {
        offsets[n - 1 - j] = -offsets[j];
    }
    if n % 2 == 1 {
        offsets[n / 2] = 0.0;
    }
    let nodes: Vec<f64> = offsets.iter().map(|o| center + o).collect();
    let raw: Vec<f64> = nodes.iter().map(|&x| h * density(x)).collect();
    let captured: f64 = raw.iter().sum();
    let scale = if captured > 0.0 { 1.0 / captured } else { 1.0 };
    DetuningGrid {
        weights: vec![h * scale; n],
        mass: raw.iter().map(|m| m * scale).collect(),
        nodes,
        cutoff: half,
        center,
        captured,
    }
}

/// Resolution of the discretized medium.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub n_bins: usize,
    /// Grid half-span in units of half the broadened linewidth.
    pub cutoff: f64,
    pub nz: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            n_bins: 400,
            cutoff: 5.0,
            nz: 200,
        }
    }
}

impl GridSettings {
    /// Multiplies every resolution by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            n_bins: ((self.n_bins as f64) * scale).round() as usize,
            cutoff: self.cutoff,
            nz: (((self.nz - 1) as f64) * scale).round() as usize + 1,
        }
    }
}

/// A discretized absorbing medium ready for propagation.
///
/// Lorentzian-family intrinsic lines (including prepared spikes) are not put on
/// the detuning grid: their linear response is identical to a homogeneous
/// decay at the half width, which also never reverses under the field flip.
/// The grid then carries only the controlled, reversible part of the
/// detuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub length: f64,
    /// αL at line centre (transverse) or the effective depth 2πκ/χ (longitudinal).
    pub depth: f64,
    pub map: SpectralMap,
    pub control: BroadeningControl,
    /// Reversible detuning classes; offsets from the slice centre in longitudinal mode.
    pub grid: DetuningGrid,
    pub nz: usize,
    /// Homogeneous dephasing time; infinite for none.
    pub t2: f64,
    /// Per-slice line centre offsets.
    slice_offsets: Vec<f64>,
    irreversible_width: f64,
    flipped: bool,
}

impl Medium {
    pub fn new(
        map: SpectralMap,
        control: BroadeningControl,
        length: f64,
        depth: f64,
        t2: f64,
        settings: GridSettings,
    ) -> Result<Self> {
        control.validate()?;
        ensure(length > 0.0 && length.is_finite(), "length", || {
            format!("medium length must be positive, got {length}")
        })?;
        ensure(depth >= 0.0 && depth.is_finite(), "depth", || {
            format!("optical depth must be non-negative, got {depth}")
        })?;
        ensure(settings.nz >= 2, "nz", || format!("need at least 2 slices, got {}", settings.nz))?;
        ensure(t2 > 0.0, "t2", || format!("T2 must be positive, got {t2}"))?;
        let lorentzian = map.intrinsic.is_lorentzian_family();
        ensure(lorentzian || t2.is_infinite(), "t2", || {
            "a finite T2 requires a Lorentzian-family intrinsic line".into()
        })?;
        if map.mode == BroadeningMode::Longitudinal {
            ensure(map.magnitude > 0.0, "magnitude", || {
                "longitudinal broadening needs a non-zero gradient".into()
            })?;
        }

        let intrinsic = &map.intrinsic;
        let irreversible_width = if lorentzian { intrinsic.width } else { 0.0 };
        let grid = match (map.mode, lorentzian) {
            (BroadeningMode::Transverse, true) if map.magnitude == 0.0 => {
                DetuningGrid::delta(intrinsic.center)
            }
            (BroadeningMode::Transverse, true) => {
                let kernel_kind = match map.kernel {
                    Kernel::Flat => LineKind::FlatTop,
                    Kernel::Gaussian => LineKind::Gaussian,
                };
                let kernel = build_line_shape(kernel_kind, intrinsic.center, map.magnitude)?;
                discretize(&kernel, settings.n_bins, settings.cutoff)?
            }
            (BroadeningMode::Transverse, false) => {
                let width = map.magnitude + intrinsic.width;
                ensure(settings.n_bins >= 16, "n_bins", || {
                    format!("need at least 16 bins, got {}", settings.n_bins)
                })?;
                let mut half = 0.5 * settings.cutoff * width;
                if intrinsic.kind == LineKind::FlatTop && map.kernel == Kernel::Flat {
                    half = half.min(0.5 * width);
                }
                discretize_density(|x| map.transverse_density(x), intrinsic.center, half, settings.n_bins)
            }
            (BroadeningMode::Longitudinal, true) => DetuningGrid::delta(0.0),
            (BroadeningMode::Longitudinal, false) => {
                let centred = LineShape {
                    center: 0.0,
                    ..intrinsic.clone()
                };
                discretize(&centred, settings.n_bins, settings.cutoff)?
            }
        };
        let slice_offsets = (0..settings.nz)
            .map(|k| {
                let z = length * k as f64 / (settings.nz - 1) as f64;
                match map.mode {
                    BroadeningMode::Transverse => 0.0,
                    BroadeningMode::Longitudinal => map.slice_center(z, length),
                }
            })
            .collect();

        Ok(Self {
            length,
            depth,
            map,
            control,
            grid,
            nz: settings.nz,
            t2,
            slice_offsets,
            irreversible_width,
            flipped: false,
        })
    }

    pub fn is_flipped(&self) -> bool {
        self.flipped
    }

    pub fn n_bins(&self) -> usize {
        self.grid.len()
    }

    /// Homogeneous-equivalent decay rate of the coherences.
    pub fn decay_rate(&self) -> f64 {
        0.5 * self.irreversible_width + 1.0 / self.t2
    }

    /// Detuning of class `j` in slice `k`.
    #[inline]
    pub fn detuning(&self, k: usize, j: usize) -> f64 {
        self.slice_offsets[k] + self.grid.nodes[j]
    }

    pub fn slice_offsets(&self) -> &[f64] {
        &self.slice_offsets
    }

    /// Total span of the longitudinal gradient (χ·L), zero for transverse media.
    pub fn gradient_span(&self) -> f64 {
        match self.map.mode {
            BroadeningMode::Transverse => 0.0,
            BroadeningMode::Longitudinal => self.map.magnitude * self.length,
        }
    }

    /// Intrinsic line with the decay-equivalent broadening folded back in
    /// (T2 adds 2/T2 to a Lorentzian FWHM).
    fn effective_intrinsic(&self) -> LineShape {
        let mut line = self.map.intrinsic.clone();
        if line.is_lorentzian_family() {
            line = LineShape {
                kind: LineKind::Lorentzian,
                center: line.center,
                width: line.width + 2.0 / self.t2,
                hole: None,
            };
        }
        line
    }

    /// z-averaged analytic density of the line the field actually sees,
    /// including homogeneous broadening. Mirrors a flip when the medium is flipped.
    pub fn effective_density(&self, x: f64) -> f64 {
        let x = if self.flipped { -x } else { x };
        let map = SpectralMap {
            intrinsic: self.effective_intrinsic(),
            ..self.map.clone()
        };
        map.averaged_density(self.length, x)
    }

    /// Density of the reversible part of the detuning (what the grid samples).
    pub fn reversible_density(&self, x: f64) -> f64 {
        let x = if self.flipped { -x } else { x };
        let intrinsic = &self.map.intrinsic;
        let c = intrinsic.center;
        match (self.map.mode, intrinsic.is_lorentzian_family()) {
            (BroadeningMode::Transverse, true) => {
                if self.map.magnitude == 0.0 {
                    return 0.0;
                }
                let kind = match self.map.kernel {
                    Kernel::Flat => LineKind::FlatTop,
                    Kernel::Gaussian => LineKind::Gaussian,
                };
                base_density(kind, c, self.map.magnitude, x)
            }
            (BroadeningMode::Transverse, false) => self.map.transverse_density(x),
            (BroadeningMode::Longitudinal, true) => {
                base_density(LineKind::FlatTop, c, self.gradient_span().abs(), x)
            }
            (BroadeningMode::Longitudinal, false) => self.map.averaged_density(self.length, x),
        }
    }

    /// Frequency band the discretized detunings cover.
    pub fn band(&self) -> (f64, f64) {
        let (lo, hi) = self.grid.band();
        let (omin, omax) = self
            .slice_offsets
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let pad = if self.map.mode == BroadeningMode::Longitudinal {
            0.5 * self.gradient_span().abs() / (self.nz - 1) as f64
        } else {
            0.0
        };
        (lo + omin - pad, hi + omax + pad)
    }

    /// Coupling constant per unit normalized length such that a resonant
    /// continuous wave decays in amplitude as e^{-depth/2} (transverse), or
    /// κ with 2πκ/χ equal to the effective depth (longitudinal).
    pub fn coupling(&self) -> f64 {
        match self.map.mode {
            BroadeningMode::Transverse => {
                let peak = self.effective_density(self.map.intrinsic.center);
                self.depth / (2.0 * PI * peak)
            }
            BroadeningMode::Longitudinal => self.depth * self.gradient_span().abs() / (2.0 * PI),
        }
    }

    /// Amplitude attenuation exponent a(ν) such that |T(ν)| = e^{-a(ν)}.
    pub fn absorption_profile(&self, nu: f64) -> f64 {
        PI * self.coupling() * self.effective_density(nu)
    }
}

/// Reverses every detuning, Δ → −Δ, across all slices.
pub fn flip_detunings(medium: &Medium) -> Result<Medium> {
    if !medium.grid.is_symmetric_about(0.0) {
        return Err(Error::InvariantViolation(format!(
            "detuning grid is not symmetric about the carrier (centre {}), the flip would not map it onto itself",
            medium.grid.center
        )));
    }
    if medium.map.mode == BroadeningMode::Transverse && medium.map.intrinsic.center != 0.0 {
        return Err(Error::InvariantViolation(
            "transverse line is not centred on the carrier".into(),
        ));
    }
    let mut flipped = medium.clone();
    for x in flipped.grid.nodes.iter_mut() {
        *x = -*x;
    }
    for x in flipped.slice_offsets.iter_mut() {
        *x = -*x;
    }
    flipped.flipped = !medium.flipped;
    Ok(flipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MHZ: f64 = 2.0 * PI;

    fn trapz(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn gaussian_is_normalized_and_peaked_at_center() {
        let g = build_line_shape(LineKind::Gaussian, 0.0, 1000.0 * MHZ).unwrap();
        let w = g.width;
        assert_relative_eq!(trapz(|x| g.density(x), -5.0 * w, 5.0 * w, 20000), 1.0, epsilon = 1e-9);
        assert!(g.density(0.0) > g.density(0.01 * w));
        assert!(g.density(0.0) > g.density(-0.01 * w));
    }

    #[test]
    fn flat_top_density_is_reciprocal_width() {
        let f = build_line_shape(LineKind::FlatTop, 0.0, MHZ).unwrap();
        assert_relative_eq!(f.density(0.3 * MHZ), 1.0 / MHZ);
        assert_eq!(f.density(0.6 * MHZ), 0.0);
    }

    #[test]
    fn lorentzian_peak_matches_closed_form() {
        let gamma = 0.37;
        let l = build_line_shape(LineKind::Lorentzian, 0.0, 2.0 * gamma).unwrap();
        assert_relative_eq!(l.density(0.0), 1.0 / (PI * gamma), max_relative = 1e-14);
    }

    #[test]
    fn non_positive_width_is_rejected() {
        for w in [0.0, -1.0] {
            let err = build_line_shape(LineKind::Gaussian, 0.0, w).unwrap_err();
            assert!(matches!(err, Error::InvalidParameter { name: "width", .. }));
        }
    }

    #[test]
    fn spike_in_four_megahertz_pit() {
        let parent = build_line_shape(LineKind::Gaussian, 0.0, 4.0 * MHZ).unwrap();
        let spike = prepare_spike(&parent, 4.0 * MHZ, 0.2 * MHZ, 0.0).unwrap();
        let fwhm = measure_fwhm(|x| spike.absolute_density(x), 0.0, 1.9 * MHZ);
        assert_relative_eq!(fwhm, 0.2 * MHZ, max_relative = 0.01);
        // Inside the pit only the antihole survives; beyond 10 spike widths it is below 1%.
        let peak = spike.absolute_density(0.0);
        for x in [1.0, 1.5, 1.99] {
            assert!(spike.absolute_density(x * MHZ) < 0.01 * peak);
            assert!(spike.absolute_density(-x * MHZ) < 0.01 * peak);
        }
        // Outside the pit the parent line is untouched.
        assert_eq!(spike.absolute_density(2.5 * MHZ), parent.density(2.5 * MHZ));
    }

    #[test]
    fn prepared_spike_is_normalized() {
        let parent = build_line_shape(LineKind::Gaussian, 0.0, 4.0 * MHZ).unwrap();
        let spike = prepare_spike(&parent, 4.0 * MHZ, 0.2 * MHZ, 0.0).unwrap();
        // Split at the pit edges where the density is discontinuous.
        let e = 2.0 * MHZ;
        let area = trapz(|x| spike.density(x), -30.0 * MHZ, -e, 40000)
            + simpson(|x| spike.density(x), -e * (1.0 - 1e-13), e * (1.0 - 1e-13), 200_000)
            + trapz(|x| spike.density(x), e, 30.0 * MHZ, 40000);
        assert_relative_eq!(area, 1.0, epsilon = 1e-6);
        assert_relative_eq!(spike.cdf(1e9), 1.0, epsilon = 1e-9);
        assert_relative_eq!(spike.cdf(0.0), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn spike_never_exceeds_parent() {
        let parent = build_line_shape(LineKind::Lorentzian, 0.0, 3.0 * MHZ).unwrap();
        let spike = prepare_spike(&parent, 4.0 * MHZ, 0.5 * MHZ, 0.01).unwrap();
        for i in -400..=400 {
            let x = i as f64 * 0.01 * MHZ;
            assert!(spike.absolute_density(x) <= parent.density(x) * (1.0 + 1e-15));
        }
    }

    #[test]
    fn spike_as_wide_as_pit_keeps_center_and_outside() {
        // The Lorentzian antihole reaches the parent at the centre and leaves
        // everything outside the pit alone; it is not a flat identity inside.
        let parent = build_line_shape(LineKind::Gaussian, 0.0, 40.0 * MHZ).unwrap();
        let pit = 4.0 * MHZ;
        let spike = prepare_spike(&parent, pit, pit / 1.0001, 0.0).unwrap();
        assert_relative_eq!(spike.absolute_density(0.0), parent.density(0.0));
        assert_eq!(spike.absolute_density(3.0 * MHZ), parent.density(3.0 * MHZ));
        let fwhm = measure_fwhm(|x| spike.absolute_density(x), 0.0, 1.999 * MHZ);
        assert_relative_eq!(fwhm, pit, max_relative = 0.01);
    }

    #[test]
    fn spike_wider_than_pit_is_rejected() {
        let parent = build_line_shape(LineKind::Gaussian, 0.0, 4.0 * MHZ).unwrap();
        assert!(prepare_spike(&parent, 1.0, 2.0, 0.0).is_err());
        assert!(prepare_spike(&parent, 3.0, 0.1, 0.2).is_err());
    }

    #[test]
    fn spike_free_induction_decay_time() {
        // FID envelope of a Lorentzian = e^{-t·Γ/2}; fit it from a direct
        // Fourier transform of the line shape.
        let spike_hz = 0.2 * MHZ;
        let line = build_line_shape(LineKind::Lorentzian, 0.0, spike_hz).unwrap();
        let fid = |t: f64| {
            let span = 4000.0 * spike_hz;
            let re = simpson(|x| line.density(x) * (x * t).cos(), -span, span, 400_000);
            re / line.cdf(span).min(1.0)
        };
        let t1 = 0.5;
        let t2 = 2.0;
        let tau = (t2 - t1) / (fid(t1) / fid(t2)).ln();
        assert_relative_eq!(tau, dephasing_time(spike_hz), max_relative = 0.01);
        assert_relative_eq!(dephasing_time(spike_hz), 1.0 / (PI * 0.2), max_relative = 1e-12);
    }

    #[test]
    fn transverse_broadening_of_spike() {
        let parent = build_line_shape(LineKind::Gaussian, 0.0, 4.0 * MHZ).unwrap();
        let spike = prepare_spike(&parent, 4.0 * MHZ, 0.2 * MHZ, 0.0).unwrap();
        let map = apply_broadening(&spike, &BroadeningControl::transverse(MHZ)).unwrap();
        let fwhm = measure_fwhm(|x| map.averaged_density(1.0, x), 0.0, 3.0 * MHZ);
        assert_relative_eq!(fwhm, MHZ, max_relative = 0.1);
        let ratio = spike.density(0.0) / map.averaged_density(1.0, 0.0);
        assert!((3.0..=6.0).contains(&ratio), "peak reduction ×{ratio}");
    }

    #[test]
    fn broadening_conserves_weight() {
        let line = build_line_shape(LineKind::Lorentzian, 0.0, 0.2 * MHZ).unwrap();
        for kernel in [Kernel::Flat, Kernel::Gaussian] {
            let ctrl = BroadeningControl {
                kernel,
                ..BroadeningControl::transverse(MHZ)
            };
            let map = apply_broadening(&line, &ctrl).unwrap();
            let before = line.cdf(40.0 * MHZ) - line.cdf(-40.0 * MHZ);
            let after = simpson(|x| map.averaged_density(1.0, x), -40.0 * MHZ, 40.0 * MHZ, 40_000);
            assert_relative_eq!(before, after, epsilon = 1e-4);
        }
    }

    #[test]
    fn zero_broadening_is_identity() {
        let line = build_line_shape(LineKind::Gaussian, 0.3, 1.7).unwrap();
        let map = apply_broadening(&line, &BroadeningControl::transverse(0.0)).unwrap();
        for x in [-2.0, 0.0, 0.3, 1.1] {
            assert_eq!(map.averaged_density(1.0, x), line.density(x));
        }
    }

    #[test]
    fn longitudinal_slice_centres() {
        let line = build_line_shape(LineKind::Lorentzian, 0.0, 0.2 * MHZ).unwrap();
        let map = apply_broadening(&line, &BroadeningControl::longitudinal(MHZ)).unwrap();
        assert_relative_eq!(map.slice_center(0.0, 1.0), -0.5 * MHZ);
        assert_relative_eq!(map.slice_center(1.0, 1.0), 0.5 * MHZ);
    }

    #[test]
    fn gaussian_grid_normalization_and_variance() {
        let g = build_line_shape(LineKind::Gaussian, 0.0, 1.0).unwrap();
        let grid = discretize(&g, 400, 5.0).unwrap();
        assert!((grid.total_mass() - 1.0).abs() < 1e-4);
        assert!((grid.captured - 1.0).abs() < 1e-4);
        let var = gaussian_sigma(1.0).powi(2);
        assert_relative_eq!(grid.moment(2), var, max_relative = 1e-3);
        assert!(grid.is_symmetric_about(0.0));
    }

    #[test]
    fn flat_top_grid_is_exact() {
        let f = build_line_shape(LineKind::FlatTop, 0.0, MHZ).unwrap();
        let grid = discretize(&f, 64, 5.0).unwrap();
        assert_relative_eq!(grid.captured, 1.0, epsilon = 1e-12);
        assert_relative_eq!(grid.band().0, -0.5 * MHZ, epsilon = 1e-12);
    }

    #[test]
    fn too_few_bins_rejected() {
        let g = build_line_shape(LineKind::Gaussian, 0.0, 1.0).unwrap();
        assert!(discretize(&g, 8, 5.0).is_err());
        assert!(discretize(&g, 64, 2.0).is_err());
    }

    fn transverse_medium() -> Medium {
        let line = build_line_shape(LineKind::Lorentzian, 0.0, 0.02 * MHZ).unwrap();
        let ctrl = BroadeningControl::transverse(MHZ);
        let map = apply_broadening(&line, &ctrl).unwrap();
        Medium::new(map, ctrl, 1.0, 2.0, f64::INFINITY, GridSettings::default()).unwrap()
    }

    #[test]
    fn flip_is_an_involution() {
        let m = transverse_medium();
        let f = flip_detunings(&m).unwrap();
        assert!(f.is_flipped());
        let mut sorted: Vec<f64> = f.grid.nodes.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, m.grid.nodes);
        assert_eq!(flip_detunings(&f).unwrap(), m);
    }

    #[test]
    fn longitudinal_flip_negates_slice_centres() {
        let line = build_line_shape(LineKind::Lorentzian, 0.0, 0.02 * MHZ).unwrap();
        let ctrl = BroadeningControl::longitudinal(MHZ);
        let map = apply_broadening(&line, &ctrl).unwrap();
        let m = Medium::new(map, ctrl, 1.0, 0.8, f64::INFINITY, GridSettings::default()).unwrap();
        let f = flip_detunings(&m).unwrap();
        for k in [0, 37, 199] {
            assert_eq!(f.detuning(k, 0), -m.detuning(k, 0));
        }
        assert_relative_eq!(f.detuning(0, 0), 0.5 * MHZ);
        assert_eq!(flip_detunings(&f).unwrap(), m);
    }

    #[test]
    fn asymmetric_grid_cannot_flip() {
        let line = build_line_shape(LineKind::Gaussian, 3.0, 1.0).unwrap();
        let ctrl = BroadeningControl::transverse(0.0);
        let map = apply_broadening(&line, &ctrl).unwrap();
        let m = Medium::new(map, ctrl, 1.0, 1.0, f64::INFINITY, GridSettings::default()).unwrap();
        assert!(matches!(flip_detunings(&m), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn coupling_gives_requested_center_absorption() {
        let m = transverse_medium();
        assert_relative_eq!(m.absorption_profile(0.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn grid_scaling() {
        let s = GridSettings::default().scaled(2.0);
        assert_eq!(s.n_bins, 800);
        assert_eq!(s.nz, 399);
    }

    proptest::proptest! {
        #[test]
        fn every_kind_normalizes_on_its_grid(width in 0.1f64..10.0, center in -5.0f64..5.0, k in 0usize..3) {
            let kind = [LineKind::Gaussian, LineKind::Lorentzian, LineKind::FlatTop][k];
            let line = build_line_shape(kind, center, width).unwrap();
            let grid = discretize(&line, 400, 5.0).unwrap();
            proptest::prop_assert!((grid.total_mass() - 1.0).abs() < 1e-4);
            proptest::prop_assert!(grid.mass.iter().all(|m| *m >= 0.0));
        }

        #[test]
        fn spike_normalizes_on_its_grid(pit in 2.0f64..8.0, frac in 0.1f64..0.5) {
            let parent = build_line_shape(LineKind::Gaussian, 0.0, 4.0).unwrap();
            let spike = prepare_spike(&parent, pit, frac * pit, 0.0).unwrap();
            let grid = discretize_density(|x| spike.density(x), 0.0, 40.0, 20000);
            proptest::prop_assert!((grid.total_mass() - 1.0).abs() < 1e-4);
            proptest::prop_assert!((grid.captured - 1.0).abs() < 2e-3);
        }
    }
}
