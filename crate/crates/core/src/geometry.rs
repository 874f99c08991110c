//! Channel cross-sections, chamber weights, and the family of dumbbell-type
//! domains (two half-spaces joined by a thin tube, and their variants), each
//! truncated to a bounded computational region.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Junction point on the right chamber wall.
pub const E1: [f64; 3] = [1.0, 0.0, 0.0];
pub const ORIGIN: [f64; 3] = [0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SectionKind {
    Disk {
        radius: f64,
    },
    Rectangle {
        half_widths: [f64; 2],
    },
    /// Boundary radius sampled at `θ_j = 2πj/M`; trigonometric interpolation in between.
    PolarStar {
        radii: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionShape {
    #[serde(flatten)]
    pub kind: SectionKind,
    /// Rescale the shape to this area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    /// Require `B(0,1/2) ⊂ Σ ⊂ B(0,1)`.
    #[serde(default)]
    pub admissible: bool,
}

impl SectionShape {
    pub fn disk(radius: f64) -> Self {
        Self {
            kind: SectionKind::Disk { radius },
            area: None,
            admissible: false,
        }
    }

    pub fn rectangle(half_width_x2: f64, half_width_x3: f64) -> Self {
        Self {
            kind: SectionKind::Rectangle {
                half_widths: [half_width_x2, half_width_x3],
            },
            area: None,
            admissible: false,
        }
    }

    pub fn square(side: f64) -> Self {
        Self::rectangle(side / 2.0, side / 2.0)
    }

    /// `r(θ) = base + amplitude·cos(petals·θ)`, sampled at `samples` angles.
    pub fn star(base: f64, amplitude: f64, petals: u32, samples: usize) -> Self {
        let radii = (0..samples)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / samples as f64;
                base + amplitude * (petals as f64 * t).cos()
            })
            .collect();
        Self {
            kind: SectionKind::PolarStar { radii },
            area: None,
            admissible: false,
        }
    }

    pub fn with_area(mut self, area: f64) -> Self {
        self.area = Some(area);
        self
    }

    pub fn admissible(mut self) -> Self {
        self.admissible = true;
        self
    }
}

/// Trigonometric interpolant of polar boundary samples.
#[derive(Debug, Clone)]
struct PolarCurve {
    a0: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PolarCurve {
    fn from_samples(r: &[f64]) -> Self {
        let m = r.len();
        let kmax = m / 2;
        let mut cos = vec![0.0; kmax + 1];
        let mut sin = vec![0.0; kmax + 1];
        let a0 = r.iter().sum::<f64>() / m as f64;
        for k in 1..=kmax {
            let (mut c, mut s) = (0.0, 0.0);
            for (j, &rj) in r.iter().enumerate() {
                let t = 2.0 * PI * (k * j) as f64 / m as f64;
                c += rj * t.cos();
                s += rj * t.sin();
            }
            let scale = if 2 * k == m { 1.0 } else { 2.0 };
            cos[k] = scale * c / m as f64;
            sin[k] = scale * s / m as f64;
        }
        Self { a0, cos, sin }
    }

    fn radius(&self, theta: f64) -> f64 {
        let mut r = self.a0;
        for k in 1..self.cos.len() {
            let (s, c) = (k as f64 * theta).sin_cos();
            r += self.cos[k] * c + self.sin[k] * s;
        }
        r
    }

    fn derivative(&self, theta: f64) -> f64 {
        let mut d = 0.0;
        for k in 1..self.cos.len() {
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            d += kf * (-self.cos[k] * s + self.sin[k] * c);
        }
        d
    }

    /// `½∫ r(θ)² dθ`, exact for the interpolant.
    fn area(&self) -> f64 {
        let mut s = self.a0 * self.a0;
        for k in 1..self.cos.len() {
            s += 0.5 * (self.cos[k] * self.cos[k] + self.sin[k] * self.sin[k]);
        }
        PI * s
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Disk(f64),
    Rectangle([f64; 2]),
    Star { curve: PolarCurve, boundary: Vec<[f64; 2]> },
}

/// A validated cross-section `Σ ⊂ ℝ²` with measure, signed distance and quadrature.
#[derive(Debug, Clone)]
pub struct SectionGeometry {
    shape: Shape,
    measure: f64,
    inner_radius: f64,
    outer_radius: f64,
    spec: SectionShape,
}

pub fn make_section(spec: &SectionShape) -> Result<SectionGeometry> {
    let base = build_shape(&spec.kind)?;
    let base_area = base.measure;
    let scale = match spec.area {
        Some(a) if a > 0.0 => (a / base_area).sqrt(),
        Some(a) => return Err(Error::InvalidSection(format!("target area {a} is not positive"))),
        None => 1.0,
    };
    let kind = match &spec.kind {
        SectionKind::Disk { radius } => SectionKind::Disk { radius: radius * scale },
        SectionKind::Rectangle { half_widths } => SectionKind::Rectangle {
            half_widths: [half_widths[0] * scale, half_widths[1] * scale],
        },
        SectionKind::PolarStar { radii } => SectionKind::PolarStar {
            radii: radii.iter().map(|r| r * scale).collect(),
        },
    };
    let mut geom = build_shape(&kind)?;
    geom.spec = SectionShape {
        kind,
        area: spec.area,
        admissible: spec.admissible,
    };
    if spec.admissible && !geom.is_admissible() {
        return Err(Error::InvalidSection(format!(
            "section is not admissible: inner radius {:.6} (needs ≥ 1/2), outer radius {:.6} (needs < 1)",
            geom.inner_radius, geom.outer_radius
        )));
    }
    Ok(geom)
}

fn build_shape(kind: &SectionKind) -> Result<SectionGeometry> {
    let (shape, measure, inner, outer) = match kind {
        SectionKind::Disk { radius } => {
            if !(*radius > 0.0) {
                return Err(Error::InvalidSection(format!("disk radius {radius} must be positive")));
            }
            (Shape::Disk(*radius), PI * radius * radius, *radius, *radius)
        }
        SectionKind::Rectangle { half_widths: [a, b] } => {
            if !(*a > 0.0 && *b > 0.0) {
                return Err(Error::InvalidSection(format!(
                    "rectangle half-widths ({a}, {b}) must be positive"
                )));
            }
            (Shape::Rectangle([*a, *b]), 4.0 * a * b, a.min(*b), a.hypot(*b))
        }
        SectionKind::PolarStar { radii } => {
            if radii.len() < 3 {
                return Err(Error::InvalidSection(
                    "polar star needs at least 3 radius samples".into(),
                ));
            }
            let curve = PolarCurve::from_samples(radii);
            let m = 4096;
            let mut boundary = Vec::with_capacity(m);
            let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
            for j in 0..m {
                let t = 2.0 * PI * j as f64 / m as f64;
                let r = curve.radius(t);
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                boundary.push([r * t.cos(), r * t.sin()]);
            }
            if !(rmin > 0.0) {
                return Err(Error::InvalidSection(format!(
                    "polar star radius must stay positive (min {rmin:.6}); section must contain the origin"
                )));
            }
            // distance from the origin to the curve can be below min r(θ)
            let inner = boundary.iter().map(|p| p[0].hypot(p[1])).fold(f64::INFINITY, f64::min);
            let area = curve.area();
            (Shape::Star { curve, boundary }, area, inner.min(rmin), rmax)
        }
    };
    if !(measure > 0.0) {
        return Err(Error::InvalidSection(format!("non-positive measure {measure}")));
    }
    Ok(SectionGeometry {
        shape,
        measure,
        inner_radius: inner,
        outer_radius: outer,
        spec: SectionShape {
            kind: kind.clone(),
            area: None,
            admissible: false,
        },
    })
}

impl SectionGeometry {
    pub fn spec(&self) -> &SectionShape {
        &self.spec
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Largest `r` with `B(0,r) ⊂ Σ`.
    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    /// Smallest `r` with `Σ ⊂ B(0,r)` (closure).
    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    /// Diameter of the smallest centred ball containing Σ.
    pub fn diameter(&self) -> f64 {
        2.0 * self.outer_radius
    }

    /// `B(0,1/2) ⊂ Σ ⊂ B(0,1)`. The inner inclusion is checked on the closure so
    /// that the unit square counts as admissible.
    pub fn is_admissible(&self) -> bool {
        self.inner_radius >= 0.5 - 1e-12 && self.outer_radius < 1.0
    }

    /// Only disks and smooth polar stars have a C² boundary.
    pub fn is_smooth(&self) -> bool {
        !matches!(self.shape, Shape::Rectangle(_))
    }

    pub fn is_disk(&self) -> bool {
        matches!(self.shape, Shape::Disk(_))
    }

    pub fn disk_radius(&self) -> Option<f64> {
        match self.shape {
            Shape::Disk(r) => Some(r),
            _ => None,
        }
    }

    /// Invariance under `x₂ ↦ -x₂` and `x₃ ↦ -x₃`.
    pub fn has_quadrant_symmetry(&self) -> bool {
        (0..720).all(|j| {
            let t = PI * j as f64 / 360.0;
            let r = self.boundary_radius(t);
            (r - self.boundary_radius(-t)).abs() < 1e-12 && (r - self.boundary_radius(PI - t)).abs() < 1e-12
        })
    }

    /// Open-set membership.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        match &self.shape {
            Shape::Disk(r) => x[0] * x[0] + x[1] * x[1] < r * r,
            Shape::Rectangle([a, b]) => x[0].abs() < *a && x[1].abs() < *b,
            Shape::Star { curve, .. } => {
                let r = x[0].hypot(x[1]);
                r < curve.radius(x[1].atan2(x[0]))
            }
        }
    }

    /// Membership in `σΣ`.
    pub fn contains_scaled(&self, x: [f64; 2], scale: f64) -> bool {
        self.contains([x[0] / scale, x[1] / scale])
    }

    /// Negative inside, positive outside.
    pub fn signed_distance(&self, x: [f64; 2]) -> f64 {
        match &self.shape {
            Shape::Disk(r) => x[0].hypot(x[1]) - r,
            Shape::Rectangle([a, b]) => {
                let dx = x[0].abs() - a;
                let dy = x[1].abs() - b;
                let outside = dx.max(0.0).hypot(dy.max(0.0));
                outside + dx.max(dy).min(0.0)
            }
            Shape::Star { boundary, .. } => {
                let mut d = f64::INFINITY;
                for (i, p) in boundary.iter().enumerate() {
                    let q = boundary[(i + 1) % boundary.len()];
                    d = d.min(segment_distance(x, *p, q));
                }
                if self.contains(x) {
                    -d
                } else {
                    d
                }
            }
        }
    }

    pub fn signed_distance_scaled(&self, x: [f64; 2], scale: f64) -> f64 {
        scale * self.signed_distance([x[0] / scale, x[1] / scale])
    }

    /// Distance from the origin to the boundary along direction `theta`.
    pub fn boundary_radius(&self, theta: f64) -> f64 {
        match &self.shape {
            Shape::Disk(r) => *r,
            Shape::Rectangle([a, b]) => {
                let (s, c) = theta.sin_cos();
                let tx = if c.abs() > 0.0 { a / c.abs() } else { f64::INFINITY };
                let ty = if s.abs() > 0.0 { b / s.abs() } else { f64::INFINITY };
                tx.min(ty)
            }
            Shape::Star { curve, .. } => curve.radius(theta),
        }
    }

    /// Quadrature over Σ: polar Gauss rule in `r` on each of `n_theta` sectors.
    pub fn quadrature(&self, n_theta: usize, n_radial: usize) -> Vec<([f64; 2], f64)> {
        let mut out = Vec::with_capacity(n_theta * n_radial);
        let dt = 2.0 * PI / n_theta as f64;
        let gl = crate::quadrature::gauss_legendre(n_radial, 0.0, 1.0);
        for j in 0..n_theta {
            let t = (j as f64 + 0.5) * dt;
            let rb = self.boundary_radius(t);
            let (s, c) = t.sin_cos();
            for &(u, w) in &gl {
                let r = u * rb;
                out.push(([r * c, r * s], w * rb * r * dt));
            }
        }
        out
    }

    /// Quadrature over ∂Σ as (point, arc-length weight).
    pub fn boundary_quadrature(&self, n: usize) -> Vec<([f64; 2], f64)> {
        match &self.shape {
            Shape::Rectangle([a, b]) => {
                let corners = [[*a, -*b], [*a, *b], [-*a, *b], [-*a, -*b]];
                let gl = crate::quadrature::gauss_legendre(n.div_ceil(4).max(1), 0.0, 1.0);
                let mut out = Vec::new();
                for i in 0..4 {
                    let p = corners[i];
                    let q = corners[(i + 1) % 4];
                    let len = (q[0] - p[0]).hypot(q[1] - p[1]);
                    for &(u, w) in &gl {
                        out.push(([p[0] + u * (q[0] - p[0]), p[1] + u * (q[1] - p[1])], w * len));
                    }
                }
                out
            }
            _ => {
                let dt = 2.0 * PI / n as f64;
                (0..n)
                    .map(|j| {
                        let t = j as f64 * dt;
                        let r = self.boundary_radius(t);
                        let dr = match &self.shape {
                            Shape::Star { curve, .. } => curve.derivative(t),
                            _ => 0.0,
                        };
                        let (s, c) = t.sin_cos();
                        ([r * c, r * s], r.hypot(dr) * dt)
                    })
                    .collect()
            }
        }
    }
}

fn segment_distance(x: [f64; 2], p: [f64; 2], q: [f64; 2]) -> f64 {
    let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x[0] - p[0]) * dx + (x[1] - p[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (x[0] - p[0] - t * dx).hypot(x[1] - p[1] - t * dy)
}

// ---------------------------------------------------------------------------
// weights

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BumpProfile {
    /// `(1-t²)²`
    C1,
    /// `(1-t²)³`
    #[default]
    C2,
}

impl BumpProfile {
    fn eval(self, t2: f64) -> f64 {
        let u = 1.0 - t2;
        match self {
            BumpProfile::C1 => u * u,
            BumpProfile::C2 => u * u * u,
        }
    }

    /// `∫₀¹ profile(t) t² dt`
    fn radial_moment(self) -> f64 {
        match self {
            BumpProfile::C1 => 8.0 / 105.0,
            BumpProfile::C2 => 16.0 / 315.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 3],
    pub radius: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub profile: BumpProfile,
}

impl Bump {
    pub fn new(center: [f64; 3], radius: f64, amplitude: f64) -> Self {
        Self {
            center,
            radius,
            amplitude,
            profile: BumpProfile::C2,
        }
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let d2 = dist2(x, &self.center);
        let r2 = self.radius * self.radius;
        if d2 >= r2 {
            0.0
        } else {
            self.amplitude * self.profile.eval(d2 / r2)
        }
    }

    pub fn integral(&self) -> f64 {
        self.amplitude * 4.0 * PI * self.radius.powi(3) * self.profile.radial_moment()
    }

    pub fn chamber(&self) -> Option<Chamber> {
        let c = &self.center;
        if c[0] - self.radius > 1.0 {
            Some(Chamber::Plus)
        } else if c[0] + self.radius < 0.0 {
            Some(Chamber::Minus)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Chamber {
    Minus,
    Plus,
}

/// Weight `p` as a sum of compactly supported radial bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct WeightSpec {
    pub bumps: Vec<Bump>,
}

impl WeightSpec {
    /// Unit bump of radius 0.9 at (5,0,0) and its mirror image at (-4,0,0)
    /// with half the amplitude, so that the two chamber spectra differ by a
    /// factor 2 and the lowest eigenvalue of the union is simple.
    pub fn default_simple() -> Self {
        Self {
            bumps: vec![
                Bump::new([5.0, 0.0, 0.0], 0.9, 1.0),
                Bump::new([-4.0, 0.0, 0.0], 0.9, 0.5),
            ],
        }
    }

    /// Mirror configuration for resonant runs; the minus-side copy is moved
    /// away from its junction by `offset` along the axis. Its amplitude is
    /// calibrated later so that the two chamber spectra coincide.
    pub fn mirrored_with_offset(offset: f64) -> Self {
        Self {
            bumps: vec![
                Bump::new([5.0, 0.0, 0.0], 0.9, 1.0),
                Bump::new([-4.0 - offset, 0.0, 0.0], 0.9, 1.0),
            ],
        }
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        self.bumps.iter().map(|b| b.eval(x)).sum()
    }

    pub fn integral(&self) -> f64 {
        self.bumps.iter().map(Bump::integral).sum()
    }

    pub fn is_axisymmetric(&self) -> bool {
        self.bumps.iter().all(|b| b.center[1] == 0.0 && b.center[2] == 0.0)
    }

    /// Scales every bump in one chamber.
    pub fn scale_chamber(&mut self, chamber: Chamber, factor: f64) {
        for b in &mut self.bumps {
            if b.chamber() == Some(chamber) {
                b.amplitude *= factor;
            }
        }
    }

    pub fn chamber_weight(&self, chamber: Chamber) -> WeightSpec {
        WeightSpec {
            bumps: self
                .bumps
                .iter()
                .copied()
                .filter(|b| b.chamber() == Some(chamber))
                .collect(),
        }
    }

    /// Support conditions: every bump inside one chamber at distance > 3 from
    /// its junction, positive amplitudes, and both chambers loaded when
    /// `require_both` is set.
    pub fn validate(&self, require_both: bool) -> Result<()> {
        let (mut minus, mut plus) = (false, false);
        for (i, b) in self.bumps.iter().enumerate() {
            if !(b.amplitude > 0.0 && b.radius > 0.0) {
                return Err(Error::InvalidWeight(format!(
                    "bump {i}: amplitude and radius must be positive"
                )));
            }
            match b.chamber() {
                Some(Chamber::Plus) => {
                    if dist2(&b.center, &E1).sqrt() - b.radius <= 3.0 {
                        return Err(Error::InvalidWeight(format!(
                            "bump {i}: support must stay at distance > 3 from e₁"
                        )));
                    }
                    plus = true;
                }
                Some(Chamber::Minus) => {
                    if dist2(&b.center, &ORIGIN).sqrt() - b.radius <= 3.0 {
                        return Err(Error::InvalidWeight(format!(
                            "bump {i}: support must stay at distance > 3 from the origin"
                        )));
                    }
                    minus = true;
                }
                None => {
                    return Err(Error::InvalidWeight(format!(
                        "bump {i}: support must lie inside one chamber"
                    )))
                }
            }
        }
        if require_both && !(minus && plus) {
            return Err(Error::InvalidWeight("both chambers need a nonzero weight".into()));
        }
        Ok(())
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

// ---------------------------------------------------------------------------
// domains

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    /// `Ω^ε = D⁻ ∪ 𝒞_ε ∪ D⁺`
    Dumbbell,
    /// `D⁻ ∪ D⁺`
    Disconnected,
    /// `D̃ = D⁺ ∪ T₁⁻` at unit scale.
    Tilde,
    /// `D⁺` alone (`B_R⁺` after truncation).
    HalfBall,
    /// `D_ε⁺`: right chamber with the channel piece `3/4 ≤ x₁ ≤ 1`.
    StubPlus,
    /// `D_ε⁻`: left chamber with the channel piece `0 ≤ x₁ ≤ 1/4`.
    StubMinus,
    /// `Ω̃^ε = D_ε⁺ ∪ D_ε⁻`.
    DisconnectedStubs,
}

impl DomainKind {
    pub fn uses_eps(self) -> bool {
        !matches!(self, DomainKind::Tilde | DomainKind::HalfBall)
    }

    /// Image under the reflection `x₁ ↦ 1 - x₁`.
    pub fn reflected(self) -> Self {
        match self {
            DomainKind::StubPlus => DomainKind::StubMinus,
            DomainKind::StubMinus => DomainKind::StubPlus,
            k => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Radius of the half-balls replacing the chambers (`L`, or `R` for harmonic problems).
    pub chamber_radius: f64,
    /// Length of the semi-infinite tube kept for `D̃`.
    pub tube_length: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            chamber_radius: 12.0,
            tube_length: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionTag {
    ChamberMinus,
    ChamberPlus,
    Channel,
    Stub,
    Exterior,
    PhysicalBoundary,
    ArtificialBoundary,
}

impl RegionTag {
    pub fn reflected(self) -> Self {
        match self {
            RegionTag::ChamberMinus => RegionTag::ChamberPlus,
            RegionTag::ChamberPlus => RegionTag::ChamberMinus,
            t => t,
        }
    }
}

/// A straight piece of channel `lo ≤ x₁ ≤ hi` with section `scale·Σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPiece {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
    /// Open end at `lo` is an artificial truncation rather than a wall.
    pub lo_artificial: bool,
    pub tag: RegionTag,
}

impl ChannelPiece {
    fn contains_x1(&self, x1: f64) -> bool {
        let lo_ok = if self.lo_closed { x1 >= self.lo } else { x1 > self.lo };
        let hi_ok = if self.hi_closed { x1 <= self.hi } else { x1 < self.hi };
        lo_ok && hi_ok
    }
}

/// A truncated computational domain in ℝ³.
#[derive(Debug, Clone)]
pub struct DomainGeometry {
    kind: DomainKind,
    eps: f64,
    section: Arc<SectionGeometry>,
    truncation: Truncation,
    minus: bool,
    plus: bool,
    pieces: Vec<ChannelPiece>,
}

pub fn make_domain(
    kind: DomainKind,
    section: Arc<SectionGeometry>,
    eps: f64,
    truncation: Truncation,
    n: usize,
) -> Result<DomainGeometry> {
    if n != 3 {
        return Err(Error::InvalidDomain(format!(
            "grids are only built for N = 3 (got N = {n})"
        )));
    }
    let eps = if kind.uses_eps() {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidDomain(format!("ε = {eps} must lie in (0, 1)")));
        }
        eps
    } else {
        1.0
    };
    let l = truncation.chamber_radius;
    match kind {
        DomainKind::Tilde | DomainKind::HalfBall => {
            if !(l > 2.0) {
                return Err(Error::InvalidDomain(format!("truncation radius R = {l} must exceed 2")));
            }
            if kind == DomainKind::Tilde && truncation.tube_length < 4.0 {
                return Err(Error::InvalidDomain(format!(
                    "tube length {} must be at least 4",
                    truncation.tube_length
                )));
            }
        }
        _ => {
            if l < 8.0 {
                return Err(Error::InvalidDomain(format!(
                    "chamber radius L = {l} must be at least 8"
                )));
            }
        }
    }
    let chan = |lo, hi, lo_closed, hi_closed, tag| ChannelPiece {
        lo,
        hi,
        lo_closed,
        hi_closed,
        lo_artificial: false,
        tag,
    };
    let (minus, plus, pieces) = match kind {
        DomainKind::Dumbbell => (true, true, vec![chan(0.0, 1.0, true, true, RegionTag::Channel)]),
        DomainKind::Disconnected => (true, true, vec![]),
        DomainKind::Tilde => (
            false,
            true,
            vec![ChannelPiece {
                lo: 1.0 - truncation.tube_length,
                hi: 1.0,
                lo_closed: false,
                hi_closed: true,
                lo_artificial: true,
                tag: RegionTag::Channel,
            }],
        ),
        DomainKind::HalfBall => (false, true, vec![]),
        DomainKind::StubPlus => (false, true, vec![chan(0.75, 1.0, false, true, RegionTag::Stub)]),
        DomainKind::StubMinus => (true, false, vec![chan(0.0, 0.25, true, false, RegionTag::Stub)]),
        DomainKind::DisconnectedStubs => (
            true,
            true,
            vec![
                chan(0.0, 0.25, true, false, RegionTag::Stub),
                chan(0.75, 1.0, false, true, RegionTag::Stub),
            ],
        ),
    };
    Ok(DomainGeometry {
        kind,
        eps,
        section,
        truncation,
        minus,
        plus,
        pieces,
    })
}

impl DomainGeometry {
    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    /// Channel scale (1 for the unit-scale harmonic domains).
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn section(&self) -> &Arc<SectionGeometry> {
        &self.section
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn has_minus(&self) -> bool {
        self.minus
    }

    pub fn has_plus(&self) -> bool {
        self.plus
    }

    pub fn pieces(&self) -> &[ChannelPiece] {
        &self.pieces
    }

    /// The same domain with another kind (same section, ε and truncation).
    pub fn with_kind(&self, kind: DomainKind) -> Result<DomainGeometry> {
        make_domain(kind, self.section.clone(), self.eps, self.truncation, 3)
    }

    /// Rejects weights whose support meets the truncation surface.
    pub fn check_weight(&self, weight: &WeightSpec) -> Result<()> {
        let l = self.truncation.chamber_radius;
        for (i, b) in weight.bumps.iter().enumerate() {
            let (center, present) = match b.chamber() {
                Some(Chamber::Plus) => (E1, self.plus),
                Some(Chamber::Minus) => (ORIGIN, self.minus),
                None => {
                    return Err(Error::InvalidWeight(format!(
                        "bump {i}: support must lie inside one chamber"
                    )))
                }
            };
            if present && dist2(&b.center, &center).sqrt() + b.radius >= l {
                return Err(Error::InvalidDomain(format!(
                    "bump {i} support reaches the truncation sphere of radius {l}"
                )));
            }
        }
        Ok(())
    }

    /// Rejects a target spacing that cannot resolve the channel.
    pub fn check_resolution(&self, h: f64) -> Result<()> {
        if self.pieces.is_empty() {
            return Ok(());
        }
        // eight cells across the channel radius
        let needed = self.eps * self.section.diameter() / 16.0;
        if h > needed {
            return Err(Error::Resolution(format!(
                "spacing {h} leaves fewer than 8 cells across the channel radius; need h ≤ {needed:.6}"
            )));
        }
        Ok(())
    }

    fn in_chamber_minus(&self, p: &[f64; 3]) -> bool {
        self.minus && p[0] < 0.0 && dist2(p, &ORIGIN) < self.truncation.chamber_radius.powi(2)
    }

    fn in_chamber_plus(&self, p: &[f64; 3]) -> bool {
        self.plus && p[0] > 1.0 && dist2(p, &E1) < self.truncation.chamber_radius.powi(2)
    }

    /// Region containing `p` if it lies in the (open) domain.
    pub fn piece_at(&self, p: &[f64; 3]) -> Option<RegionTag> {
        if self.in_chamber_minus(p) {
            return Some(RegionTag::ChamberMinus);
        }
        if self.in_chamber_plus(p) {
            return Some(RegionTag::ChamberPlus);
        }
        for c in &self.pieces {
            if c.contains_x1(p[0]) && self.section.contains_scaled([p[1], p[2]], self.eps) {
                return Some(c.tag);
            }
        }
        None
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        self.piece_at(p).is_some()
    }

    /// Euclidean distance to the physical (non-artificial) boundary.
    pub fn wall_distance(&self, p: &[f64; 3]) -> f64 {
        let l = self.truncation.chamber_radius;
        let rp = p[1].hypot(p[2]);
        let sd = self.section.signed_distance_scaled([p[1], p[2]], self.eps);
        let mut d = f64::INFINITY;
        // chamber walls minus channel mouths
        let mouth_at = |x: f64| {
            self.pieces
                .iter()
                .any(|c| (c.lo == x && c.lo_closed) || (c.hi == x && c.hi_closed))
        };
        for (present, x) in [(self.minus, 0.0), (self.plus, 1.0)] {
            if !present {
                continue;
            }
            let lateral = if mouth_at(x) { (-sd).max(0.0) } else { 0.0 };
            let rim = (rp - l).max(0.0);
            d = d.min((p[0] - x).hypot(lateral.max(rim)));
        }
        for c in &self.pieces {
            let dx = if p[0] < c.lo {
                c.lo - p[0]
            } else if p[0] > c.hi {
                p[0] - c.hi
            } else {
                0.0
            };
            d = d.min(dx.hypot(sd));
            if !c.lo_closed && !c.lo_artificial {
                d = d.min((p[0] - c.lo).hypot(sd.max(0.0)));
            }
            if !c.hi_closed {
                d = d.min((p[0] - c.hi).hypot(sd.max(0.0)));
            }
        }
        d
    }

    /// Distance to the artificial truncation surfaces.
    pub fn artificial_distance(&self, p: &[f64; 3]) -> f64 {
        let l = self.truncation.chamber_radius;
        let mut d = f64::INFINITY;
        if self.plus {
            let r = dist2(p, &E1).sqrt();
            let on_side = if p[0] >= 1.0 {
                (r - l).abs()
            } else {
                (p[0] - 1.0).hypot((r - l).max(0.0))
            };
            d = d.min(on_side);
        }
        if self.minus {
            let r = dist2(p, &ORIGIN).sqrt();
            let on_side = if p[0] <= 0.0 {
                (r - l).abs()
            } else {
                p[0].hypot((r - l).max(0.0))
            };
            d = d.min(on_side);
        }
        for c in &self.pieces {
            if c.lo_artificial {
                let sd = self.section.signed_distance_scaled([p[1], p[2]], self.eps);
                d = d.min((p[0] - c.lo).hypot(sd.max(0.0)));
            }
        }
        d
    }

    /// Region tag of `p`; points within `tol` of a wall (resp. truncation
    /// surface) are boundary points.
    pub fn locate(&self, p: &[f64; 3], tol: f64) -> RegionTag {
        if self.wall_distance(p) <= tol {
            return RegionTag::PhysicalBoundary;
        }
        if self.artificial_distance(p) <= tol {
            return RegionTag::ArtificialBoundary;
        }
        self.piece_at(p).unwrap_or(RegionTag::Exterior)
    }

    /// Axis-aligned bounding box `[x₁ range, |x'| bound]`.
    pub fn bounding_box(&self) -> ([f64; 2], f64) {
        let l = self.truncation.chamber_radius;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut rmax: f64 = 0.0;
        if self.minus {
            lo = lo.min(-l);
            hi = hi.max(0.0);
            rmax = rmax.max(l);
        }
        if self.plus {
            lo = lo.min(1.0);
            hi = hi.max(1.0 + l);
            rmax = rmax.max(l);
        }
        for c in &self.pieces {
            lo = lo.min(c.lo);
            hi = hi.max(c.hi);
            rmax = rmax.max(self.eps * self.section.outer_radius());
        }
        ([lo, hi], rmax)
    }

    /// Volume of the domain restricted to a box, by midpoint sampling on an
    /// `n³` lattice (used for additivity checks).
    pub fn volume_in_box(&self, lo: [f64; 3], hi: [f64; 3], n: usize, filter: Option<RegionTag>) -> f64 {
        let h = [
            (hi[0] - lo[0]) / n as f64,
            (hi[1] - lo[1]) / n as f64,
            (hi[2] - lo[2]) / n as f64,
        ];
        let mut count = 0usize;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let p = [
                        lo[0] + (i as f64 + 0.5) * h[0],
                        lo[1] + (j as f64 + 0.5) * h[1],
                        lo[2] + (k as f64 + 0.5) * h[2],
                    ];
                    match (self.piece_at(&p), filter) {
                        (Some(t), Some(f)) if t == f => count += 1,
                        (Some(_), None) => count += 1,
                        _ => {}
                    }
                }
            }
        }
        count as f64 * h[0] * h[1] * h[2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(r: f64) -> Arc<SectionGeometry> {
        Arc::new(make_section(&SectionShape::disk(r)).unwrap())
    }

    #[test]
    fn disk_area_closed_form() {
        let s = make_section(&SectionShape::disk(0.75)).unwrap();
        assert!((s.measure() - PI * 0.5625).abs() < 1e-12);
        assert!((s.measure() - 1.767146).abs() < 1e-6);
    }

    #[test]
    fn unit_square_is_admissible() {
        let s = make_section(&SectionShape::square(1.0).admissible()).unwrap();
        assert!((s.measure() - 1.0).abs() < 1e-14);
        assert!(s.is_admissible());
        assert!(!s.is_smooth());
    }

    #[test]
    fn polar_star_area_matches_closed_form() {
        let s = make_section(&SectionShape::star(0.6, 0.05, 4, 64)).unwrap();
        let exact = PI * (0.36 + 0.00125);
        assert!((s.measure() - exact).abs() / exact < 1e-10);
        // independent quadrature of the area
        let q: f64 = s.quadrature(256, 4).iter().map(|p| p.1).sum();
        assert!((q - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn inadmissible_rejected_when_flagged() {
        assert!(make_section(&SectionShape::disk(0.4).admissible()).is_err());
        assert!(make_section(&SectionShape::disk(1.0).admissible()).is_err());
        assert!(make_section(&SectionShape::disk(0.4)).is_ok());
        assert!(make_section(&SectionShape::disk(-1.0)).is_err());
    }

    #[test]
    fn target_area_rescales() {
        let s = make_section(&SectionShape::disk(1.0).with_area(1.0)).unwrap();
        assert!((s.measure() - 1.0).abs() < 1e-14);
        assert!((s.disk_radius().unwrap() - 1.0 / PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn signed_distances() {
        let s = make_section(&SectionShape::square(1.0)).unwrap();
        assert!((s.signed_distance([0.0, 0.0]) + 0.5).abs() < 1e-14);
        assert!((s.signed_distance([1.0, 1.0]) - 0.5f64.hypot(0.5)).abs() < 1e-14);
        let st = make_section(&SectionShape::star(0.6, 0.0, 4, 16)).unwrap();
        assert!((st.signed_distance([0.0, 0.0]) + 0.6).abs() < 1e-5);
    }

    #[test]
    fn dumbbell_classification_examples() {
        let d = make_domain(DomainKind::Dumbbell, disk(0.75), 0.1, Truncation::default(), 3).unwrap();
        assert_eq!(d.locate(&[0.5, 0.05, 0.0], 0.0), RegionTag::Channel);
        assert_eq!(d.locate(&[0.5, 0.08, 0.0], 0.0), RegionTag::Exterior);
        assert_eq!(d.locate(&[1.0, 0.0, 0.0], 0.0), RegionTag::Channel);
        assert_eq!(d.locate(&[-0.5, 0.0, 0.0], 0.0), RegionTag::ChamberMinus);
        assert_eq!(d.locate(&[1.0, 0.5, 0.0], 0.0), RegionTag::PhysicalBoundary);
        assert_eq!(d.locate(&[1.0 + 1e-3, 0.5, 0.0], 2e-3), RegionTag::PhysicalBoundary);
        let g = d.with_kind(DomainKind::Disconnected).unwrap();
        assert_eq!(g.locate(&[0.5, 0.0, 0.0], 0.0), RegionTag::Exterior);
    }

    #[test]
    fn tilde_classification_examples() {
        let d = make_domain(DomainKind::Tilde, disk(0.75), 0.5, Truncation::default(), 3).unwrap();
        assert_eq!(d.eps(), 1.0);
        assert_eq!(d.locate(&[-2.0, 0.0, 0.0], 0.0), RegionTag::Channel);
        assert_eq!(d.locate(&[-7.0, 0.0, 0.0], 0.0), RegionTag::Exterior);
        assert_eq!(d.locate(&[14.0, 0.0, 0.0], 0.0), RegionTag::Exterior);
        assert_eq!(d.locate(&[13.0, 0.0, 0.0], 1e-9), RegionTag::ArtificialBoundary);
    }

    #[test]
    fn domain_preconditions() {
        let t = Truncation {
            chamber_radius: 6.0,
            tube_length: 6.0,
        };
        assert!(make_domain(DomainKind::Dumbbell, disk(0.75), 0.1, t, 3).is_err());
        assert!(make_domain(DomainKind::Dumbbell, disk(0.75), 1.5, Truncation::default(), 3).is_err());
        assert!(make_domain(DomainKind::Dumbbell, disk(0.75), 0.1, Truncation::default(), 4).is_err());
        let d = make_domain(DomainKind::Dumbbell, disk(0.75), 0.1, Truncation::default(), 3).unwrap();
        assert!(d.check_resolution(1.0 / 64.0).is_err());
        assert!(d.check_resolution(1.0 / 128.0).is_ok());
        let mut w = WeightSpec::default_simple();
        assert!(d.check_weight(&w).is_ok());
        w.bumps[0].center = [12.5, 0.0, 0.0];
        assert!(d.check_weight(&w).is_err());
    }

    #[test]
    fn weight_support_rules() {
        assert!(WeightSpec::default_simple().validate(true).is_ok());
        let near = WeightSpec {
            bumps: vec![Bump::new([3.5, 0.0, 0.0], 0.9, 1.0)],
        };
        assert!(near.validate(false).is_err());
        let straddle = WeightSpec {
            bumps: vec![Bump::new([0.5, 0.0, 0.0], 0.9, 1.0)],
        };
        assert!(straddle.validate(false).is_err());
        let one_side = WeightSpec {
            bumps: vec![Bump::new([5.0, 0.0, 0.0], 0.9, 1.0)],
        };
        assert!(one_side.validate(true).is_err());
        assert!(one_side.validate(false).is_ok());
    }

    #[test]
    fn bump_integral_against_quadrature() {
        let b = Bump::new([5.0, 0.0, 0.0], 0.9, 1.0);
        // radial Gauss quadrature, independent of the closed-form moment
        let q: f64 = crate::quadrature::gauss_legendre(40, 0.0, 0.9)
            .iter()
            .map(|&(r, w)| w * 4.0 * PI * r * r * b.eval(&[5.0 + r, 0.0, 0.0]))
            .sum();
        assert!((q - b.integral()).abs() < 1e-12);
    }

    #[test]
    fn admissible_sections_sampled() {
        for shape in [
            SectionShape::disk(0.75),
            SectionShape::square(1.0),
            SectionShape::star(0.7, 0.1, 5, 64),
        ] {
            let s = make_section(&shape).unwrap();
            assert!(s.is_admissible());
            for j in 0..1000 {
                let t = 2.0 * PI * j as f64 / 1000.0;
                let r = s.boundary_radius(t);
                assert!((0.5 - 1e-12..1.0).contains(&r));
            }
        }
    }
}
