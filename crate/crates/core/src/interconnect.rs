//! Metal-stack data, metal-line allocation and per-cell wire segment
//! conductances.
//!
//! All lengths are in nanometres and resistivities in Ω·nm, so a segment
//! resistance ρ·L/(t·W) comes out directly in ohms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterconnectError {
    #[error("unknown metal layer `{0}`")]
    UnknownLayer(String),
    #[error("unknown line configuration `{0}`")]
    UnknownConfiguration(String),
    #[error("layer `{0}` is allocated to more than one line")]
    OverlappingAllocation(String),
    #[error("{0} line has no metal layers")]
    EmptyLine(&'static str),
    #[error("WLT and WLB allocations differ in conductance ({wlt} S vs {wlb} S per segment)")]
    AsymmetricWordLines { wlt: f64, wlb: f64 },
    #[error("segment width {width} nm below the {layer} minimum of {min} nm")]
    WidthBelowMinimum { layer: String, width: f64, min: f64 },
    #[error("segment length must be positive, got {0} nm")]
    NonPositiveLength(f64),
    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),
    #[error("invalid metal stack: {0}")]
    InvalidStack(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    H,
    V,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetalLayerSpec {
    pub name: String,
    /// Metal thickness [nm]
    pub thickness: f64,
    /// Minimum drawn width [nm]
    pub min_width: f64,
    /// Minimum spacing to the next line [nm]
    pub min_spacing: f64,
    /// Resistivity [Ω·nm]
    pub resistivity: f64,
    pub direction: Direction,
}

impl MetalLayerSpec {
    /// Minimum line pitch, width + spacing [nm]
    pub fn pitch(&self) -> f64 {
        self.min_width + self.min_spacing
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaSpec {
    /// e.g. "V12" connects M1 and M2
    pub name: String,
    /// Single-via resistance [Ω]
    pub resistance: f64,
    /// Square via edge [nm]
    pub size: f64,
    /// Minimum via-to-via spacing [nm]
    pub min_spacing: f64,
}

/// Metal layers bottom-up plus the vias between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetalStack {
    pub layers: Vec<MetalLayerSpec>,
    /// `vias[k]` connects `layers[k]` and `layers[k + 1]`.
    pub vias: Vec<ViaSpec>,
}

impl Default for MetalStack {
    fn default() -> Self {
        Self::asap7()
    }
}

impl MetalStack {
    /// ASAP7 predictive 7 nm back-end-of-line rules.
    pub fn asap7() -> Self {
        use Direction::{H, V};
        let row = |name: &str, t: f64, s: f64, w: f64, rho: f64, d| MetalLayerSpec {
            name: name.to_string(),
            thickness: t,
            min_width: w,
            min_spacing: s,
            resistivity: rho,
            direction: d,
        };
        let via = |name: &str, r: f64, size: f64, sp: f64| ViaSpec {
            name: name.to_string(),
            resistance: r,
            size,
            min_spacing: sp,
        };
        Self {
            layers: vec![
                row("M1", 36.0, 18.0, 18.0, 43.2, V),
                row("M2", 36.0, 18.0, 18.0, 43.2, H),
                row("M3", 36.0, 18.0, 18.0, 43.2, V),
                row("M4", 48.0, 24.0, 24.0, 36.9, H),
                row("M5", 48.0, 24.0, 24.0, 36.9, V),
                row("M6", 64.0, 32.0, 32.0, 32.0, H),
                row("M7", 64.0, 32.0, 32.0, 32.0, V),
                row("M8", 80.0, 40.0, 40.0, 28.8, H),
                row("M9", 80.0, 40.0, 40.0, 28.8, V),
            ],
            vias: vec![
                via("V12", 17.0, 18.0, 18.0),
                via("V23", 17.0, 18.0, 18.0),
                via("V34", 17.0, 18.0, 18.0),
                via("V45", 12.0, 24.0, 33.0),
                via("V56", 12.0, 24.0, 33.0),
                via("V67", 8.0, 32.0, 45.0),
                via("V78", 8.0, 32.0, 45.0),
                via("V89", 6.0, 40.0, 57.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), InterconnectError> {
        if self.layers.is_empty() {
            return Err(InterconnectError::InvalidStack("no layers".into()));
        }
        if self.vias.len() + 1 != self.layers.len() {
            return Err(InterconnectError::InvalidStack(format!(
                "{} layers need {} vias, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.vias.len()
            )));
        }
        for l in &self.layers {
            let ok = [l.thickness, l.min_width, l.min_spacing, l.resistivity]
                .iter()
                .all(|v| v.is_finite() && *v > 0.0);
            if !ok {
                return Err(InterconnectError::InvalidStack(format!(
                    "layer {} has a non-positive dimension",
                    l.name
                )));
            }
        }
        for w in self.layers.windows(2) {
            if w[0].direction == w[1].direction {
                return Err(InterconnectError::InvalidStack(format!(
                    "{} and {} share a routing direction",
                    w[0].name, w[1].name
                )));
            }
        }
        if let Some(v) = self.vias.iter().find(|v| !(v.resistance > 0.0)) {
            return Err(InterconnectError::InvalidStack(format!(
                "via {} resistance must be positive",
                v.name
            )));
        }
        Ok(())
    }

    fn index_of(&self, name: &str) -> Result<usize, InterconnectError> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| InterconnectError::UnknownLayer(name.to_string()))
    }

    pub fn layer(&self, name: &str) -> Result<&MetalLayerSpec, InterconnectError> {
        Ok(&self.layers[self.index_of(name)?])
    }

    /// Series resistance of one via per level between two layers [Ω].
    pub fn via_stack_resistance(&self, a: &str, b: &str) -> Result<f64, InterconnectError> {
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        let (lo, hi) = (i.min(j), i.max(j));
        Ok(self.vias[lo..hi].iter().map(|v| v.resistance).sum())
    }
}

/// Assignment of metal layers to the three line sets of the two-level stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineConfiguration {
    pub name: String,
    pub wlt_layers: Vec<String>,
    pub bl_layers: Vec<String>,
    pub wlb_layers: Vec<String>,
}

impl LineConfiguration {
    /// Built-in allocations 1–3.
    ///
    /// Configurations 2 and 3 split the extra word-line layers alternately so
    /// that WLT and WLB receive one layer of each thickness class.
    pub fn builtin(id: u8) -> Result<Self, InterconnectError> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let cfg = match id {
            1 => Self {
                name: "config1".into(),
                wlt_layers: s(&["M3"]),
                bl_layers: s(&["M2"]),
                wlb_layers: s(&["M1"]),
            },
            2 => Self {
                name: "config2".into(),
                wlt_layers: s(&["M3", "M6", "M8"]),
                bl_layers: s(&["M2", "M4", "M5"]),
                wlb_layers: s(&["M1", "M7", "M9"]),
            },
            3 => Self {
                name: "config3".into(),
                wlt_layers: s(&["M3", "M4", "M6", "M8"]),
                bl_layers: s(&["M2"]),
                wlb_layers: s(&["M1", "M5", "M7", "M9"]),
            },
            _ => return Err(InterconnectError::UnknownConfiguration(id.to_string())),
        };
        Ok(cfg)
    }

    /// Resolves "1", "2", "3", "config1", ... to a built-in.
    pub fn by_name(name: &str) -> Result<Self, InterconnectError> {
        let id = name.strip_prefix("config").unwrap_or(name);
        match id.parse::<u8>() {
            Ok(n) => Self::builtin(n),
            Err(_) => Err(InterconnectError::UnknownConfiguration(name.to_string())),
        }
    }

    /// Word-line layers (WLT ∪ WLB).
    pub fn word_line_layers(&self) -> impl Iterator<Item = &String> {
        self.wlt_layers.iter().chain(self.wlb_layers.iter())
    }

    /// Checks disjointness, non-emptiness, layer existence and WLT/WLB symmetry.
    pub fn validate(&self, stack: &MetalStack) -> Result<(), InterconnectError> {
        for (set, what) in [
            (&self.wlt_layers, "WLT"),
            (&self.bl_layers, "BL"),
            (&self.wlb_layers, "WLB"),
        ] {
            if set.is_empty() {
                return Err(InterconnectError::EmptyLine(what));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.wlt_layers.iter().chain(&self.bl_layers).chain(&self.wlb_layers) {
            stack.layer(name)?;
            if !seen.insert(name.as_str()) {
                return Err(InterconnectError::OverlappingAllocation(name.clone()));
            }
        }
        // conductance of a unit-length, unit-width segment on each side
        let sheet = |set: &[String]| -> Result<f64, InterconnectError> {
            let mut g = 0.0;
            for n in set {
                let l = stack.layer(n)?;
                g += l.thickness / l.resistivity;
            }
            Ok(g)
        };
        let (gt, gb) = (sheet(&self.wlt_layers)?, sheet(&self.wlb_layers)?);
        let st = max_spacing(stack, &self.wlt_layers)?;
        let sb = max_spacing(stack, &self.wlb_layers)?;
        if (gt - gb).abs() > 1e-9 * gt.max(gb) || (st - sb).abs() > 1e-9 * st.max(sb) {
            return Err(InterconnectError::AsymmetricWordLines { wlt: gt, wlb: gb });
        }
        Ok(())
    }
}

fn max_spacing(stack: &MetalStack, layers: &[String]) -> Result<f64, InterconnectError> {
    let mut s: f64 = 0.0;
    for n in layers {
        s = s.max(stack.layer(n)?.min_spacing);
    }
    Ok(s)
}

fn max_pitch(stack: &MetalStack, layers: &[&String]) -> Result<f64, InterconnectError> {
    let mut p: f64 = 0.0;
    for n in layers {
        p = p.max(stack.layer(n)?.pitch());
    }
    Ok(p)
}

/// Array dimensions and cell footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubarrayGeometry {
    pub n_row: usize,
    pub n_column: usize,
    /// Cell extent along the word lines [nm]
    pub w_cell: f64,
    /// Cell extent along the bit lines [nm]
    pub l_cell: f64,
    /// Driver output resistance, per driver [Ω]
    pub r_driver: f64,
}

impl SubarrayGeometry {
    /// Checks counts, driver resistance and the configuration's minimum pitch.
    pub fn validate(
        &self,
        config: &LineConfiguration,
        stack: &MetalStack,
    ) -> Result<(), InterconnectError> {
        if self.n_row == 0 || self.n_column == 0 {
            return Err(InterconnectError::InfeasibleGeometry(format!(
                "array must be at least 1x1, got {}x{}",
                self.n_row, self.n_column
            )));
        }
        if !(self.r_driver >= 0.0 && self.r_driver.is_finite()) {
            return Err(InterconnectError::InfeasibleGeometry(format!(
                "driver resistance must be finite and non-negative, got {} Ω",
                self.r_driver
            )));
        }
        let (w_min, l_min) = min_cell_pitch(config, stack)?;
        // slack for cell sizes given as a float multiple of the minimum
        let tol = 1e-9;
        if !(self.w_cell >= w_min * (1.0 - tol)) || !self.w_cell.is_finite() {
            return Err(InterconnectError::InfeasibleGeometry(format!(
                "w_cell {} nm below the {} minimum of {} nm",
                self.w_cell, config.name, w_min
            )));
        }
        if !(self.l_cell >= l_min * (1.0 - tol)) || !self.l_cell.is_finite() {
            return Err(InterconnectError::InfeasibleGeometry(format!(
                "l_cell {} nm below the {} minimum of {} nm",
                self.l_cell, config.name, l_min
            )));
        }
        Ok(())
    }
}

/// Which cell dimension a bit-line segment spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BitlineSegment {
    /// Segment length `w_cell`, usable width `l_cell − S`: the bit line
    /// shares the word lines' footprint rules, so wider cells lengthen every
    /// line and longer cells widen every line.
    #[default]
    AcrossWidth,
    /// Segment length `l_cell`, usable width `w_cell − S` (perpendicular
    /// routing with the bit line confined to the cell width).
    AlongLength,
}

/// Wire-model options.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WireModel {
    pub bitline: BitlineSegment,
    /// Reach each non-bottom layer of a line through its via stack, one
    /// stitch per cell.
    pub via_aware: bool,
    /// Zero-resistance wires (g_x = g_y = ∞).
    pub ideal: bool,
}

/// Per-cell wire segment conductances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentConductances {
    /// Bit-line segment [S]
    pub g_x: f64,
    /// Word-line (WLT or WLB) segment [S]
    pub g_y: f64,
}

/// Conductance t·W/(ρ·L) of a single straight segment.
pub fn metal_segment_conductance(
    layer: &MetalLayerSpec,
    length: f64,
    width: f64,
) -> Result<f64, InterconnectError> {
    if !(length > 0.0) {
        return Err(InterconnectError::NonPositiveLength(length));
    }
    if !(width >= layer.min_width * (1.0 - 1e-12)) {
        return Err(InterconnectError::WidthBelowMinimum {
            layer: layer.name.clone(),
            width,
            min: layer.min_width,
        });
    }
    Ok(layer.thickness * width / (layer.resistivity * length))
}

/// Minimum cell footprint (w_min, l_min) for a configuration [nm].
///
/// The cell width is bounded by the bit-line pitch and the cell length by
/// the word-line pitch; the coarsest allocated layer governs each.
pub fn min_cell_pitch(
    config: &LineConfiguration,
    stack: &MetalStack,
) -> Result<(f64, f64), InterconnectError> {
    let bl: Vec<&String> = config.bl_layers.iter().collect();
    let wl: Vec<&String> = config.word_line_layers().collect();
    Ok((max_pitch(stack, &bl)?, max_pitch(stack, &wl)?))
}

/// Parallel conductance of one line's layers over a single cell.
///
/// `extent` is the cell dimension across the line; the usable width is that
/// minus the largest spacing rule among the line's layers.
pub fn line_segment_conductance(
    layers: &[String],
    length: f64,
    extent: f64,
    stack: &MetalStack,
    via_aware: bool,
) -> Result<f64, InterconnectError> {
    let width = extent - max_spacing(stack, layers)?;
    let base = layers
        .iter()
        .min_by_key(|n| stack.index_of(n).unwrap_or(usize::MAX))
        .ok_or(InterconnectError::EmptyLine("line"))?;
    let mut g = 0.0;
    for name in layers {
        let layer = stack.layer(name)?;
        let gk = metal_segment_conductance(layer, length, width)?;
        if via_aware && name != base {
            let rv = stack.via_stack_resistance(base, name)?;
            g += 1.0 / (1.0 / gk + rv);
        } else {
            g += gk;
        }
    }
    Ok(g)
}

/// Segment conductances (g_x, g_y) for a configuration and geometry.
pub fn line_config_conductances(
    config: &LineConfiguration,
    geom: &SubarrayGeometry,
    stack: &MetalStack,
    wire: &WireModel,
) -> Result<SegmentConductances, InterconnectError> {
    config.validate(stack)?;
    geom.validate(config, stack)?;
    if wire.ideal {
        return Ok(SegmentConductances { g_x: f64::INFINITY, g_y: f64::INFINITY });
    }
    let g_y = line_segment_conductance(
        &config.wlt_layers,
        geom.w_cell,
        geom.l_cell,
        stack,
        wire.via_aware,
    )?;
    let (bl_len, bl_extent) = match wire.bitline {
        BitlineSegment::AcrossWidth => (geom.w_cell, geom.l_cell),
        BitlineSegment::AlongLength => (geom.l_cell, geom.w_cell),
    };
    let g_x =
        line_segment_conductance(&config.bl_layers, bl_len, bl_extent, stack, wire.via_aware)?;
    Ok(SegmentConductances { g_x, g_y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn asap7_is_consistent() {
        MetalStack::asap7().validate().unwrap();
    }

    #[test]
    fn segment_examples() {
        let s = MetalStack::asap7();
        let m1 = s.layer("M1").unwrap();
        let g = metal_segment_conductance(m1, 36.0, 18.0).unwrap();
        assert_relative_eq!(1.0 / g, 2.4, max_relative = 1e-12);
        let m8 = s.layer("M8").unwrap();
        let g = metal_segment_conductance(m8, 80.0, 40.0).unwrap();
        assert_relative_eq!(1.0 / g, 0.72, max_relative = 1e-12);
        let g2 = metal_segment_conductance(m1, 36.0, 36.0).unwrap();
        assert_relative_eq!(g2, 2.0 * metal_segment_conductance(m1, 36.0, 18.0).unwrap());
        assert!(metal_segment_conductance(m1, 36.0, 10.0).is_err());
        assert!(metal_segment_conductance(m1, 0.0, 18.0).is_err());
    }

    #[test]
    fn pitches() {
        let s = MetalStack::asap7();
        let p = |i| min_cell_pitch(&LineConfiguration::builtin(i).unwrap(), &s).unwrap();
        assert_eq!(p(1), (36.0, 36.0));
        assert_eq!(p(2), (48.0, 80.0));
        assert_eq!(p(3), (36.0, 80.0));
    }

    #[test]
    fn builtins_validate() {
        let s = MetalStack::asap7();
        for i in 1..=3 {
            LineConfiguration::builtin(i).unwrap().validate(&s).unwrap();
        }
        assert!(LineConfiguration::builtin(4).is_err());
        assert_eq!(LineConfiguration::by_name("config2").unwrap().name, "config2");
    }

    #[test]
    fn overlap_and_asymmetry_rejected() {
        let s = MetalStack::asap7();
        let mut c = LineConfiguration::builtin(1).unwrap();
        c.bl_layers.push("M3".into());
        assert!(matches!(c.validate(&s), Err(InterconnectError::OverlappingAllocation(_))));
        let mut c = LineConfiguration::builtin(1).unwrap();
        c.wlt_layers = vec!["M8".into()];
        assert!(matches!(c.validate(&s), Err(InterconnectError::AsymmetricWordLines { .. })));
    }

    #[test]
    fn config1_min_cell() {
        let s = MetalStack::asap7();
        let c = LineConfiguration::builtin(1).unwrap();
        let g = SubarrayGeometry { n_row: 4, n_column: 4, w_cell: 36.0, l_cell: 36.0, r_driver: 0.0 };
        let sc = line_config_conductances(&c, &g, &s, &WireModel::default()).unwrap();
        assert_relative_eq!(sc.g_y, 1.0 / 2.4, max_relative = 1e-12);
        assert_relative_eq!(sc.g_x, 1.0 / 2.4, max_relative = 1e-12);
    }

    #[test]
    fn config2_adds_layers() {
        let s = MetalStack::asap7();
        let g = SubarrayGeometry { n_row: 4, n_column: 4, w_cell: 80.0, l_cell: 80.0, r_driver: 0.0 };
        let w = WireModel::default();
        let c1 = line_config_conductances(&LineConfiguration::builtin(1).unwrap(), &g, &s, &w).unwrap();
        let c2 = line_config_conductances(&LineConfiguration::builtin(2).unwrap(), &g, &s, &w).unwrap();
        let c3 = line_config_conductances(&LineConfiguration::builtin(3).unwrap(), &g, &s, &w).unwrap();
        // usable width is 80 − 40 for the multi-layer lines
        let width = 40.0;
        let expect: f64 = ["M3", "M6", "M8"]
            .iter()
            .map(|n| metal_segment_conductance(s.layer(n).unwrap(), 80.0, width).unwrap())
            .sum();
        assert_relative_eq!(c2.g_y, expect, max_relative = 1e-12);
        assert!(c2.g_y > c1.g_y);
        assert!(c3.g_y >= c2.g_y);
    }

    #[test]
    fn via_aware_lowers_multi_layer_lines() {
        let s = MetalStack::asap7();
        let c = LineConfiguration::builtin(3).unwrap();
        let g = SubarrayGeometry { n_row: 4, n_column: 4, w_cell: 36.0, l_cell: 320.0, r_driver: 0.0 };
        let plain = line_config_conductances(&c, &g, &s, &WireModel::default()).unwrap();
        let via = WireModel { via_aware: true, ..Default::default() };
        let v = line_config_conductances(&c, &g, &s, &via).unwrap();
        assert!(v.g_y < plain.g_y);
        assert_relative_eq!(v.g_x, plain.g_x); // single-layer bit line
        assert_relative_eq!(s.via_stack_resistance("M1", "M4").unwrap(), 51.0);
    }

    #[test]
    fn geometry_checks() {
        let s = MetalStack::asap7();
        let c = LineConfiguration::builtin(3).unwrap();
        let mut g = SubarrayGeometry { n_row: 4, n_column: 4, w_cell: 36.0, l_cell: 60.0, r_driver: 0.0 };
        assert!(g.validate(&c, &s).is_err());
        g.l_cell = 80.0;
        g.validate(&c, &s).unwrap();
        g.n_row = 0;
        assert!(g.validate(&c, &s).is_err());
    }
}
