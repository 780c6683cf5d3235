//! Run configuration: a TOML file, overridden by command-line flags.
//!
//! ```toml
//! [device]
//! g_crystalline = "160uS"
//! i_set = "50uA"
//!
//! [lines]
//! config = 3            # or wlt/bl/wlb layer lists
//!
//! [geometry]
//! rows = 64
//! cols = 128
//! cell_length = "4x"    # multiple of the minimum, or e.g. "144nm"
//! driver_resistance = "0ohm"
//!
//! [run]
//! vdd = "mid"
//! mode = "analytic"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use xbar_core::interconnect::LineConfiguration;
use xbar_core::margin::SweepAxis;
use xbar_core::{Design, ExecMode, OtsParams, PcmCellParams};

use crate::units::{parse_quantity, Extent, Unit, Vdd};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub device: DeviceSection,
    #[serde(default)]
    pub ots: OtsSection,
    #[serde(default)]
    pub lines: Option<LinesSection>,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub g_amorphous: Option<String>,
    pub g_crystalline: Option<String>,
    pub i_set: Option<String>,
    pub i_reset: Option<String>,
    pub t_set: Option<String>,
    pub t_reset: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OtsSection {
    pub v_threshold: Option<String>,
    pub g_on: Option<String>,
    pub g_off: Option<String>,
}

/// A built-in id, or an explicit layer allocation.
#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum LinesSection {
    Builtin { config: toml::Value },
    Custom { name: Option<String>, wlt: Vec<String>, bl: Vec<String>, wlb: Vec<String> },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub cell_length: Option<String>,
    pub cell_width: Option<String>,
    pub driver_resistance: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub vdd: Option<String>,
    pub mode: Option<String>,
    pub ideal_wires: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub all_configs: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub format: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Text,
}

impl Format {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "csv" => Format::Csv,
            "json" => Format::Json,
            "text" => Format::Text,
            _ => bail!("unknown output format '{s}' (csv, json, text)"),
        })
    }
}

pub fn parse_mode(s: &str) -> Result<ExecMode> {
    Ok(match s {
        "analytic" => ExecMode::Analytic,
        "oracle" => ExecMode::Oracle,
        _ => bail!("unknown mode '{s}' (analytic, oracle)"),
    })
}

/// Line configuration from "1".."3", "config3", "cfg3", or a TOML file with
/// `wlt`, `bl` and `wlb` layer lists.
pub fn parse_line_config(s: &str) -> Result<LineConfiguration> {
    let id = s.strip_prefix("cfg").unwrap_or(s);
    if let Ok(l) = LineConfiguration::by_name(id) {
        return Ok(l);
    }
    let path = Path::new(s);
    if !path.is_file() {
        bail!("'{s}' is neither a built-in line configuration (1, 2, 3) nor a readable file");
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let sec: LinesSection = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    lines_from(sec, &path.display().to_string())
}

fn lines_from(sec: LinesSection, default_name: &str) -> Result<LineConfiguration> {
    match sec {
        LinesSection::Builtin { config } => {
            let s = match config {
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::String(s) => s,
                other => bail!("lines.config: expected an id, got {other}"),
            };
            parse_line_config(&s)
        }
        LinesSection::Custom { name, wlt, bl, wlb } => Ok(LineConfiguration {
            name: name.unwrap_or_else(|| default_name.to_string()),
            wlt_layers: wlt,
            bl_layers: bl,
            wlb_layers: wlb,
        }),
    }
}

/// Everything a command needs, after merging file and flags.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub lines: LineConfiguration,
    pub cell: PcmCellParams,
    pub ots: OtsParams,
    pub rows: usize,
    pub cols: usize,
    pub cell_length: Extent,
    pub cell_width: Extent,
    /// [Ω]
    pub driver_resistance: f64,
    pub ideal_wires: bool,
    pub vdd: Vdd,
    pub mode: ExecMode,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub sweep: Option<(SweepAxis, Vec<f64>, bool)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lines: LineConfiguration::builtin(3).expect("built-in"),
            cell: PcmCellParams::default(),
            ots: OtsParams::default(),
            rows: 64,
            cols: 128,
            cell_length: Extent::Multiple(xbar_core::design::DEFAULT_LENGTH_FACTOR),
            cell_width: Extent::Multiple(1.0),
            driver_resistance: 0.0,
            ideal_wires: false,
            vdd: Vdd::Mid,
            mode: ExecMode::Analytic,
            format: None,
            out: None,
            sweep: None,
        }
    }
}

fn set(slot: &mut f64, v: &Option<String>, unit: Unit, key: &str) -> Result<()> {
    if let Some(s) = v {
        *slot = parse_quantity(s, unit).with_context(|| key.to_string())?;
    }
    Ok(())
}

impl RunConfig {
    /// Loads a TOML file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let mut c = RunConfig::default();
        c.merge(file).with_context(|| format!("in {}", path.display()))?;
        Ok(c)
    }

    fn merge(&mut self, f: FileConfig) -> Result<()> {
        let d = &f.device;
        set(&mut self.cell.g_amorphous, &d.g_amorphous, Unit::Conductance, "device.g_amorphous")?;
        set(&mut self.cell.g_crystalline, &d.g_crystalline, Unit::Conductance, "device.g_crystalline")?;
        set(&mut self.cell.i_set, &d.i_set, Unit::Current, "device.i_set")?;
        set(&mut self.cell.i_reset, &d.i_reset, Unit::Current, "device.i_reset")?;
        set(&mut self.cell.t_set, &d.t_set, Unit::Time, "device.t_set")?;
        set(&mut self.cell.t_reset, &d.t_reset, Unit::Time, "device.t_reset")?;
        let o = &f.ots;
        set(&mut self.ots.v_threshold, &o.v_threshold, Unit::Voltage, "ots.v_threshold")?;
        set(&mut self.ots.g_on, &o.g_on, Unit::Conductance, "ots.g_on")?;
        set(&mut self.ots.g_off, &o.g_off, Unit::Conductance, "ots.g_off")?;
        if let Some(l) = f.lines {
            self.lines = lines_from(l, "custom")?;
        }
        let g = &f.geometry;
        self.rows = g.rows.unwrap_or(self.rows);
        self.cols = g.cols.unwrap_or(self.cols);
        if let Some(s) = &g.cell_length {
            self.cell_length = Extent::parse(s).context("geometry.cell_length")?;
        }
        if let Some(s) = &g.cell_width {
            self.cell_width = Extent::parse(s).context("geometry.cell_width")?;
        }
        set(&mut self.driver_resistance, &g.driver_resistance, Unit::Resistance, "geometry.driver_resistance")?;
        if let Some(s) = &f.run.vdd {
            self.vdd = Vdd::parse(s).context("run.vdd")?;
        }
        if let Some(s) = &f.run.mode {
            self.mode = parse_mode(s).context("run.mode")?;
        }
        self.ideal_wires = f.run.ideal_wires.unwrap_or(self.ideal_wires);
        if let Some(s) = &f.output.format {
            self.format = Some(Format::parse(s).context("output.format")?);
        }
        if let Some(p) = f.output.path {
            self.out = Some(p);
        }
        if let Some(s) = f.sweep {
            let axis = SweepAxis::parse(&s.axis).with_context(|| format!("sweep.axis: unknown axis '{}'", s.axis))?;
            self.sweep = Some((axis, s.values, s.all_configs));
        }
        Ok(())
    }

    /// The design described by this configuration; validated.
    pub fn design(&self) -> Result<Design> {
        self.design_with(self.lines.clone(), self.rows, self.cols)
    }

    pub fn design_with(&self, lines: LineConfiguration, rows: usize, cols: usize) -> Result<Design> {
        let stack = xbar_core::interconnect::MetalStack::asap7();
        lines.validate(&stack)?;
        let (w_min, l_min) = xbar_core::interconnect::min_cell_pitch(&lines, &stack)?;
        let geometry = xbar_core::SubarrayGeometry {
            n_row: rows,
            n_column: cols,
            w_cell: self.cell_width.resolve(w_min),
            l_cell: self.cell_length.resolve(l_min),
            r_driver: self.driver_resistance,
        };
        let mut d = Design::new(geometry, lines);
        d.cell = self.cell;
        d.ots = self.ots;
        d.wire.ideal = self.ideal_wires;
        d.validate()?;
        Ok(d)
    }
}
