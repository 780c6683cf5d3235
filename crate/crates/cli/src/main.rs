//! `xbar`: noise-margin analysis, design sweeps, TMVM simulation and MNIST
//! mapping for two-level PCM crossbars.

mod config;
mod units;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use xbar_core::compute::{estimate_energy, execution_window, tmvm_execute_with};
use xbar_core::device::cell_conductance;
use xbar_core::interconnect::LineConfiguration;
use xbar_core::margin::{noise_margin_for, sweep, write_sweep_csv, write_sweep_json, SweepAxis, SweepRecord};
use xbar_core::network::{build_crossbar_network, state_conductances, OracleOptions};
use xbar_core::workload::{
    binarize_set, evaluate_accuracy, fit_cell_length, load_bit_matrix, load_mnist, map_and_run, reference_predict,
    BinaryNnModel,
};
use xbar_core::{CellState, Design, DrivePattern, ExecMode, SubarrayState};

use config::{parse_line_config, parse_mode, Format, RunConfig};
use units::{parse_quantity, Extent, Unit, Vdd};

/// Exit status when the analysed design has a negative noise margin.
const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "xbar", version, about = "Two-level PCM crossbar TMVM analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise margin of one design (exit 2 when negative)
    Margin(MarginArgs),
    /// Noise margin over a grid of one design axis
    Sweep(SweepArgs),
    /// One TMVM step from weight and input CSV files
    Simulate(SimulateArgs),
    /// Single-layer binary network over MNIST test images
    Mnist(MnistArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML run configuration, or a built-in line configuration (cfg1..cfg3)
    #[arg(long)]
    config: Option<String>,
    /// Line configuration: 1, 2, 3 or a TOML layer-allocation file
    #[arg(long)]
    line_config: Option<String>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Cell length, e.g. "144nm" or "4x" (multiple of the minimum)
    #[arg(long)]
    cell_length: Option<String>,
    /// Cell width, e.g. "36nm" or "1x"
    #[arg(long)]
    cell_width: Option<String>,
    /// Driver output resistance, e.g. "1ohm"
    #[arg(long)]
    driver_resistance: Option<String>,
    /// Supply voltage, e.g. "0.6V", or "mid" for the middle of the window
    #[arg(long)]
    vdd: Option<String>,
    /// analytic or oracle
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Zero-resistance wires
    #[arg(long)]
    ideal_wires: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(s) if Path::new(s).is_file() => RunConfig::from_file(Path::new(s))?,
            Some(s) => {
                let lines = parse_line_config(s)
                    .with_context(|| format!("--config '{s}': not a file or built-in configuration"))?;
                RunConfig { lines, ..RunConfig::default() }
            }
            None => RunConfig::default(),
        };
        if let Some(s) = &self.line_config {
            c.lines = parse_line_config(s)?;
        }
        c.rows = self.rows.unwrap_or(c.rows);
        c.cols = self.cols.unwrap_or(c.cols);
        if let Some(s) = &self.cell_length {
            c.cell_length = Extent::parse(s).context("--cell-length")?;
        }
        if let Some(s) = &self.cell_width {
            c.cell_width = Extent::parse(s).context("--cell-width")?;
        }
        if let Some(s) = &self.driver_resistance {
            c.driver_resistance = parse_quantity(s, Unit::Resistance).context("--driver-resistance")?;
        }
        if let Some(s) = &self.vdd {
            c.vdd = Vdd::parse(s).context("--vdd")?;
        }
        if let Some(s) = &self.mode {
            c.mode = parse_mode(s)?;
        }
        c.ideal_wires |= self.ideal_wires;
        if self.format.is_some() {
            c.format = self.format;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        Ok(c)
    }
}

#[derive(Args)]
struct MarginArgs {
    #[command(flatten)]
    common: Common,
    /// Driven inputs assumed for the first-row window
    #[arg(long, default_value_t = 1)]
    inputs: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// n_row, n_column, l_cell or w_cell (cell axes in multiples of the minimum)
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated grid values
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Repeat the grid for all three built-in line configurations
    #[arg(long)]
    all_configs: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// 0/1 CSV, one row per subarray row
    #[arg(long)]
    weights: PathBuf,
    /// 0/1 CSV with a single row of column inputs
    #[arg(long)]
    inputs: PathBuf,
    /// Output column (default: last)
    #[arg(long)]
    output_col: Option<usize>,
    /// Pulse duration, e.g. "80ns" (default: t_SET)
    #[arg(long)]
    duration: Option<String>,
    /// Write the network netlist of the step to this file
    #[arg(long)]
    dump_netlist: Option<PathBuf>,
}

#[derive(Args)]
struct MnistArgs {
    #[command(flatten)]
    common: Common,
    /// IDX directory (default: $XBAR_DATA_DIR, else data/mnist)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Model directory with layer0.csv and thresholds.csv (default: ../model
    /// next to the data directory)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Number of test images (default: all)
    #[arg(long)]
    images: Option<usize>,
    /// Binarization threshold on the pooled 0..255 intensity
    #[arg(long, default_value_t = 128)]
    pixel_threshold: u8,
    /// Lengthen cells (steps of 0.1x) until the layer threshold has a window
    #[arg(long)]
    fit_length: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Margin(a) => cmd_margin(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Mnist(a) => cmd_mnist(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn describe(d: &Design) -> String {
    let g = &d.geometry;
    format!(
        "{} {}x{}, w_cell {:.1} nm, l_cell {:.1} nm, R_D {} Ω",
        d.lines.name, g.n_row, g.n_column, g.w_cell, g.l_cell, g.r_driver
    )
}

fn cmd_margin(a: MarginArgs) -> Result<u8> {
    let cfg = a.common.resolve()?;
    let d = cfg.design()?;
    let rep = noise_margin_for(&d, a.inputs)?;
    let mut w = sink(&cfg.out)?;
    match cfg.format.unwrap_or(Format::Text) {
        Format::Text => {
            let win = |x: &xbar_core::VoltageWindow| {
                if x.empty {
                    format!("empty ([{:.4}, {:.4}] V)", x.v_lo, x.v_hi)
                } else {
                    format!("[{:.4}, {:.4}] V", x.v_lo, x.v_hi)
                }
            };
            writeln!(w, "{}", describe(&d))?;
            writeln!(w, "first-row window  {}", win(&rep.window_first_row))?;
            writeln!(w, "last-row window   {}", win(&rep.window_last_row))?;
            writeln!(w, "combined window   {}", win(&rep.combined))?;
            writeln!(w, "alpha_th {:.6}, R_th {:.3} Ω", rep.alpha_th, rep.r_th)?;
            writeln!(w, "V_mid {:.4} V", rep.v_mid)?;
            writeln!(w, "NM {:.2} % ({:?})", rep.nm * 100.0, rep.region())?;
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                design: &'a Design,
                report: &'a xbar_core::NoiseMarginReport,
                feasible: bool,
            }
            serde_json::to_writer_pretty(&mut w, &Out { design: &d, report: &rep, feasible: rep.feasible() })?;
            writeln!(w)?;
        }
        Format::Csv => {
            let rec = SweepRecord {
                config: d.lines.name.clone(),
                axis: SweepAxis::NRow,
                value: d.geometry.n_row as f64,
                n_row: d.geometry.n_row,
                n_column: d.geometry.n_column,
                w_cell: d.geometry.w_cell,
                l_cell: d.geometry.l_cell,
                report: Some(rep),
                warning: None,
            };
            write_sweep_csv(&[rec], &mut w)?;
        }
    }
    w.flush()?;
    Ok(if rep.feasible() { 0 } else { EXIT_INFEASIBLE })
}

fn cmd_sweep(a: SweepArgs) -> Result<u8> {
    let cfg = a.common.resolve()?;
    let (axis, values, all) = match (&a.axis, &cfg.sweep) {
        (Some(s), _) => (
            SweepAxis::parse(s).with_context(|| format!("unknown axis '{s}' (n_row, n_column, l_cell, w_cell)"))?,
            a.values.clone(),
            a.all_configs,
        ),
        (None, Some((axis, v, all))) => {
            (*axis, if a.values.is_empty() { v.clone() } else { a.values.clone() }, *all || a.all_configs)
        }
        (None, None) => bail!("no sweep axis: pass --axis or a [sweep] section in --config"),
    };
    let configs: Vec<LineConfiguration> = if all {
        (1..=3).map(LineConfiguration::builtin).collect::<Result<_, _>>()?
    } else {
        vec![cfg.lines.clone()]
    };
    let mut records = Vec::new();
    for lines in configs {
        let base = cfg.design_with(lines, cfg.rows, cfg.cols)?;
        records.extend(sweep(axis, &values, &base)?);
    }
    for r in &records {
        if let Some(msg) = &r.warning {
            eprintln!("warning: {} {msg}", r.config);
        }
    }
    let mut w = sink(&cfg.out)?;
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => {
            write_sweep_json(&records, &mut w)?;
            writeln!(w)?;
        }
        Format::Csv => write_sweep_csv(&records, &mut w)?,
        Format::Text => {
            for r in &records {
                let nm = r.report.map(|x| format!("{:.2} %", x.nm * 100.0)).unwrap_or_else(|| "-".into());
                writeln!(w, "{} {}={}: NM {nm}", r.config, axis.name(), r.value)?;
            }
        }
    }
    w.flush()?;
    Ok(0)
}

fn single_row(path: &Path) -> Result<Vec<bool>> {
    let m = load_bit_matrix(path)?;
    match m.len() {
        1 => Ok(m.into_iter().next().unwrap_or_default()),
        _ if m.iter().all(|r| r.len() == 1) => Ok(m.into_iter().map(|r| r[0]).collect()),
        n => bail!("{}: expected a single row of inputs, found {n} rows", path.display()),
    }
}

#[derive(Serialize)]
struct SimulateReport {
    design: String,
    v_dd: f64,
    duration: f64,
    mode: ExecMode,
    output_column: usize,
    bits: Vec<Option<bool>>,
    row_currents: Vec<f64>,
    energy: f64,
    window_warning: Option<String>,
    disturb: xbar_core::compute::DisturbReport,
    ots_divergence: usize,
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    let cfg = a.common.resolve()?;
    let weights = load_bit_matrix(&a.weights)?;
    let inputs = single_row(&a.inputs)?;
    let (nr, nc) = (weights.len(), weights[0].len());
    if inputs.len() != nc {
        bail!("{} inputs for {nc} weight columns", inputs.len());
    }
    for (flag, given, actual) in [("--rows", a.common.rows, nr), ("--cols", a.common.cols, nc)] {
        if given.is_some_and(|g| g != actual) {
            bail!("{flag} {} does not match the weight matrix ({actual})", given.unwrap_or(0));
        }
    }
    let d = cfg.design_with(cfg.lines.clone(), nr, nc)?;
    let out_col = a.output_col.unwrap_or(nc - 1);
    if out_col >= nc {
        bail!("output column {out_col} out of range (0..{nc})");
    }
    let duration = match &a.duration {
        Some(s) => parse_quantity(s, Unit::Time).context("--duration")?,
        None => d.cell.t_set,
    };
    let n_driven = inputs.iter().filter(|b| **b).count();
    let v = match cfg.vdd {
        Vdd::Fixed(v) => v,
        Vdd::Mid if n_driven == 0 => bail!("--vdd mid needs at least one driven input"),
        Vdd::Mid => {
            let w = execution_window(&d, n_driven)?;
            if w.empty {
                eprintln!("warning: execution window is empty; using its midpoint {:.4} V", w.mid());
            }
            w.mid()
        }
    };
    let flat: Vec<bool> = weights.into_iter().flatten().collect();
    let mut state = SubarrayState::with_weights(nr, nc, &flat).context("weight matrix shape")?;
    let drive = DrivePattern { v_dd: v, ..DrivePattern::binary(&inputs, out_col, nr, v, duration) };

    if let Some(path) = &a.dump_netlist {
        if n_driven == 0 {
            bail!("--dump-netlist: no driven input, nothing to build");
        }
        let top = state_conductances(&d, &state.top, None);
        let mut preset = state.bottom.clone();
        for r in 0..nr {
            preset.set(r, out_col, CellState::Amorphous);
        }
        let g_out = cell_conductance(CellState::Crystalline, &d.cell);
        let bottom = state_conductances(&d, &preset, Some((out_col, g_out)));
        let net = build_crossbar_network(&d, &top, &bottom, &drive, &OracleOptions::default(), None)?;
        let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        net.net.write_netlist(&mut f)?;
        f.flush()?;
    }

    let out = tmvm_execute_with(&d, &mut state, &drive, cfg.mode, &OracleOptions::default())?;
    let rep = SimulateReport {
        design: describe(&d),
        v_dd: v,
        duration,
        mode: cfg.mode,
        output_column: out.output_column,
        bits: out.bits.clone(),
        row_currents: out.trace.row_currents.clone(),
        energy: estimate_energy(&out.trace),
        window_warning: out.window_warning.clone(),
        disturb: out.disturb.clone(),
        ots_divergence: out.ots_divergence,
    };
    if let Some(msg) = &rep.window_warning {
        eprintln!("{}", "!".repeat(72));
        eprintln!("WARNING: {msg}");
        eprintln!("{}", "!".repeat(72));
    }
    let mut w = sink(&cfg.out)?;
    match cfg.format.unwrap_or(Format::Text) {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &rep)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "row,bit,current_a")?;
            for (r, (b, i)) in rep.bits.iter().zip(&rep.row_currents).enumerate() {
                let b = b.map(|b| (b as u8).to_string()).unwrap_or_default();
                writeln!(w, "{r},{b},{i:.9e}")?;
            }
        }
        Format::Text => {
            writeln!(w, "{}", rep.design)?;
            writeln!(w, "mode {:?}, V_DD {:.4} V, pulse {:.1} ns, output column {}", rep.mode, v, duration * 1e9, out_col)?;
            for (r, (b, i)) in rep.bits.iter().zip(&rep.row_currents).enumerate() {
                let b = b.map(|b| if b { "1" } else { "0" }).unwrap_or("-");
                writeln!(w, "row {r:>4}: {b}  I_out {:.3} uA", i * 1e6)?;
            }
            writeln!(w, "energy {:.4} pJ", rep.energy * 1e12)?;
            if rep.disturb.is_empty() {
                writeln!(w, "disturb: none")?;
            } else {
                writeln!(
                    w,
                    "disturb: {} cell(s), {} RESET event(s)",
                    rep.disturb.entries.len(),
                    rep.disturb.reset_events()
                )?;
                for e in &rep.disturb.entries {
                    writeln!(w, "  {:?} ({}, {}): {:.3} uA, {:?}", e.level, e.row, e.col, e.current * 1e6, e.event)?;
                }
            }
            if rep.ots_divergence > 0 {
                writeln!(w, "selector divergence: {} cell(s)", rep.ots_divergence)?;
            }
        }
    }
    w.flush()?;
    Ok(0)
}

#[derive(Serialize)]
struct MnistReport {
    design: String,
    cell_length_factor: Option<f64>,
    n_images: usize,
    images_per_step: usize,
    steps: usize,
    v_dd: f64,
    energy: f64,
    energy_per_image: f64,
    accuracy: f64,
    reference_accuracy: f64,
    reference_agreement: f64,
}

fn cmd_mnist(a: MnistArgs) -> Result<u8> {
    let cfg = a.common.resolve()?;
    let data_dir = a
        .data_dir
        .clone()
        .or_else(|| std::env::var_os("XBAR_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let model_dir = a
        .model
        .clone()
        .unwrap_or_else(|| data_dir.parent().unwrap_or(Path::new(".")).join("model"));
    let set = load_mnist(&data_dir).with_context(|| format!("loading MNIST from {}", data_dir.display()))?;
    let model = BinaryNnModel::load(&model_dir).with_context(|| format!("loading model from {}", model_dir.display()))?;
    let mut images = binarize_set(&set, a.pixel_threshold);
    if let Some(n) = a.images {
        images.truncate(n);
    }
    if images.is_empty() {
        bail!("no images to run");
    }
    let labels: Vec<u8> = images.iter().map(|im| im.label).collect();

    let mut d = cfg.design()?;
    let mut factor = None;
    if a.fit_length {
        match fit_cell_length(&model, &d, 0.1, 12.0, 0.05)? {
            Some((fit, f)) => {
                d = fit;
                factor = Some(f);
            }
            None => bail!("no cell length up to 12x opens a threshold window"),
        }
    }
    let v = match cfg.vdd {
        Vdd::Fixed(v) => Some(v),
        Vdd::Mid => None,
    };
    let run = map_and_run(&model, &images, &d, v, cfg.mode)?;
    let reference: Vec<usize> = images.iter().map(|im| reference_predict(&model, im).1).collect();
    let agree = run.predictions.iter().zip(&reference).filter(|(a, b)| a == b).count();
    let rep = MnistReport {
        design: describe(&d),
        cell_length_factor: factor,
        n_images: run.n_images,
        images_per_step: run.images_per_step,
        steps: run.steps,
        v_dd: run.v_dd,
        energy: run.energy,
        energy_per_image: run.energy_per_image,
        accuracy: evaluate_accuracy(&run.predictions, &labels)?,
        reference_accuracy: evaluate_accuracy(&reference, &labels)?,
        reference_agreement: agree as f64 / images.len() as f64,
    };
    let mut w = sink(&cfg.out)?;
    match cfg.format.unwrap_or(Format::Text) {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &rep)?;
            writeln!(w)?;
        }
        Format::Csv => {
            writeln!(w, "n_row,n_column,l_cell_nm,n_images,images_per_step,steps,v_dd,energy_per_image_j,accuracy,reference_accuracy")?;
            writeln!(
                w,
                "{},{},{},{},{},{},{:.6},{:.6e},{:.6},{:.6}",
                d.geometry.n_row,
                d.geometry.n_column,
                d.geometry.l_cell,
                rep.n_images,
                rep.images_per_step,
                rep.steps,
                rep.v_dd,
                rep.energy_per_image,
                rep.accuracy,
                rep.reference_accuracy
            )?;
        }
        Format::Text => {
            writeln!(w, "{}", rep.design)?;
            if let Some(f) = factor {
                writeln!(w, "cell length fitted at {f:.1}x the default")?;
            }
            writeln!(w, "V_DD {:.4} V, {} images, {} per step, {} steps", rep.v_dd, rep.n_images, rep.images_per_step, rep.steps)?;
            writeln!(w, "energy {:.3} nJ total, {:.3} pJ/image", rep.energy * 1e9, rep.energy_per_image * 1e12)?;
            writeln!(
                w,
                "accuracy {:.2} % (reference {:.2} %, agreement {:.2} %)",
                rep.accuracy * 100.0,
                rep.reference_accuracy * 100.0,
                rep.reference_agreement * 100.0
            )?;
        }
    }
    w.flush()?;
    Ok(0)
}
