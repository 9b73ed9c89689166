//! Command-line surface: argument parsing and the single-shot tools.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hornlab::actions::{axis, classify, displacement_growth, AxisOptions, IsometryClass, SearchBudget};
use hornlab::geodesic::{distance, geodesic_connect};
use hornlab::metric::{christoffel, curvature, metric_tensor};
use hornlab::paths::{heat_flow, read_path_csv, write_path_csv, DiscretePath, FlowOptions};
use hornlab::{CompletionPoint, SpaceSpec};
use serde_json::{json, Value};

use crate::config::{load_iso, load_point, load_space, usage, ExperimentConfig, UsageError, EXPERIMENTS};
use crate::experiments::{self, Context};
use crate::report::{Report, RunDir, Status};

#[derive(Debug, Parser)]
#[command(name = "hornlab", version, about = "Numerics for the horn metric and its products")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Space description (JSON file or inline JSON).
    #[arg(long, global = true)]
    pub space: Option<String>,
    /// Isometry description; repeat for several.
    #[arg(long, global = true)]
    pub iso: Vec<String>,
    /// Experiment or tool configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory for report.json and the CSV tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the default tolerance of the command.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Metric, Christoffel symbols and factor curvatures at a point.
    Tensor {
        #[arg(long)]
        point: String,
    },
    /// Geodesic between two points, sampled at uniform arclength.
    Geodesic {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    Distance {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Heat flow of a path read from CSV; equivariant when one --iso is given.
    Relax {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        max_iter: usize,
    },
    /// Axis of an isometry by heat flow, with the displacement growth off it.
    Axis {
        /// Seed nodes 0..N−1 as CSV; defaults to the geodesic from the base
        /// point to its image.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        nodes: usize,
        /// Distances from the axis at which to sample the displacement.
        #[arg(long, value_delimiter = ',')]
        growth: Vec<f64>,
    },
    Classify,
    Diverge,
    Proper,
    Masur,
    Expansion,
    /// One of: interior, corners, table1, diverge, proper, masur, expansion.
    Experiment { name: String },
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
        }
    };
    match execute(&cli) {
        Ok(status) => status.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                3
            } else {
                1
            }
        }
    }
}

fn space_or(common: &Common, config: &ExperimentConfig, default: Option<SpaceSpec>) -> Result<Option<SpaceSpec>> {
    match (&common.space, &config.space) {
        (Some(s), _) => Ok(Some(load_space(s)?)),
        (None, Some(s)) => Ok(Some(s.clone())),
        (None, None) => Ok(default),
    }
}

fn need_space(s: Option<SpaceSpec>) -> Result<SpaceSpec> {
    match s {
        Some(s) => Ok(s),
        None => usage("--space is required"),
    }
}

pub fn execute(cli: &Cli) -> Result<Status> {
    let c = &cli.common;
    let config = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = c.seed.or(config.seed).unwrap_or(0);
    let out = c.out.clone().or(config.out.clone());
    let started = Instant::now();
    let dir = RunDir::new(out.as_deref())?;

    let experiment = match &cli.command {
        Command::Experiment { name } => Some(name.as_str()),
        Command::Diverge => Some("diverge"),
        Command::Proper => Some("proper"),
        Command::Masur => Some("masur"),
        Command::Expansion => Some("expansion"),
        _ => None,
    };
    let mut report = if let Some(name) = experiment {
        if !EXPERIMENTS.contains(&name) {
            return usage(format!("unknown experiment {name:?}; expected one of {}", EXPERIMENTS.join(", ")));
        }
        if let Some(n) = &config.name {
            if n != name {
                return usage(format!("config is for {n:?}, not {name:?}"));
            }
        }
        let space = space_or(c, &config, None)?;
        let isos = match &space {
            Some(s) => c.iso.iter().map(|i| load_iso(i, s)).collect::<Result<_>>()?,
            None => {
                let h = SpaceSpec::hyperbolic();
                c.iso.iter().map(|i| load_iso(i, &h)).collect::<Result<_>>()?
            }
        };
        let ctx = Context { space, isos, parameters: config.parameters.clone(), seed, tol: c.tol };
        experiments::run(name, &ctx, &dir)?
    } else {
        if !config.parameters.is_null() {
            return usage("this command takes no parameters");
        }
        let space = need_space(space_or(c, &config, None)?)?;
        tool(&cli.command, c, &space, seed, &dir)?
    };
    let status = report.finish();
    dir.finish(&report, started.elapsed())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(status)
}

fn base_config(command: &str, space: &SpaceSpec, c: &Common, extra: Value) -> Value {
    json!({ "command": command, "space": space, "isometries": c.iso, "tol": c.tol, "args": extra })
}

fn tool(cmd: &Command, c: &Common, space: &SpaceSpec, seed: u64, dir: &RunDir) -> Result<Report> {
    match cmd {
        Command::Tensor { point } => {
            let p = load_point(point, space)?;
            let mut r = Report::new("tensor", &base_config("tensor", space, c, json!({ "point": p })), seed);
            r.datum("metric", metric_tensor(space, &p)?);
            r.datum("christoffel", christoffel(space, &p)?);
            r.datum("curvature", curvature(space, &p)?);
            Ok(r)
        }
        Command::Geodesic { from, to, samples } => {
            let (p, q) = (load_point(from, space)?, load_point(to, space)?);
            let cfg = base_config("geodesic", space, c, json!({ "from": p, "to": q, "samples": samples }));
            let mut r = Report::new("geodesic", &cfg, seed);
            let seg = geodesic_connect(space, &p, &q)?;
            r.datum("length", seg.length);
            r.datum("hit_stratum", seg.hit_stratum);
            let n = (*samples).max(1);
            let nodes = (0..=n).map(|k| seg.point_at(k as f64 / n as f64)).collect();
            let path = DiscretePath::new(space.clone(), nodes)?;
            dir.artifact(&mut r, "geodesic.csv", |buf| Ok(write_path_csv(&path, buf)?))?;
            Ok(r)
        }
        Command::Distance { from, to } => {
            let (p, q) = (load_point(from, space)?, load_point(to, space)?);
            let mut r = Report::new("distance", &base_config("distance", space, c, json!({ "from": p, "to": q })), seed);
            let d = distance(space, &p, &q)?;
            let back = distance(space, &q, &p)?;
            r.datum("distance", d);
            r.close("symmetry", d, back, 1e-9 * d.max(1.0), "d(p, q) = d(q, p)");
            Ok(r)
        }
        Command::Relax { path, max_iter } => relax(c, space, seed, dir, path, *max_iter),
        Command::Axis { path, nodes, growth } => run_axis(c, space, seed, dir, path.as_ref(), *nodes, growth),
        Command::Classify => {
            let iso = one_iso(c, space)?;
            let cfg = base_config("classify", space, c, json!({ "seed": seed }));
            let mut r = Report::new("classify", &cfg, seed);
            let res = classify(space, &iso, &SearchBudget { seed, ..Default::default() })?;
            if res.class == IsometryClass::Inconclusive {
                r.undecided("class", "translation length search did not settle");
            }
            r.datum("class", res.class);
            r.datum("l_estimate", res.l_estimate);
            r.datum("attained", res.attained);
            r.datum("witness", &res.witness);
            r.datum("escaping_sequence", &res.escaping_sequence);
            r.datum("components", &res.components);
            Ok(r)
        }
        _ => unreachable!("experiments are dispatched separately"),
    }
}

fn one_iso(c: &Common, space: &SpaceSpec) -> Result<hornlab::isometry::Isometry<f64>> {
    match c.iso.as_slice() {
        [one] => load_iso(one, space),
        _ => usage("exactly one --iso is required"),
    }
}

fn read_nodes(space: &SpaceSpec, path: &PathBuf) -> Result<Vec<CompletionPoint>> {
    let text = fs::read(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    read_path_csv(space, text.as_slice()).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

fn relax(c: &Common, space: &SpaceSpec, seed: u64, dir: &RunDir, path: &PathBuf, max_iter: usize) -> Result<Report> {
    let mut nodes = read_nodes(space, path)?;
    let seed_path = match c.iso.len() {
        0 => DiscretePath::new(space.clone(), nodes)?,
        1 => {
            nodes.pop();
            DiscretePath::equivariant(space.clone(), nodes, load_iso(&c.iso[0], space)?)?
        }
        _ => return usage("relax takes at most one --iso"),
    };
    let cfg = base_config("relax", space, c, json!({ "nodes": seed_path.nodes, "max_iter": max_iter }));
    let mut r = Report::new("relax", &cfg, seed);
    let opts = FlowOptions { max_iter, tol: c.tol.unwrap_or(1e-10), ..Default::default() };
    let (out, rep) = heat_flow(&seed_path, &opts)?;
    let rises = rep.energy.windows(2).map(|w| w[1] - w[0] - 1e-12 * w[0].max(1.0)).fold(f64::NEG_INFINITY, f64::max);
    r.holds("energy_monotone", rises <= 0.0, "heat flow decreases energy");
    if rep.escaped {
        r.undecided("converged", rep.escape_reason.as_deref().unwrap_or("path escaped toward a stratum"));
    } else if !rep.converged {
        r.undecided("converged", "iteration budget exhausted");
    }
    r.datum("flow", json!({
        "iterations": rep.iterations, "final_length": rep.final_length, "final_energy": rep.final_energy,
        "converged": rep.converged, "escaped": rep.escaped, "escape_reason": rep.escape_reason,
        "last_displacement": rep.last_displacement, "min_xi": rep.min_xi,
    }));
    dir.artifact(&mut r, "relaxed.csv", |buf| Ok(write_path_csv(&out, buf)?))?;
    dir.artifact(&mut r, "energy.csv", |buf| {
        let mut w = crate::report::csv_writer(buf);
        w.write_record(["iteration", "energy"])?;
        for (i, e) in rep.energy.iter().enumerate() {
            w.write_record([i.to_string(), e.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })?;
    Ok(r)
}

fn run_axis(
    c: &Common,
    space: &SpaceSpec,
    seed: u64,
    dir: &RunDir,
    path: Option<&PathBuf>,
    n: usize,
    growth: &[f64],
) -> Result<Report> {
    let iso = one_iso(c, space)?;
    if n < 2 {
        return usage("axis needs at least 2 nodes");
    }
    let nodes = match path {
        Some(p) => {
            let mut v = read_nodes(space, p)?;
            v.pop();
            v
        }
        None => {
            let base = hornlab::actions::default_base(space);
            let seg = geodesic_connect(space, &base, &iso.apply(&base))?;
            (0..n).map(|k| seg.point_at(k as f64 / n as f64)).collect()
        }
    };
    let seed_path = DiscretePath::equivariant(space.clone(), nodes, iso.clone())?;
    let cfg = base_config("axis", space, c, json!({ "nodes": seed_path.nodes, "growth": growth, "seed": seed }));
    let mut r = Report::new("axis", &cfg, seed);
    let tol = c.tol.unwrap_or(1e-4);
    r.tolerance("period_length", tol);
    let budget = SearchBudget { seed, ..Default::default() };
    let tl = hornlab::actions::translation_length(space, &iso, &budget)?;
    let opts = AxisOptions { check_hartman: true, ..Default::default() };
    let ax = match axis(&seed_path, &opts) {
        Ok(a) => a,
        Err(e) => {
            r.undecided("axis", &e.to_string());
            return Ok(r);
        }
    };
    if tl.inconclusive {
        r.undecided("period_length", "translation length search did not settle");
    } else {
        r.close("period_length", tl.l_estimate, ax.period_length, tol, "translation length by direct search");
    }
    if let Some(h) = &ax.hartman {
        r.holds("hartman_monotone", h.monotone, "distance to the limit never increases under the flow");
    }
    r.datum("period_length", ax.period_length);
    r.datum("nodes", ax.path.n());
    dir.artifact(&mut r, "axis.csv", |buf| Ok(write_path_csv(&ax.path, buf)?))?;
    if !growth.is_empty() {
        let g = displacement_growth(&ax, growth)?;
        r.holds("growth_increasing", g.increasing, "displacement is convex along perpendiculars");
        r.holds("growth_convex", g.convex, "displacement is convex along perpendiculars");
        r.datum("growth", &g);
        dir.artifact(&mut r, "growth.csv", |buf| {
            let mut w = crate::report::csv_writer(buf);
            w.write_record(["d", "f"])?;
            for row in &g.rows {
                w.write_record([row.d.to_string(), row.f.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })?;
    }
    Ok(r)
}
