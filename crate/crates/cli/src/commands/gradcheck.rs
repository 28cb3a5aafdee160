use crate::config;
use crate::manifest::Run;
use crate::{Globals, Outcome};
use anyhow::Result;
use btl_core::gradcheck::{run_gradcheck, Fault, GradcheckConfig};
use std::path::PathBuf;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Random instances per component.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated embedding dimensions for the closed-form checks.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    closed_form_tol: Option<f64>,
    #[arg(long)]
    encoder_tol: Option<f64>,
    #[arg(long, default_value = "btl-out/gradcheck")]
    out: PathBuf,
    /// Harness self-test: corrupt a gradient on purpose.
    #[arg(long, hide = true, value_parser = parse_fault)]
    inject_fault: Option<Fault>,
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    match s {
        "sign-flip" => Ok(Fault::FlipNllSign),
        _ => Err(format!("unknown fault {s:?}")),
    }
}

pub fn run(g: &Globals, a: Args) -> Result<Outcome> {
    let path = g.config.as_deref();
    let mut cfg: GradcheckConfig = config::load(path, "gradcheck")?;
    cfg.seed = config::resolve_seed(g.seed, config::file_seed(path, "/seed")?)?;
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.dims {
        cfg.dims = v;
    }
    if let Some(v) = a.closed_form_tol {
        cfg.closed_form_tol = v;
    }
    if let Some(v) = a.encoder_tol {
        cfg.encoder_tol = v;
    }
    let mut run = Run::start("gradcheck", &a.out)?;
    let report = run_gradcheck(&cfg, a.inject_fault)?;
    println!("{:<20} {:>6} {:>12} {:>10}  status", "component", "cases", "max_rel_err", "tolerance");
    for c in &report.components {
        let status = if c.passed { "ok" } else { "FAIL" };
        println!("{:<20} {:>6} {:>12.3e} {:>10.0e}  {status}", c.name, c.cases, c.max_rel_err, c.tolerance);
        if let Some(w) = &c.worst {
            eprintln!("{}: worst case #{} (max rel err {:.3e})", c.name, w.case, w.max_rel_err);
            eprintln!("  point    {:?}", w.point);
            eprintln!("  analytic {:?}", w.analytic);
            eprintln!("  numeric  {:?}", w.numeric);
        }
    }
    run.write_json("gradcheck.json", &report)?;
    run.finish(cfg.seed, g.threads, &cfg)?;
    Ok(if report.passed { Outcome::Success } else { Outcome::Failed })
}
