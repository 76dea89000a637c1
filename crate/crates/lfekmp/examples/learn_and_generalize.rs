//! Learns the G-letter skill from synthetic demonstrations, generalizes it
//! to a perturbed start/end frame pair, and writes an SVG overlay.

use lfekmp::config::RunConfig;
use lfekmp::data::{gshape_demos, perturb_task, with_endpoint_frames};
use lfekmp::lfekmp::{lfekmp_generalize, lfekmp_learn};
use lfekmp::metrics;
use lfekmp::plot::{svg_overlay, PlotSeries};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let demos = with_endpoint_frames(&gshape_demos(6, 200, cfg.seed))?;

    let model = lfekmp_learn(&demos, &cfg)?;
    let new_task = perturb_task(&demos[0].frames, 1, &cfg)?;
    let out = lfekmp_generalize(&model, &new_task, &cfg)?;

    let c_s = metrics::topological_similarity(&out.traj, &demos[0].traj)?;
    let kappa = metrics::smoothness(&out.traj)?;
    let end_err = metrics::endpoint_error(&out.traj, &new_task)?;
    println!("shape similarity c_s   = {c_s:.2}");
    println!("smoothness kappa_s     = {kappa:.2}");
    println!("endpoint error         = {end_err:.2e}");

    let svg = svg_overlay(&[
        PlotSeries {
            label: "demonstration",
            color: "gray",
            traj: &demos[0].traj,
        },
        PlotSeries {
            label: "generalized",
            color: "crimson",
            traj: &out.traj,
        },
    ])?;
    std::fs::create_dir_all("out")?;
    std::fs::write("out/learn_and_generalize.svg", svg)?;
    println!("overlay written to out/learn_and_generalize.svg");
    Ok(())
}
