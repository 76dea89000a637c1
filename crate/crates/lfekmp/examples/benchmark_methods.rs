//! Compares LFE-KMP, TP-GMM and the plain-KMP baseline over 20 seeded task
//! perturbations of the G-letter skill, printing a summary table.

use lfekmp::cli::run_benchmark;
use lfekmp::config::RunConfig;
use lfekmp::data::{gshape_demos, with_endpoint_frames};
use lfekmp::plot::{svg_overlay, PlotSeries};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let demos = with_endpoint_frames(&gshape_demos(6, 200, cfg.seed))?;
    let (report, last_outputs) = run_benchmark(&demos, &cfg, 20)?;

    println!(
        "{:<10} {:>8} {:>10} {:>14}",
        "method", "c_s", "kappa_s", "endpoint err"
    );
    for (name, m) in &report.methods {
        println!(
            "{name:<10} {:>8.2} {:>10.2} {:>14.4}",
            m.c_s_mean, m.kappa_s_mean, m.endpoint_error_mean
        );
    }
    println!(
        "(workspace diameter {:.3}, {} seeds)",
        report.workspace_diameter, report.n_seeds
    );

    let mut series = vec![PlotSeries {
        label: "demonstration",
        color: "gray",
        traj: &demos[0].traj,
    }];
    let colors = ["crimson", "steelblue", "seagreen"];
    for ((name, out), color) in last_outputs.iter().zip(colors) {
        series.push(PlotSeries {
            label: name,
            color,
            traj: &out.traj,
        });
    }
    std::fs::create_dir_all("out")?;
    std::fs::write("out/benchmark_methods.svg", svg_overlay(&series)?)?;
    println!("overlay written to out/benchmark_methods.svg");
    Ok(())
}
