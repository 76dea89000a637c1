//! Minimal SVG rendering of 2D trajectory overlays. Trajectories in higher
//! dimensions are projected onto their first two coordinates.

use crate::error::{Error, Result};
use crate::manifold::PoseTrajectory;

/// One curve of an overlay.
pub struct PlotSeries<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub traj: &'a PoseTrajectory,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;

/// Renders an overlay of trajectories as a standalone SVG document. Every
/// curve gets a `+` marker at its start and a `*` marker at its end, plus a
/// legend entry.
pub fn svg_overlay(series: &[PlotSeries<'_>]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("svg_overlay needs >= 1 series".into()));
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for s in series {
        if s.traj.is_empty() || s.traj.dim() < 2 {
            return Err(Error::InvalidArgument(
                "svg_overlay needs non-empty trajectories with >= 2 dimensions".into(),
            ));
        }
        for pose in &s.traj.poses {
            for d in 0..2 {
                min[d] = min[d].min(pose.position[d]);
                max[d] = max[d].max(pose.position[d]);
            }
        }
    }
    let span = [(max[0] - min[0]).max(1e-9), (max[1] - min[1]).max(1e-9)];
    let scale = ((WIDTH - 2.0 * MARGIN) / span[0]).min((HEIGHT - 2.0 * MARGIN) / span[1]);
    let map = |x: f64, y: f64| {
        (
            MARGIN + (x - min[0]) * scale,
            // SVG y grows downward.
            HEIGHT - MARGIN - (y - min[1]) * scale,
        )
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    for (i, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .traj
            .poses
            .iter()
            .map(|p| {
                let (x, y) = map(p.position[0], p.position[1]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            points.join(" ")
        ));
        let (sx, sy) = map(s.traj.start().position[0], s.traj.start().position[1]);
        let (ex, ey) = map(s.traj.end().position[0], s.traj.end().position[1]);
        // Start marker: +
        svg.push_str(&format!(
            "<path d=\"M {} {sy} H {} M {sx} {} V {}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            sx - 6.0,
            sx + 6.0,
            sy - 6.0,
            sy + 6.0,
            s.color
        ));
        // End marker: * (three crossing strokes).
        for angle_deg in [0.0_f64, 60.0, 120.0] {
            let a = angle_deg.to_radians();
            let (dx, dy) = (6.0 * a.cos(), 6.0 * a.sin());
            svg.push_str(&format!(
                "<path d=\"M {:.2} {:.2} L {:.2} {:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                ex - dx,
                ey - dy,
                ex + dx,
                ey + dy,
                s.color
            ));
        }
        let ly = 20.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{ly}\" font-size=\"13\" fill=\"{}\">{}</text>\n",
            WIDTH - 180.0,
            s.color,
            xml_escape(s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::Pose;
    use nalgebra::DVector;

    fn line(points: Vec<[f64; 2]>) -> PoseTrajectory {
        let n = points.len();
        PoseTrajectory::new(
            (0..n).map(|i| i as f64).collect(),
            points
                .into_iter()
                .map(|p| Pose::from_position(DVector::from_vec(p.to_vec())))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn overlay_contains_curves_markers_and_legend() {
        let a = line(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]);
        let b = line(vec![[0.0, 1.0], [1.0, 0.0]]);
        let svg = svg_overlay(&[
            PlotSeries {
                label: "demo",
                color: "steelblue",
                traj: &a,
            },
            PlotSeries {
                label: "generated",
                color: "crimson",
                traj: &b,
            },
        ])
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        // One + marker and three * strokes per curve.
        assert_eq!(svg.matches("<path").count(), 8);
        assert!(svg.contains(">demo</text>"));
        assert!(svg.contains(">generated</text>"));
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn output_is_deterministic() {
        let a = line(vec![[0.3, -0.7], [0.9, 0.2]]);
        let mk = || {
            svg_overlay(&[PlotSeries {
                label: "x",
                color: "black",
                traj: &a,
            }])
            .unwrap()
        };
        assert_eq!(mk(), mk());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(svg_overlay(&[]).is_err());
    }

    #[test]
    fn labels_are_escaped() {
        let a = line(vec![[0.0, 0.0], [1.0, 1.0]]);
        let svg = svg_overlay(&[PlotSeries {
            label: "a<b&c",
            color: "black",
            traj: &a,
        }])
        .unwrap();
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
