//! Standalone SVG trajectory plots. Output depends only on the inputs.

use std::fmt::Write;

use crate::trajectories::TrajectorySet;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 48.0;

pub struct PlotOptions {
    pub bounds_min: [f64; 2],
    pub bounds_max: [f64; 2],
    pub colors: Vec<String>,
    pub title: String,
    /// Appended to the title when present.
    pub vendi_score: Option<f64>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(set: &TrajectorySet, opts: &PlotOptions) -> String {
    let width = SIZE + 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + SIZE * (x - opts.bounds_min[0]) / (opts.bounds_max[0] - opts.bounds_min[0]);
    let sy = |y: f64| MARGIN + SIZE * (opts.bounds_max[1] - y) / (opts.bounds_max[1] - opts.bounds_min[1]);
    let mut title = opts.title.clone();
    if let Some(vs) = opts.vendi_score {
        let _ = write!(title, " (VS = {vs:.3})");
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{width}" viewBox="0 0 {width} {width}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{width}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        width / 2.0,
        MARGIN / 2.0 + 6.0,
        escape(&title)
    );
    let _ = writeln!(
        svg,
        r#"<rect class="bounds" x="{MARGIN:.1}" y="{MARGIN:.1}" width="{SIZE:.1}" height="{SIZE:.1}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for frac in [0.0, 0.5, 1.0] {
        let x = opts.bounds_min[0] + frac * (opts.bounds_max[0] - opts.bounds_min[0]);
        let y = opts.bounds_min[1] + frac * (opts.bounds_max[1] - opts.bounds_min[1]);
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{x}</text>"#,
            sx(x),
            MARGIN + SIZE + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{y}</text>"#,
            MARGIN - 6.0,
            sy(y) + 4.0
        );
    }
    for (skill, rollouts) in &set.skills {
        let color = &opts.colors[skill % opts.colors.len()];
        for (rollout, traj) in rollouts {
            let points: Vec<String> = traj
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline data-skill="{skill}" data-rollout="{rollout}" points="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-opacity="0.8"/>"#,
                points.join(" "),
                escape(color)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DEFAULT_COLORS;
    use std::collections::BTreeMap;

    fn opts() -> PlotOptions {
        PlotOptions {
            bounds_min: [0.0, 0.0],
            bounds_max: [1.0, 1.0],
            colors: DEFAULT_COLORS.iter().map(|c| c.to_string()).collect(),
            title: "skills".into(),
            vendi_score: None,
        }
    }

    #[test]
    fn empty_set_has_axes_only() {
        let svg = render(&TrajectorySet::default(), &opts());
        assert!(svg.contains(r#"class="bounds""#));
        assert_eq!(svg.matches("<polyline").count(), 0);
    }

    #[test]
    fn counts_colors_and_determinism() {
        let mut set = TrajectorySet::default();
        for skill in 0..8 {
            let rollouts: BTreeMap<usize, Vec<Vec<f64>>> = (0..5)
                .map(|r| (r, vec![vec![0.5, 0.5], vec![0.1 * skill as f64, 0.02 * r as f64]]))
                .collect();
            set.skills.insert(skill, rollouts);
        }
        let mut o = opts();
        o.vendi_score = Some(7.617);
        let svg = render(&set, &o);
        assert_eq!(svg.matches("<polyline").count(), 40);
        let distinct: std::collections::BTreeSet<&str> = svg
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| l.split("stroke=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(distinct.len(), 8);
        assert!(svg.contains("VS = 7.617"));
        assert_eq!(svg, render(&set, &o));
    }
}
