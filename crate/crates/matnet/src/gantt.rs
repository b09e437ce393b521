//! SVG Gantt chart: one lane per machine (stages stacked top to bottom),
//! one labelled strip per processed job.

use std::fmt::Write as _;

use matnet_core::ffsp::{FfspInstance, FfspSchedule};

const UNIT: f64 = 24.0;
const LANE: f64 = 22.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 24.0;

/// Fill colour for a job, spread around the hue circle.
fn colour(job: usize) -> String {
    let hue = (job * 137) % 360;
    format!("hsl({hue},65%,70%)")
}

pub fn render_svg(inst: &FfspInstance, sched: &FfspSchedule) -> String {
    let lanes: usize = inst.machine_counts().iter().sum();
    let span = sched.makespan as f64;
    let width = LEFT + span * UNIT + 16.0;
    let height = TOP + lanes as f64 * LANE + 8.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" data-makespan="{}" font-family="sans-serif" font-size="11">"#,
        sched.makespan
    )
    .unwrap();
    writeln!(s, r#"<text x="{LEFT}" y="14">makespan {}</text>"#, sched.makespan).unwrap();
    let mut lane = 0;
    for k in 0..inst.stages() {
        for m in 0..inst.machines(k) {
            let y = TOP + lane as f64 * LANE;
            writeln!(
                s,
                r##"<g class="lane" data-stage="{k}" data-machine="{m}"><rect x="{LEFT}" y="{y}" width="{}" height="{}" fill="#f4f4f4"/><text x="4" y="{}">S{} M{}</text>"##,
                span * UNIT,
                LANE - 2.0,
                y + 14.0,
                k + 1,
                m + 1
            )
            .unwrap();
            for j in 0..inst.jobs() {
                let a = sched.get(k, j);
                if a.machine != m {
                    continue;
                }
                let p = inst.p(k, m, j);
                let x = LEFT + a.start as f64 * UNIT;
                writeln!(
                    s,
                    r##"<rect class="strip" data-job="{j}" data-start="{}" data-end="{}" x="{x}" y="{y}" width="{}" height="{}" fill="{}" stroke="#333"/><text x="{}" y="{}">{j}</text>"##,
                    a.start,
                    a.start + p,
                    p as f64 * UNIT,
                    LANE - 2.0,
                    colour(j),
                    x + 3.0,
                    y + 14.0
                )
                .unwrap();
            }
            s.push_str("</g>\n");
            lane += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Lane count and the largest strip end found in a rendered chart.
pub fn inspect_svg(svg: &str) -> (usize, u32) {
    let lanes = svg.matches(r#"class="lane""#).count();
    let max_end = svg
        .split(r#"data-end=""#)
        .skip(1)
        .filter_map(|rest| rest.split('"').next()?.parse().ok())
        .max()
        .unwrap_or(0);
    (lanes, max_end)
}
