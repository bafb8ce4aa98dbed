//! Plain SVG overlays: obstacles, safe zones, the executed path (one
//! polyline per step) and each certified contingency.

use std::fmt::Write as _;
use std::path::Path;

use cmppi::pipeline::RunTrace;
use cmppi::sim::{rollout, Cell, Environment, State};

use crate::BenchError;

const SCALE: f64 = 60.0;

fn px(env: &Environment, p: [f64; 2]) -> (f64, f64) {
    let [x0, _, _, y1] = env.grid.bounds();
    ((p[0] - x0) * SCALE, (y1 - p[1]) * SCALE)
}

fn polyline(out: &mut String, env: &Environment, pts: &[State], class: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|s| {
            let (x, y) = px(env, s.position());
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(out, r#"<polyline class="{class}" points="{}"/>"#, coords.join(" "));
}

pub fn render_svg(trace: &RunTrace, env: &Environment) -> String {
    let [x0, y0, x1, y1] = env.grid.bounds();
    let (w, h) = ((x1 - x0) * SCALE, (y1 - y0) * SCALE);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#);
    out.push_str(
        "<style>.obs{fill:#333}.zone{fill:#7c7;fill-opacity:0.5}.path{fill:none;stroke:#1f5fbf;stroke-width:3}\
         .cont{fill:none;stroke:#e07b00;stroke-width:1;stroke-opacity:0.6}.goal{fill:#c22}</style>\n",
    );
    let _ = writeln!(out, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);

    // merge occupied runs per row
    let g = &env.grid;
    let res = g.resolution() * SCALE;
    for iy in 0..g.height() {
        let mut ix = 0;
        while ix < g.width() {
            if g.get(ix, iy) != Cell::Occupied {
                ix += 1;
                continue;
            }
            let start = ix;
            while ix < g.width() && g.get(ix, iy) == Cell::Occupied {
                ix += 1;
            }
            let c = g.cell_center(start, iy);
            let (x, y) = px(env, [c[0] - g.resolution() / 2.0, c[1] + g.resolution() / 2.0]);
            let _ = writeln!(
                out,
                r#"<rect class="obs" x="{x:.2}" y="{y:.2}" width="{:.2}" height="{res:.2}"/>"#,
                (ix - start) as f64 * res
            );
        }
    }
    for z in &env.safe_zones {
        let (x, y) = px(env, z.center);
        let _ = writeln!(out, r#"<circle class="zone" cx="{x:.2}" cy="{y:.2}" r="{:.2}"/>"#, z.radius * SCALE);
    }
    let (gx, gy) = px(env, env.goal);
    let _ = writeln!(out, r#"<circle class="goal" cx="{gx:.2}" cy="{gy:.2}" r="5"/>"#);

    let states = trace.states();
    for w in states.windows(2) {
        polyline(&mut out, env, w, "path");
    }
    for (x, cert) in trace.executed() {
        let Some(c) = cert.filter(|c| c.is_certified()) else { continue };
        let xs = rollout(&x, &c.controls, env.dt);
        let end = c.reached_at.unwrap_or(xs.len() - 1);
        polyline(&mut out, env, &xs[..=end.min(xs.len() - 1)], "cont");
    }
    out.push_str("</svg>\n");
    out
}

pub fn emit_svg(trace: &RunTrace, env: &Environment, path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, render_svg(trace, env))?;
    Ok(())
}
