//! Static SVG figures: samples over target density contours, and velocity
//! quivers. Output bytes depend only on the inputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fav_core::numeric::{Batch, Box2};
use fav_core::target::TiltedTarget;

use crate::commands::POLICY_HEADER;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::manifest::{read_manifest, write_atomic, SAMPLES, VELOCITY};
use crate::samples::read_csv;

const SIZE: f64 = 600.0;
const CONTOUR_RESOLUTION: usize = 160;
/// Contours at `log q* = max − Δ` for each `Δ`.
const CONTOUR_DROPS: [f64; 4] = [0.5, 2.0, 4.0, 8.0];

/// World box to pixel mapping with y pointing up.
#[derive(Clone, Copy)]
struct View {
    bounds: Box2,
}

impl View {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let b = &self.bounds;
        (
            (x - b.x_lo) / (b.x_hi - b.x_lo) * SIZE,
            (b.y_hi - y) / (b.y_hi - b.y_lo) * SIZE,
        )
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"##
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
}

/// Line segments of the `level` set of a grid function by marching squares.
/// `values[i * n + j]` is the value at `(xs[j], ys[i])`.
pub fn marching_squares(values: &[f64], xs: &[f64], ys: &[f64], level: f64) -> Vec<[(f64, f64); 2]> {
    let n = xs.len();
    let mut segs = Vec::new();
    let lerp = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        let t = (level - a.2) / (b.2 - a.2);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    };
    for i in 0..ys.len() - 1 {
        for j in 0..n - 1 {
            let c = [
                (xs[j], ys[i], values[i * n + j]),
                (xs[j + 1], ys[i], values[i * n + j + 1]),
                (xs[j + 1], ys[i + 1], values[(i + 1) * n + j + 1]),
                (xs[j], ys[i + 1], values[(i + 1) * n + j]),
            ];
            let mut crossings = Vec::with_capacity(4);
            for k in 0..4 {
                let (a, b) = (c[k], c[(k + 1) % 4]);
                if (a.2 >= level) != (b.2 >= level) {
                    crossings.push(lerp(a, b));
                }
            }
            match crossings.len() {
                2 => segs.push([crossings[0], crossings[1]]),
                // saddle: pair edges by the cell mean
                4 => {
                    let mean = c.iter().map(|p| p.2).sum::<f64>() / 4.0;
                    if (mean >= level) == (c[0].2 >= level) {
                        segs.push([crossings[0], crossings[3]]);
                        segs.push([crossings[1], crossings[2]]);
                    } else {
                        segs.push([crossings[0], crossings[1]]);
                        segs.push([crossings[2], crossings[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

fn contours(out: &mut String, view: View, target: &TiltedTarget) -> Result<()> {
    let b = view.bounds;
    let n = CONTOUR_RESOLUTION;
    let xs: Vec<f64> = (0..n).map(|j| b.x_lo + (b.x_hi - b.x_lo) * j as f64 / (n - 1) as f64).collect();
    let ys: Vec<f64> = (0..n).map(|i| b.y_lo + (b.y_hi - b.y_lo) * i as f64 / (n - 1) as f64).collect();
    let mut values = Vec::with_capacity(n * n);
    for &y in &ys {
        for &x in &xs {
            values.push(target.log_density(&[x, y], false)?);
        }
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (k, drop) in CONTOUR_DROPS.iter().enumerate() {
        let mut d = String::new();
        for [p, q] in marching_squares(&values, &xs, &ys, max - drop) {
            let (a, bb) = (view.px(p.0, p.1), view.px(q.0, q.1));
            let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", a.0, a.1, bb.0, bb.1);
        }
        let opacity = 0.9 - 0.15 * k as f64;
        let _ = writeln!(
            out,
            r##"<path d="{d}" fill="none" stroke="#1f5fa8" stroke-width="1" stroke-opacity="{opacity:.2}"/>"##
        );
    }
    Ok(())
}

fn scatter(out: &mut String, view: View, points: &Batch) {
    let _ = writeln!(out, r##"<g fill="#d9480f" fill-opacity="0.35">"##);
    for p in points.iter_rows() {
        let (x, y) = view.px(p[0], p[1]);
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="1.5"/>"##);
    }
    let _ = writeln!(out, "</g>");
}

/// Scatter of `samples` (may be empty) over contours of `target`.
pub fn samples_svg(samples: &Batch, target: Option<&TiltedTarget>, bounds: Box2) -> Result<String> {
    let view = View { bounds };
    let mut out = String::new();
    header(&mut out);
    if let Some(t) = target {
        contours(&mut out, view, t)?;
    }
    scatter(&mut out, view, samples);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Arrows for the three velocity terms and their sum. Columns follow the
/// velocity dump: `x, y, prior_x, prior_y, reward_x, reward_y, rep_x, rep_y`.
pub fn velocity_svg(rows: &Batch, target: &TiltedTarget, bounds: Box2) -> Result<String> {
    let view = View { bounds };
    let mut out = String::new();
    header(&mut out);
    contours(&mut out, view, target)?;
    let total = |r: &[f64]| [r[2] + r[4] + r[6], r[3] + r[5] + r[7]];
    let longest = rows
        .iter_rows()
        .flat_map(|r| [(r[2], r[3]), (r[4], r[5]), (r[6], r[7]), (total(r)[0], total(r)[1])])
        .map(|(a, b)| a.hypot(b))
        .fold(0.0, f64::max);
    // the longest arrow spans 0.6 world units
    let k = if longest > 0.0 { 0.6 / longest } else { 0.0 };
    let layers: [(&str, &dyn Fn(&[f64]) -> [f64; 2]); 4] = [
        ("#2b8a3e", &|r| [r[2], r[3]]),
        ("#c92a2a", &|r| [r[4], r[5]]),
        ("#5f3dc4", &|r| [r[6], r[7]]),
        ("#212529", &total),
    ];
    for (color, f) in layers {
        let mut d = String::new();
        for r in rows.iter_rows() {
            let v = f(r);
            let (a, b) = (view.px(r[0], r[1]), view.px(r[0] + k * v[0], r[1] + k * v[1]));
            let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", a.0, a.1, b.0, b.1);
        }
        let _ = writeln!(out, r##"<path d="{d}" fill="none" stroke="{color}" stroke-width="1"/>"##);
    }
    let _ = writeln!(out, r##"<g font-family="sans-serif" font-size="12">"##);
    for (i, (name, color)) in [("prior", "#2b8a3e"), ("reward", "#c92a2a"), ("repulsive", "#5f3dc4"), ("total", "#212529")]
        .into_iter()
        .enumerate()
    {
        let y = 16.0 + 16.0 * i as f64;
        let _ = writeln!(out, r##"<text x="10" y="{y}" fill="{color}">{name}</text>"##);
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    Ok(out)
}

/// Renders `samples.svg` (and `velocity.svg` when a velocity dump exists) in
/// `run_dir`. Without a manifest the default target is drawn.
pub fn plot(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let config = match read_manifest(run_dir) {
        Ok(m) => m.config,
        Err(CliError::Io { .. }) => ExperimentConfig::default(),
        Err(e) => return Err(e),
    };
    let samples_path = run_dir.join(SAMPLES);
    let (head, batch) = read_csv(&samples_path)?;
    let mut written = Vec::new();
    let out_path = run_dir.join("samples.svg");
    let svg = if head == POLICY_HEADER {
        samples_svg(&batch.columns(&[2, 3]), None, Box2::square(1.1))?
    } else if head.len() == 2 {
        let target = config.target.build()?;
        samples_svg(&batch, Some(&target), Box2::square(6.0))?
    } else {
        return Err(CliError::parse(&samples_path, "expected columns x,y or s1,s2,a1,a2"));
    };
    write_atomic(&out_path, svg.as_bytes())?;
    written.push(out_path);

    let vpath = run_dir.join(VELOCITY);
    if vpath.exists() {
        let (vh, rows) = read_csv(&vpath)?;
        if vh.len() != 8 {
            return Err(CliError::parse(&vpath, "expected 8 columns"));
        }
        let target = config.target.build()?;
        let out_path = run_dir.join("velocity.svg");
        write_atomic(&out_path, velocity_svg(&rows, &target, Box2::square(6.0))?.as_bytes())?;
        written.push(out_path);
    }
    Ok(written)
}
