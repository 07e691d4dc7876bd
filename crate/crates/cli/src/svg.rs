//! Minimal SVG output for quick visual checks.

use std::fmt::Write as _;

use neotraj::world::SceneSpec;
use neotraj::EpisodeReport;

use crate::commands::bench::AggregateRow;

const PALETTE: [&str; 4] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759"];

/// Grouped bars: one group per scene, one bar per initializer.
pub fn bar_chart<F: Fn(&AggregateRow) -> f64>(rows: &[AggregateRow], title: &str, value: F) -> String {
    let mut scenes: Vec<&str> = Vec::new();
    let mut inits: Vec<&str> = Vec::new();
    for r in rows {
        if !scenes.contains(&r.scene.as_str()) {
            scenes.push(&r.scene);
        }
        if !inits.contains(&r.init.as_str()) {
            inits.push(&r.init);
        }
    }
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let max = rows.iter().map(&value).fold(0.0f64, f64::max).max(1e-12);
    let group_w = (w - 2.0 * pad) / scenes.len().max(1) as f64;
    let bar_w = group_w * 0.8 / inits.len().max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{pad}" y="20">{title}</text>"#);
    for r in rows {
        let gi = scenes.iter().position(|x| *x == r.scene).unwrap_or(0) as f64;
        let bi = inits.iter().position(|x| *x == r.init).unwrap_or(0);
        let bh = (h - 2.0 * pad) * value(r) / max;
        let x = pad + gi * group_w + group_w * 0.1 + bi as f64 * bar_w;
        let y = h - pad - bh;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{bh:.2}" fill="{}"><title>{} {}: {}</title></rect>"#,
            PALETTE[bi % PALETTE.len()],
            r.scene,
            r.init,
            value(r)
        );
    }
    for (gi, sc) in scenes.iter().enumerate() {
        let x = pad + (gi as f64 + 0.5) * group_w;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{sc}</text>"#,
            h - pad + 15.0
        );
    }
    for (bi, name) in inits.iter().enumerate() {
        let y = 35.0 + 14.0 * bi as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/>"#,
            w - 110.0,
            y - 9.0,
            PALETTE[bi % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{name}</text>"#, w - 95.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Obstacles, the flown path and the commanded path of one episode.
pub fn flight_plot(spec: &SceneSpec, report: &EpisodeReport) -> String {
    let [x0, y0, x1, y1] = spec.bounds;
    let scale = 20.0;
    let (w, h) = ((x1 - x0) * scale, (y1 - y0) * scale);
    let px = |x: f64| (x - x0) * scale;
    let py = |y: f64| (y1 - y) * scale;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}">"#
    );
    let _ = writeln!(s, r##"<rect width="{w:.0}" height="{h:.0}" fill="#fafafa"/>"##);
    for o in &spec.obstacles {
        let half = 0.5 * o.width;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#555"/>"##,
            px(o.cx - half),
            py(o.cy + half),
            o.width * scale,
            o.width * scale
        );
    }
    let path = |pts: Vec<[f64; 2]>, color: &str, dash: &str| {
        let d: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p[0]), py(p[1]))).collect();
        format!(
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            d.join(" ")
        )
    };
    let _ = writeln!(
        s,
        "{}",
        path(
            report.samples.iter().map(|x| x.desired_position).collect(),
            "#f28e2b",
            r#" stroke-dasharray="4 3""#
        )
    );
    let _ = writeln!(
        s,
        "{}",
        path(report.samples.iter().map(|x| x.position).collect(), "#4e79a7", "")
    );
    let g = spec.goal();
    let _ = writeln!(
        s,
        r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="#59a14f"/>"##,
        px(g.x),
        py(g.y)
    );
    s.push_str("</svg>\n");
    s
}
