//! SVG renderings of flows: terminals as filled circles with area scaling
//! with |mass|, branch points as hollow circles, edges with stroke width
//! scaling with C(|m|). 3D flows render as three axis-aligned projections.

use branchflow::cost::CostSpec;
use branchflow::flow::{Flow, VertexKind};
use std::collections::HashMap;
use std::fmt::Write;

const PANEL: f64 = 480.0;
const MARGIN: f64 = 50.0;

struct Frame {
    min: [f64; 2],
    scale: f64,
    offset_x: f64,
}

impl Frame {
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            self.offset_x + MARGIN + (p[0] - self.min[0]) * self.scale,
            // SVG y grows downward.
            MARGIN + PANEL - (p[1] - self.min[1]) * self.scale,
        )
    }
}

fn frame_for(points: &[[f64; 2]], offset_x: f64) -> Frame {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let span = (max[0] - min[0]).max(max[1] - min[1]).max(1e-9);
    Frame {
        min,
        scale: PANEL / span,
        offset_x,
    }
}

/// Net terminal mass at each vertex, recovered from the divergence identity.
fn vertex_masses(flow: &Flow) -> HashMap<&str, f64> {
    let mut mass: HashMap<&str, f64> = HashMap::new();
    for v in &flow.vertices {
        let outgoing: f64 = flow
            .edges
            .iter()
            .filter_map(|e| {
                if e.u == v.id {
                    Some(e.mass)
                } else if e.v == v.id {
                    Some(-e.mass)
                } else {
                    None
                }
            })
            .sum();
        mass.insert(v.id.as_str(), -outgoing);
    }
    mass
}

fn render_panel(
    out: &mut String,
    flow: &Flow,
    cost: &CostSpec,
    labels: bool,
    axes: (usize, usize),
    frame: &Frame,
    caption: Option<&str>,
) {
    let project = |id: &str| -> [f64; 2] {
        let v = flow.vertex(id).expect("edge endpoints exist");
        let c = v.position.coords();
        [c[axes.0], c[axes.1]]
    };
    let max_cost = flow
        .edges
        .iter()
        .map(|e| cost.eval(e.mass.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let masses = vertex_masses(flow);
    let max_mass = masses
        .values()
        .map(|m| m.abs())
        .fold(0.0f64, f64::max)
        .max(1e-12);

    if let Some(text) = caption {
        let (x, y) = (frame.offset_x + MARGIN, MARGIN * 0.6);
        let _ = writeln!(
            out,
            r#"  <text x="{x:.2}" y="{y:.2}" class="caption">{text}</text>"#
        );
    }
    for e in &flow.edges {
        let (x1, y1) = frame.map(project(&e.u));
        let (x2, y2) = frame.map(project(&e.v));
        let width = 1.0 + 5.0 * cost.eval(e.mass.abs()) / max_cost;
        let _ = writeln!(
            out,
            r##"  <line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#556" stroke-width="{width:.2}" stroke-linecap="round"/>"##
        );
    }
    for v in &flow.vertices {
        let (cx, cy) = frame.map(project(&v.id));
        match v.kind {
            VertexKind::Terminal => {
                let m = masses.get(v.id.as_str()).copied().unwrap_or(0.0);
                let r = 4.0 + 9.0 * (m.abs() / max_mass).sqrt();
                let fill = if m >= 0.0 { "#c0504d" } else { "#4f81bd" };
                let _ = writeln!(
                    out,
                    r#"  <circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}"/>"#
                );
            }
            VertexKind::Branching => {
                let _ = writeln!(
                    out,
                    r##"  <circle cx="{cx:.2}" cy="{cy:.2}" r="5.00" fill="white" stroke="#333" stroke-width="1.5"/>"##
                );
            }
        }
        if labels {
            let _ = writeln!(
                out,
                r#"  <text x="{:.2}" y="{:.2}" class="label">{}</text>"#,
                cx + 8.0,
                cy - 8.0,
                v.id
            );
        }
    }
}

/// Renders a flow to a standalone SVG document. Planar flows use one panel;
/// 3D flows show the xy, xz and yz projections side by side.
pub fn render_flow(flow: &Flow, cost: &CostSpec, labels: bool) -> String {
    let dim = flow.vertices.first().map(|v| v.position.dim()).unwrap_or(2);
    let panels: Vec<(usize, usize, &str)> = if dim == 3 {
        vec![(0, 1, "xy"), (0, 2, "xz"), (1, 2, "yz")]
    } else {
        vec![(0, 1, "")]
    };
    let width = panels.len() as f64 * (PANEL + 2.0 * MARGIN);
    let height = PANEL + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(
        out,
        r#"  <style>.label {{ font: 12px sans-serif; fill: #222; }} .caption {{ font: bold 14px sans-serif; fill: #222; }}</style>"#
    );
    let _ = writeln!(out, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    for (i, &(ax, ay, caption)) in panels.iter().enumerate() {
        let pts: Vec<[f64; 2]> = flow
            .vertices
            .iter()
            .map(|v| {
                let c = v.position.coords();
                [c[ax], c[ay]]
            })
            .collect();
        let frame = frame_for(&pts, i as f64 * (PANEL + 2.0 * MARGIN));
        let cap = (!caption.is_empty()).then_some(caption);
        render_panel(&mut out, flow, cost, labels, (ax, ay), &frame, cap);
    }
    out.push_str("</svg>\n");
    out
}
