//! Hand-written SVG for region maps.

use std::fmt::Write;

use epdt_core::criticality::{RegionMap, Verdict};

const SIZE: f64 = 560.0;
const PAD: f64 = 60.0;

fn color(v: Option<Verdict>) -> &'static str {
    match v {
        Some(Verdict::BlowUp) => "#d7301f",
        Some(Verdict::GlobalExistence) => "#2b8cbe",
        Some(Verdict::TheorySilent) => "#bdbdbd",
        None => "#ffffff",
    }
}

/// Zero-level segments of a node-sampled field, in index coordinates.
///
/// `values[iq * res + ip]`; NaN nodes break the contour.
pub fn zero_contour(values: &[f64], res: usize) -> Vec<[(f64, f64); 2]> {
    let at = |ip: usize, iq: usize| values[iq * res + ip];
    let mut segs = Vec::new();
    for iq in 0..res.saturating_sub(1) {
        for ip in 0..res - 1 {
            // Corners counter-clockwise from the lower left.
            let c = [
                (ip as f64, iq as f64, at(ip, iq)),
                (ip as f64 + 1.0, iq as f64, at(ip + 1, iq)),
                (ip as f64 + 1.0, iq as f64 + 1.0, at(ip + 1, iq + 1)),
                (ip as f64, iq as f64 + 1.0, at(ip, iq + 1)),
            ];
            if c.iter().any(|k| k.2.is_nan()) {
                continue;
            }
            // Crossing point on each edge (bottom, right, top, left).
            let mut cross: [Option<(f64, f64)>; 4] = [None; 4];
            for e in 0..4 {
                let (a, b) = (c[e], c[(e + 1) % 4]);
                if (a.2 >= 0.0) != (b.2 >= 0.0) {
                    let s = a.2 / (a.2 - b.2);
                    cross[e] = Some((a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1)));
                }
            }
            let hits: Vec<(f64, f64)> = cross.iter().flatten().copied().collect();
            match hits.len() {
                2 => segs.push([hits[0], hits[1]]),
                4 => {
                    let centre = c.iter().map(|k| k.2).sum::<f64>() / 4.0;
                    let [b, r, t, l] = cross.map(|x| x.unwrap());
                    if (centre >= 0.0) == (c[0].2 >= 0.0) {
                        segs.push([b, r]);
                        segs.push([t, l]);
                    } else {
                        segs.push([l, b]);
                        segs.push([r, t]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

pub fn render(map: &RegionMap) -> String {
    let res = map.resolution;
    let (p0, p1) = map.p_range;
    let (q0, q1) = map.q_range;
    let sx = |p: f64| PAD + (p - p0) / (p1 - p0) * SIZE;
    let sy = |q: f64| PAD + SIZE - (q - q0) / (q1 - q0) * SIZE;
    let step = res as f64 - 1.0;
    let cell = SIZE / step;
    let total = SIZE + 2.0 * PAD;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for c in &map.cells {
        let verdict = c.class.as_ref().ok().map(|k| k.verdict);
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            sx(c.p) - cell / 2.0,
            sy(c.q) - cell / 2.0,
            cell,
            cell,
            color(verdict)
        );
    }
    let gammas: Vec<f64> = map
        .cells
        .iter()
        .map(|c| c.class.as_ref().map(|k| k.gamma_m).unwrap_or(f64::NAN))
        .collect();
    let mut path = String::new();
    for [a, b] in zero_contour(&gammas, res) {
        let px = |i: f64| sx(p0 + (p1 - p0) * i / step);
        let py = |j: f64| sy(q0 + (q1 - q0) * j / step);
        let _ = write!(path, "M{:.2} {:.2}L{:.2} {:.2}", px(a.0), py(a.1), px(b.0), py(b.1));
    }
    if !path.is_empty() {
        let _ = writeln!(s, r#"<path d="{path}" stroke="black" stroke-width="2" fill="none"/>"#);
    }
    if let Some((pt, qt)) = map.corner {
        if (p0..=p1).contains(&pt) && (q0..=q1).contains(&qt) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="none" stroke="black" stroke-width="2"/>"#,
                sx(pt),
                sy(qt)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="14" text-anchor="{anchor}">{text}</text>"#
        );
    };
    label(&mut s, PAD, PAD + SIZE + 20.0, "middle", format!("{p0}"));
    label(&mut s, PAD + SIZE, PAD + SIZE + 20.0, "middle", format!("{p1}"));
    label(&mut s, PAD + SIZE / 2.0, PAD + SIZE + 40.0, "middle", "p".into());
    label(&mut s, PAD - 8.0, PAD + SIZE, "end", format!("{q0}"));
    label(&mut s, PAD - 8.0, PAD + 5.0, "end", format!("{q1}"));
    label(&mut s, PAD - 30.0, PAD + SIZE / 2.0, "end", "q".into());
    for (i, (name, v)) in [
        ("blow-up", Some(Verdict::BlowUp)),
        ("global", Some(Verdict::GlobalExistence)),
        ("silent", Some(Verdict::TheorySilent)),
    ]
    .into_iter()
    .enumerate()
    {
        let x = PAD + i as f64 * 150.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="20" width="14" height="14" fill="{}"/>"#,
            color(v)
        );
        label(&mut s, x + 20.0, 32.0, "start", name.into());
    }
    s.push_str("</svg>\n");
    s
}
