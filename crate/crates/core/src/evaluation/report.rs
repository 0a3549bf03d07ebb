use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{success_rate_curve, SuccessCurve};
use super::protocols::AblationRow;
use super::trial::{Method, TrialResult};
use crate::error::{Error, Result};
use crate::persist::{read_json, write_atomic};

pub const TRIALS_HEADER: &str = "trial,method,lambda,views,init_rotation_deg,final_rotation_deg,init_translation,final_translation,\
init_style_error,final_style_error,init_l_ph,final_l_ph,init_l_cd,final_l_cd,init_l_total,final_l_total,\
init_point_pairs,final_point_pairs,status,rounds,variables,evaluations";

/// One row per trial, means over frames for the pose errors.
pub fn trials_csv(results: &[TrialResult]) -> String {
    let mut out = format!("{TRIALS_HEADER}\n");
    for r in results {
        let method = match r.spec.method {
            Method::Prior => "prior",
            Method::Direct => "direct",
        };
        let (i, f) = (&r.init, &r.fin);
        let _ = writeln!(
            out,
            "{},{method},{:?},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{:?},{},{},{}",
            r.trial,
            r.spec.lambda,
            r.spec.views,
            i.mean_rotation(),
            f.mean_rotation(),
            i.mean_translation(),
            f.mean_translation(),
            i.style_error,
            f.style_error,
            i.loss.l_ph,
            f.loss.l_ph,
            i.loss.l_cd,
            f.loss.l_cd,
            i.loss.l_total,
            f.loss.l_total,
            i.loss.n_point_pairs,
            f.loss.n_point_pairs,
            r.status,
            r.rounds,
            r.variables,
            r.evaluations
        );
    }
    out
}

/// `threshold,<name>…` with one success column per curve.
pub fn curves_csv(curves: &[(&str, &SuccessCurve)]) -> Result<String> {
    let Some((_, first)) = curves.first() else {
        return Err(Error::EmptySet("curves_csv needs at least one curve"));
    };
    if curves.iter().any(|(_, c)| c.thresholds != first.thresholds) {
        return Err(Error::InvalidInput("curves must share their thresholds".into()));
    }
    let mut out = String::from("threshold");
    for (name, _) in curves {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (k, t) in first.thresholds.iter().enumerate() {
        let _ = write!(out, "{t:?}");
        for (_, c) in curves {
            let _ = write!(out, ",{:?}", c.success[k]);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("views,trials,median_rotation_deg,mean_rotation_deg,median_translation,median_style_error,mean_style_error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            r.views, r.trials, r.median_rotation_deg, r.mean_rotation_deg, r.median_translation, r.median_style_error, r.mean_style_error
        );
    }
    out
}

/// A self-contained SVG line chart.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 560.0;
    const H: f64 = 380.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 55.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        (W - R + L) / 2.0,
        escape(title)
    );
    let _ = writeln!(s, "<line x1=\"{L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", H - B, W - R, H - B);
    let _ = writeln!(s, "<line x1=\"{L}\" y1=\"{T}\" x2=\"{L}\" y2=\"{}\" stroke=\"black\"/>", H - B);
    for k in 0..=5 {
        let fx = x0 + (x1 - x0) * k as f64 / 5.0;
        let fy = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", sx(fx), H - B + 18.0, tick(fx));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", L - 6.0, sy(fy) + 4.0, tick(fy));
        let _ = writeln!(s, "<line x1=\"{L}\" y1=\"{:.1}\" x2=\"{}\" y2=\"{:.1}\" stroke=\"#ddd\"/>", sy(fy), W - R, sy(fy));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (W - R + L) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>",
        (H - B + T) / 2.0,
        escape(y_label)
    );
    for (i, (name, p)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> =
            p.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        for pt in &path {
            let (cx, cy) = pt.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>");
        }
        let ly = T + 10.0 + 20.0 * i as f64;
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", W - R + 15.0, W - R + 35.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", W - R + 40.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{}", (v * 100.0).round() / 100.0)
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Every `result.json` below `root`, sorted by path.
pub fn find_results(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "result.json") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_results(root: &Path) -> Result<Vec<TrialResult>> {
    find_results(root)?.iter().map(|p| read_json(p)).collect()
}

/// Writes `trials.csv`, the success curves of every spec, and their SVGs into `dir`.
pub fn write_reports(dir: &Path, results: &[TrialResult], pose_thresholds: &[f64], style_thresholds: &[f64]) -> Result<()> {
    write_atomic(&dir.join("trials.csv"), trials_csv(results).as_bytes())?;
    if results.is_empty() {
        return Ok(());
    }
    let mut labels: Vec<String> = results.iter().map(|r| r.spec.label()).collect();
    labels.sort();
    labels.dedup();
    type Metric = fn(&TrialResult) -> f64;
    let kinds: [(&str, &str, &[f64], Metric, Metric); 2] = [
        ("pose", "mean rotation error (deg)", pose_thresholds, |r| r.init.mean_rotation(), |r| r.fin.mean_rotation()),
        ("style", "style error", style_thresholds, |r| r.init.style_error, |r| r.fin.style_error),
    ];
    for (kind, axis, thresholds, init_of, fin_of) in kinds {
        let mut curves: Vec<(String, SuccessCurve)> = Vec::new();
        for label in &labels {
            let sel: Vec<&TrialResult> = results.iter().filter(|r| &r.spec.label() == label).collect();
            let init: Vec<f64> = sel.iter().map(|r| init_of(r)).collect();
            let fin: Vec<f64> = sel.iter().map(|r| fin_of(r)).collect();
            curves.push((format!("{label}_init"), success_rate_curve(&init, thresholds)?));
            curves.push((format!("{label}_final"), success_rate_curve(&fin, thresholds)?));
        }
        let named: Vec<(&str, &SuccessCurve)> = curves.iter().map(|(n, c)| (n.as_str(), c)).collect();
        write_atomic(&dir.join(format!("curves_{kind}.csv")), curves_csv(&named)?.as_bytes())?;
        let series: Vec<(&str, Vec<(f64, f64)>)> =
            named.iter().map(|(n, c)| (*n, c.thresholds.iter().copied().zip(c.success.iter().copied()).collect())).collect();
        let svg = line_chart_svg(&format!("Success rate ({kind})"), &format!("threshold: {axis}"), "fraction of trials", &series);
        write_atomic(&dir.join(format!("curves_{kind}.svg")), svg.as_bytes())?;
    }
    Ok(())
}

/// Writes `ablation_views.csv` and the rotation and style SVGs.
pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    write_atomic(&dir.join("ablation_views.csv"), ablation_csv(rows).as_bytes())?;
    let pts = |f: fn(&AblationRow) -> f64| rows.iter().map(|r| (r.views as f64, f(r))).collect::<Vec<_>>();
    let rot = line_chart_svg(
        "Rotation error vs. views",
        "views L",
        "rotation error (deg)",
        &[("median", pts(|r| r.median_rotation_deg)), ("mean", pts(|r| r.mean_rotation_deg))],
    );
    write_atomic(&dir.join("ablation_views_rotation.svg"), rot.as_bytes())?;
    let style = line_chart_svg(
        "Style error vs. views",
        "views L",
        "style error",
        &[("median", pts(|r| r.median_style_error)), ("mean", pts(|r| r.mean_style_error))],
    );
    write_atomic(&dir.join("ablation_views_style.svg"), style.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_csv_layout() {
        let a = success_rate_curve(&[1.0, 3.0], &[0.0, 2.0, 4.0]).unwrap();
        let b = success_rate_curve(&[0.0], &[0.0, 2.0, 4.0]).unwrap();
        let csv = curves_csv(&[("a", &a), ("b", &b)]).unwrap();
        assert_eq!(csv, "threshold,a,b\n0.0,0.0,1.0\n2.0,0.5,1.0\n4.0,1.0,1.0\n");
        let c = success_rate_curve(&[0.0], &[1.0]).unwrap();
        assert!(curves_csv(&[("a", &a), ("c", &c)]).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = line_chart_svg("t <1>", "x", "y", &[("s", vec![(2.0, 1.0), (15.0, f64::NAN), (5.0, 0.5)]), ("empty", vec![])]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(!svg.contains("NaN"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
