//! File exporters for fitted posteriors: CSV tables, DOT and GraphML
//! networks, and per-pair partial-correlation densities.

use std::fmt::Write as _;
use std::path::Path;

use gcgm_core::summary::{bin_lower_edge, EdgeSummary, Network, PosteriorAccumulator, HIST_WIDTH};
use gcgm_core::Result;
use nalgebra::DMatrix;

/// Formats `x` rounded to 6 significant digits, printed in the shortest
/// form that parses back to the rounded value; exponent notation outside
/// [1e-4, 1e15).
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    if rounded.abs() < 1e-4 || rounded.abs() >= 1e15 {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_edge_summary(path: &Path, summaries: &[EdgeSummary], names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "i",
        "j",
        "var_i",
        "var_j",
        "probability",
        "spike_mass",
        "mean_parcor",
        "mean_parcor_given_edge",
        "sd",
        "ci90_low",
        "ci90_high",
    ])?;
    for s in summaries {
        w.write_record([
            s.i.to_string(),
            s.j.to_string(),
            names[s.i].clone(),
            names[s.j].clone(),
            sig6(s.probability),
            sig6(s.spike_mass),
            sig6(s.mean_parcor),
            sig6(s.mean_parcor_given_edge),
            sig6(s.sd_parcor),
            sig6(s.ci90.0),
            sig6(s.ci90.1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Square matrix with a header row and a leading label column.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(std::iter::once("").chain(names.iter().map(String::as_str)))?;
    for (r, name) in names.iter().enumerate() {
        let row: Vec<String> = std::iter::once(name.clone())
            .chain((0..m.ncols()).map(|c| sig6(m[(r, c)])))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear map of inclusion probability 0.5..1 onto line width 1..5.
pub fn penwidth(probability: f64) -> f64 {
    (1.0 + (probability - 0.5) * 8.0).clamp(1.0, 5.0)
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn export_dot(net: &Network, names: &[String]) -> String {
    let mut out = String::from("graph gcgm {\n  node [shape=ellipse];\n");
    for (v, name) in names.iter().enumerate() {
        writeln!(out, "  n{v} [label=\"{}\"];", dot_escape(name)).unwrap();
    }
    for e in &net.edges {
        writeln!(
            out,
            "  n{} -- n{} [penwidth={}, color={}, probability={}, parcor={}];",
            e.i,
            e.j,
            sig6(penwidth(e.probability)),
            e.sign.color(),
            sig6(e.probability),
            sig6(e.mean_parcor)
        )
        .unwrap();
    }
    out.push_str("}\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn export_graphml(net: &Network, names: &[String]) -> String {
    let mut out = String::from(concat!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
        "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n",
        "  <key id=\"probability\" for=\"edge\" attr.name=\"probability\" attr.type=\"double\"/>\n",
        "  <key id=\"parcor\" for=\"edge\" attr.name=\"mean_parcor\" attr.type=\"double\"/>\n",
        "  <key id=\"penwidth\" for=\"edge\" attr.name=\"penwidth\" attr.type=\"double\"/>\n",
        "  <key id=\"color\" for=\"edge\" attr.name=\"color\" attr.type=\"string\"/>\n",
        "  <graph id=\"gcgm\" edgedefault=\"undirected\">\n",
    ));
    for (v, name) in names.iter().enumerate() {
        writeln!(
            out,
            "    <node id=\"n{v}\"><data key=\"label\">{}</data></node>",
            xml_escape(name)
        )
        .unwrap();
    }
    for e in &net.edges {
        writeln!(
            out,
            "    <edge source=\"n{}\" target=\"n{}\"><data key=\"probability\">{}</data><data key=\"parcor\">{}</data><data key=\"penwidth\">{}</data><data key=\"color\">{}</data></edge>",
            e.i,
            e.j,
            sig6(e.probability),
            sig6(e.mean_parcor),
            sig6(penwidth(e.probability)),
            e.sign.color()
        )
        .unwrap();
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

/// Writes `densities/<i>_<j>.csv` for every pair and returns the file
/// names relative to `dir`. Masses sum to 1 per file.
pub fn write_densities(dir: &Path, acc: &PosteriorAccumulator) -> Result<Vec<String>> {
    let sub = dir.join("densities");
    std::fs::create_dir_all(&sub)?;
    let total = acc.sample_count as f64;
    let mut files = Vec::new();
    for i in 0..acc.p {
        for j in i + 1..acc.p {
            let name = format!("{i}_{j}.csv");
            let mut w = csv_writer(&sub.join(&name))?;
            w.write_record(["bin", "lower", "upper", "mass"])?;
            w.write_record(["0-spike", "0", "0", &sig6(acc.spike_count(i, j) as f64 / total)])?;
            for (b, &count) in acc.histogram(i, j).iter().enumerate() {
                let lo = bin_lower_edge(b);
                w.write_record([
                    b.to_string(),
                    sig6(lo),
                    sig6(lo + HIST_WIDTH),
                    sig6(count as f64 / total),
                ])?;
            }
            w.flush()?;
            files.push(format!("densities/{name}"));
        }
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gcgm_core::graph::Graph;
    use gcgm_core::summary::{EdgeSign, NetworkEdge};

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(-0.5), "-0.5");
        assert_eq!(sig6(123456789.0), "123457000");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(9.769962616701378e-15), "9.76996e-15");
        assert_eq!(sig6(0.00012), "0.00012");
        assert_eq!(sig6(-0.0), "0");
        let x = 0.0123456789;
        assert!((sig6(x).parse::<f64>().unwrap() - x).abs() <= 5e-8);
    }

    #[test]
    fn penwidth_endpoints() {
        assert_eq!(penwidth(0.5), 1.0);
        assert_eq!(penwidth(1.0), 5.0);
        assert_eq!(penwidth(0.75), 3.0);
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|v| format!("V{v}")).collect()
    }

    #[test]
    fn dot_colors_and_empty_network() {
        let net = Network {
            graph: Graph::from_edges(3, &[(0, 2)]),
            edges: vec![NetworkEdge {
                i: 0,
                j: 2,
                probability: 1.0,
                mean_parcor: -0.3,
                sign: EdgeSign::Negative,
            }],
        };
        let dot = export_dot(&net, &names(3));
        assert!(dot.contains("n0 -- n2 [penwidth=5, color=red"));
        let empty = Network {
            graph: Graph::empty(2),
            edges: vec![],
        };
        let dot = export_dot(&empty, &names(2));
        assert!(!dot.contains("--"));
        assert!(dot.contains("n1 [label=\"V1\"]"));
        assert!(dot.trim_end().ends_with('}'));
    }

    #[test]
    fn graphml_escapes_labels() {
        let net = Network {
            graph: Graph::empty(1),
            edges: vec![],
        };
        let xml = export_graphml(&net, &["A<B & \"C\"".to_string()]);
        assert!(xml.contains("A&lt;B &amp; &quot;C&quot;"));
    }
}
