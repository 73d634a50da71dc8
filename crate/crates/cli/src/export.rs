//! Render-ready text outputs: edge tables, DOT graphs, summaries and benchmark tables.

use std::fmt::Write as _;

use bggm::baselines::BenchmarkResult;
use bggm::inference::{CalledEdge, NetworkCall, NetworkKind, Prediction, Sign};
use bggm::sampler::ChainSamples;
use bggm::Class;

use crate::io::CsvSpec;

/// Pen widths for normalized weights 0 and 1.
pub const MIN_PENWIDTH: f64 = 0.5;
pub const MAX_PENWIDTH: f64 = 5.0;

/// What every output file records in its first line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self { seed, config_hash: config_hash.into() }
    }

    fn line(&self) -> String {
        format!("bggm {} seed={} config={}", env!("CARGO_PKG_VERSION"), self.seed, self.config_hash)
    }

    pub fn tsv(&self) -> String {
        format!("# {}\n", self.line())
    }

    pub fn dot(&self) -> String {
        format!("// {}\n", self.line())
    }
}

pub fn penwidth(weight: f64) -> f64 {
    MIN_PENWIDTH + (MAX_PENWIDTH - MIN_PENWIDTH) * weight.clamp(0.0, 1.0)
}

/// Green/red by partial-correlation sign for class and conserved networks;
/// orange/blue by carrying class for differential edges.
pub fn edge_color(kind: NetworkKind, e: &CalledEdge) -> &'static str {
    match (kind, e.carrier) {
        (NetworkKind::Differential, Some(Class::Two)) => "blue",
        (NetworkKind::Differential, _) => "orange",
        _ => match e.sign {
            Sign::Positive => "green",
            Sign::Negative => "red",
        },
    }
}

pub fn network_file_stem(kind: NetworkKind, alpha: f64) -> String {
    format!("network_{kind}_alpha{alpha}")
}

pub fn network_tsv(call: &NetworkCall, names: &[String], classes: &[String; 2], prov: &Provenance) -> String {
    let mut s = prov.tsv();
    let _ = writeln!(s, "# network={} alpha={} threshold={:.6}", call.kind, call.alpha, call.threshold);
    s.push_str("protein_i\tprotein_j\tppi\tsign\tweight\tcarrier\tcolor\n");
    for e in &call.edges {
        let sign = match e.sign {
            Sign::Positive => "+",
            Sign::Negative => "-",
        };
        let carrier = e.carrier.map_or("", |k| classes[k.index()].as_str());
        let _ = writeln!(
            s,
            "{}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{}",
            names[e.i],
            names[e.j],
            e.ppi,
            sign,
            e.weight,
            carrier,
            edge_color(call.kind, e)
        );
    }
    s
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn network_dot(call: &NetworkCall, names: &[String], prov: &Provenance) -> String {
    let mut s = prov.dot();
    let _ = writeln!(s, "graph {} {{", quote(&network_file_stem(call.kind, call.alpha)));
    s.push_str("  node [shape=ellipse];\n");
    for n in names {
        let _ = writeln!(s, "  {};", quote(n));
    }
    for e in &call.edges {
        let _ = writeln!(
            s,
            "  {} -- {} [color={}, penwidth={:.4}, tooltip=\"ppi={:.4}\"];",
            quote(&names[e.i]),
            quote(&names[e.j]),
            edge_color(call.kind, e),
            penwidth(e.weight),
            e.ppi
        );
    }
    s.push_str("}\n");
    s
}

pub fn chain_summary_tsv(samples: &ChainSamples, prov: &Provenance) -> String {
    let a = &samples.acceptance;
    let c = &samples.config;
    let rows: Vec<(&str, String)> = vec![
        ("iterations", c.iterations.to_string()),
        ("burn_in", c.burn_in.to_string()),
        ("thin", c.thin.to_string()),
        ("draws", samples.draws.len().to_string()),
        ("unknown_samples", samples.unknown_rows.len().to_string()),
        ("edge_proposed", a.edge.proposed.to_string()),
        ("edge_accepted", a.edge.accepted.to_string()),
        ("edge_acceptance_rate", format!("{:.6}", a.edge.rate())),
        ("scale_proposed", a.scale.proposed.to_string()),
        ("scale_accepted", a.scale.accepted.to_string()),
        ("scale_acceptance_rate", format!("{:.6}", a.scale.rate())),
        ("empty_interval_rejects", a.empty_interval.to_string()),
        ("numerical_rejects", a.numerical_rejects.to_string()),
        ("sweeps_checked", samples.sweeps_checked.to_string()),
        ("invariant_violations", samples.invariant_violations.to_string()),
    ];
    let mut s = prov.tsv();
    s.push_str("quantity\tvalue\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k}\t{v}");
    }
    s
}

/// `row` is the 1-based data row of the input file.
pub fn predictions_tsv(preds: &[Prediction], spec: &CsvSpec, prov: &Provenance) -> String {
    let mut s = prov.tsv();
    s.push_str("row\tclass1_probability\tpredicted\n");
    for p in preds {
        let _ = writeln!(s, "{}\t{:.6}\t{}", p.row + 1, p.class1_probability, spec.label_name(Some(p.class)));
    }
    s
}

pub fn benchmark_table_tsv(res: &BenchmarkResult, prov: &Provenance) -> String {
    let mut s = prov.tsv();
    s.push_str("# misclassification percentage over random splits; the network-based SVM column is not produced\n");
    s.push_str("statistic");
    for k in &res.classifiers {
        let _ = write!(s, "\t{k}");
    }
    s.push('\n');
    for (name, vals) in [("mean", &res.mean), ("sd", &res.sd)] {
        s.push_str(name);
        for v in vals {
            let _ = write!(s, "\t{v:.4}");
        }
        s.push('\n');
    }
    s
}

/// One line per (replicate, classifier).
pub fn benchmark_replicates_tsv(res: &BenchmarkResult, prov: &Provenance) -> String {
    let mut s = prov.tsv();
    s.push_str("replicate\tclassifier\terror_pct\tn_train\tn_test\n");
    for r in &res.replicates {
        for (k, e) in res.classifiers.iter().zip(&r.errors) {
            let _ = writeln!(s, "{}\t{k}\t{e:.6}\t{}\t{}", r.index, r.n_train, r.n_test);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(sign: Sign, carrier: Option<Class>) -> CalledEdge {
        CalledEdge { i: 0, j: 1, ppi: 0.9, sign, weight: 1.0, carrier }
    }

    #[test]
    fn colour_mapping() {
        assert_eq!(edge_color(NetworkKind::Class1, &edge(Sign::Positive, None)), "green");
        assert_eq!(edge_color(NetworkKind::Conserved, &edge(Sign::Negative, None)), "red");
        assert_eq!(edge_color(NetworkKind::Differential, &edge(Sign::Negative, Some(Class::One))), "orange");
        assert_eq!(edge_color(NetworkKind::Differential, &edge(Sign::Positive, Some(Class::Two))), "blue");
    }

    #[test]
    fn penwidth_spans_documented_range() {
        assert_eq!(penwidth(0.0), MIN_PENWIDTH);
        assert_eq!(penwidth(1.0), MAX_PENWIDTH);
        assert_eq!(penwidth(2.0), MAX_PENWIDTH);
    }

    #[test]
    fn headers_carry_version_seed_and_hash() {
        let p = Provenance::new(7, "abc");
        assert_eq!(p.tsv(), format!("# bggm {} seed=7 config=abc\n", env!("CARGO_PKG_VERSION")));
        assert!(p.dot().starts_with("// bggm "));
    }
}
