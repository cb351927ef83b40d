//! Tab-separated plot-data tables. Floats use Rust's shortest round-trip
//! formatting so tables are byte-stable.

use std::fmt::Write;

use super::metrics::{ConfusionMatrix, Spread};
use super::pca::PcaProjection;
use super::rollout::PerStepMse;
use crate::data::StateLabel;
use crate::error::{Error, Result};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// One bar per row: `label  mean  std  n`.
pub fn accuracy_table(rows: &[(String, Option<Spread>)]) -> String {
    let mut out = String::from("label\tmean\tstd\tn\n");
    for (label, spread) in rows {
        match spread {
            Some(s) => writeln!(out, "{label}\t{}\t{}\t{}", s.mean, s.std, s.n).unwrap(),
            None => writeln!(out, "{label}\tNA\tNA\t0").unwrap(),
        }
    }
    out
}

/// Percent matrix with labeled-state rows and predicted-state columns,
/// plus a support column.
pub fn confusion_table(cm: &ConfusionMatrix, class_names: &[&str]) -> Result<String> {
    if class_names.len() != cm.k() {
        return Err(Error::Shape(format!(
            "{} class names for a {}-class confusion matrix",
            class_names.len(),
            cm.k()
        )));
    }
    let mut out = String::from("labeled");
    for name in class_names {
        write!(out, "\t{name}").unwrap();
    }
    out.push_str("\tsupport\n");
    for (i, row) in cm.percent.iter().enumerate() {
        out.push_str(class_names[i]);
        for v in row {
            write!(out, "\t{v}").unwrap();
        }
        writeln!(out, "\t{}", cm.support[i]).unwrap();
    }
    Ok(out)
}

/// MSE-versus-step curves, one column per named series.
pub fn mse_table(series: &[(String, &PerStepMse)]) -> String {
    let steps = series.iter().map(|(_, m)| m.per_step.len()).max().unwrap_or(0);
    let mut out = String::from("step");
    for (name, _) in series {
        write!(out, "\t{name}").unwrap();
    }
    out.push('\n');
    for s in 0..steps {
        write!(out, "{}", s + 1).unwrap();
        for (_, m) in series {
            write!(out, "\t{}", fmt_opt(m.per_step.get(s).copied())).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-step table for a single rollout evaluation, with channel split.
pub fn per_step_table(m: &PerStepMse) -> String {
    let mut out = String::from("step\tmse\ttrace_mse\tderivative_mse\n");
    for (s, (total, ch)) in m.per_step.iter().zip(&m.per_channel).enumerate() {
        writeln!(out, "{}\t{total}\t{}\t{}", s + 1, ch[0], ch[1]).unwrap();
    }
    out
}

/// PCA trajectory rows `t  pc1 .. pcK  state`.
pub fn pca_table(p: &PcaProjection, labels: &[StateLabel]) -> Result<String> {
    let (t, k) = p.projection.dim();
    if labels.len() != t {
        return Err(Error::Shape(format!("{} labels for a {t}-step projection", labels.len())));
    }
    let mut out = String::from("t");
    for c in 0..k {
        write!(out, "\tpc{}", c + 1).unwrap();
    }
    out.push_str("\tstate\n");
    for (i, row) in p.projection.rows().into_iter().enumerate() {
        write!(out, "{i}").unwrap();
        for v in row {
            write!(out, "\t{v}").unwrap();
        }
        writeln!(out, "\t{}", labels[i]).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::confusion_matrix;

    #[test]
    fn confusion_rows_and_header() {
        let cm = confusion_matrix(&[0, 1, 1], &[Some(0), Some(1), Some(0)], 2).unwrap();
        let table = confusion_table(&cm, &["forward", "reverse"]).unwrap();
        assert_eq!(table, "labeled\tforward\treverse\tsupport\nforward\t50\t50\t2\nreverse\t0\t100\t1\n");
        assert!(confusion_table(&cm, &["a"]).is_err());
    }

    #[test]
    fn mse_table_rows() {
        let m = PerStepMse {
            per_step: vec![0.5; 16],
            per_channel: vec![[1.0, 0.0]; 16],
            windows: 1,
            skipped: 0,
        };
        let table = per_step_table(&m);
        assert_eq!(table.lines().count(), 17);
        assert!(table.starts_with("step\tmse\ttrace_mse\tderivative_mse\n1\t0.5\t1\t0\n"));
    }
}
