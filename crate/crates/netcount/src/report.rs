//! Plain-text serialization of fits, comparisons, designs, and GOF summaries.
//!
//! Everything is comma-separated UTF-8 with a header row; missing values are
//! written as `NA`. Floats use Rust's shortest round-trip formatting, so
//! identical numbers serialize identically.

use std::fmt::Write as _;

use crate::design::DesignMatrix;
use crate::estimation::{CurvePoint, FitResult, RandomEffects};
use crate::gof::SimulationSummary;
use crate::selection::ModelComparison;

fn field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "NA".into(),
    }
}

/// `term,basis_index,estimate,se` for every column, grouped by column group.
pub fn coefficients_csv(fit: &FitResult) -> String {
    let mut out = String::from("term,basis_index,estimate,se\n");
    for group in &fit.layout.groups {
        for (k, c) in group.columns.clone().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                field(&group.label),
                k + 1,
                fit.coefficients[c],
                fit.standard_errors[c]
            );
        }
    }
    out
}

/// `t,estimate,lower,upper` rows of one coefficient curve.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("t,estimate,lower,upper\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.t, p.estimate, p.lower, p.upper);
    }
    out
}

/// `actor,sender_effect,sender_sd,receiver_effect,receiver_sd`.
pub fn random_effects_csv(effects: &RandomEffects, actor_ids: &[String]) -> String {
    let mut out = String::from("actor,sender_effect,sender_sd,receiver_effect,receiver_sd\n");
    for (ix, id) in actor_ids.iter().enumerate() {
        let sender = effects.sender.get(ix);
        let receiver = effects.receiver.get(ix);
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            field(id),
            opt(sender.map(|s| s.1)),
            opt(sender.map(|s| s.2)),
            opt(receiver.map(|r| r.1)),
            opt(receiver.map(|r| r.2)),
        );
    }
    out
}

/// Human-readable fit summary: likelihoods, smoothing parameters, variance
/// components, per-group effective degrees of freedom, and the convergence
/// trace.
pub fn fit_summary_text(fit: &FitResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rows: {}", fit.n_rows);
    let _ = writeln!(out, "columns: {}", fit.layout.total_columns());
    let _ = writeln!(out, "loglik: {}", fit.loglik);
    let _ = writeln!(out, "loglik_full: {}", fit.loglik_full());
    let _ = writeln!(out, "penalized_loglik: {}", fit.penalized_loglik);
    let _ = writeln!(out, "edf_total: {}", fit.edf_total);
    let _ = writeln!(
        out,
        "sender_variance: {}",
        opt(fit.sender_variance)
    );
    let _ = writeln!(
        out,
        "receiver_variance: {}",
        opt(fit.receiver_variance)
    );
    let _ = writeln!(out, "\ngamma:");
    for g in &fit.gammas {
        let _ = writeln!(out, "  {}: {}", g.label, g.gamma);
    }
    let _ = writeln!(out, "\nedf:");
    for (label, edf) in &fit.edf_by_group {
        let _ = writeln!(out, "  {label}: {edf}");
    }
    let _ = writeln!(out, "\ntrace (outer,inner,penalized_loglik,max_gradient,halvings):");
    for rec in &fit.trace {
        let _ = writeln!(
            out,
            "  {},{},{},{},{}",
            rec.outer, rec.inner, rec.penalized_loglik, rec.max_gradient, rec.step_halvings
        );
    }
    out
}

/// The Table-style comparison: one row per suite member.
pub fn comparison_csv(comparison: &ModelComparison) -> String {
    let mut out =
        String::from("model,separability,time_varying,random_effects,loglik,edf,caic,aicc,error\n");
    for e in &comparison.entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            field(&e.label),
            e.separable,
            e.time_varying,
            e.random_effects,
            opt(e.loglik),
            opt(e.edf),
            opt(e.caic),
            opt(e.aicc),
            field(e.error.as_deref().unwrap_or("")),
        );
    }
    out
}

/// `statistic,cell,observed,sim_min,sim_q25,sim_q50,sim_q75,sim_max,sim_mean`.
pub fn gof_summary_csv(summary: &SimulationSummary) -> String {
    let mut out =
        String::from("statistic,cell,observed,sim_min,sim_q25,sim_q50,sim_q75,sim_max,sim_mean\n");
    let mut push = |statistic: &str, cell: String, observed: Option<f64>, stats: Option<crate::gof::SummaryStats>| {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            statistic,
            cell,
            opt(observed),
            opt(stats.map(|s| s.min)),
            opt(stats.map(|s| s.q25)),
            opt(stats.map(|s| s.median)),
            opt(stats.map(|s| s.q75)),
            opt(stats.map(|s| s.max)),
            opt(stats.map(|s| s.mean)),
        );
    };
    for cell in &summary.rootogram {
        push(
            "rootogram",
            cell.value.to_string(),
            Some(cell.observed),
            Some(cell.summary),
        );
    }
    for cell in &summary.clustering {
        push(
            "weighted_clustering",
            cell.period.to_string(),
            cell.observed,
            cell.summary,
        );
    }
    for cell in &summary.average_in_count {
        push(
            "average_in_count",
            cell.period.to_string(),
            Some(cell.observed),
            Some(cell.summary),
        );
    }
    for cell in &summary.in_count_distribution {
        push(
            "in_count_distribution",
            cell.value.to_string(),
            Some(cell.observed),
            Some(cell.summary),
        );
    }
    for cell in &summary.out_count_distribution {
        push(
            "out_count_distribution",
            cell.value.to_string(),
            Some(cell.observed),
            Some(cell.summary),
        );
    }
    out
}

/// Long-format replicate values: `statistic,cell,replicate,value`.
pub fn gof_replicates_csv(summary: &SimulationSummary) -> String {
    let mut out = String::from("statistic,cell,replicate,value\n");
    for cell in &summary.rootogram {
        for (r, v) in cell.replicates.iter().enumerate() {
            let _ = writeln!(out, "rootogram,{},{},{}", cell.value, r + 1, v);
        }
    }
    for cell in &summary.clustering {
        for (r, v) in cell.replicates.iter().enumerate() {
            let _ = writeln!(
                out,
                "weighted_clustering,{},{},{}",
                cell.period,
                r + 1,
                opt(*v)
            );
        }
    }
    for cell in &summary.average_in_count {
        for (r, v) in cell.replicates.iter().enumerate() {
            let _ = writeln!(out, "average_in_count,{},{},{}", cell.period, r + 1, v);
        }
    }
    for cell in &summary.in_count_distribution {
        for (r, v) in cell.replicates.iter().enumerate() {
            let _ = writeln!(out, "in_count_distribution,{},{},{}", cell.value, r + 1, v);
        }
    }
    for cell in &summary.out_count_distribution {
        for (r, v) in cell.replicates.iter().enumerate() {
            let _ = writeln!(out, "out_count_distribution,{},{},{}", cell.value, r + 1, v);
        }
    }
    out
}

/// The design matrix as delimited text: row metadata plus every named column.
pub fn design_csv(design: &DesignMatrix) -> String {
    let names = design.layout.column_names();
    let mut out = String::from("period,sender,receiver,response,regime,weight");
    for name in &names[..design.layout.fixed_columns] {
        out.push(',');
        out.push_str(&field(name));
    }
    out.push('\n');
    for row in &design.rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            row.period,
            field(&design.layout.actor_ids[row.sender]),
            field(&design.layout.actor_ids[row.receiver]),
            row.response,
            row.regime.name(),
            row.weight
        );
        for v in &row.values {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted() {
        assert_eq!(field("plain"), "plain");
        assert_eq!(field("a,b"), "\"a,b\"");
        assert_eq!(field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn missing_values_render_as_na() {
        assert_eq!(opt(None), "NA");
        assert_eq!(opt(Some(1.5)), "1.5");
    }
}
