//! Study tables: one block per comparison group with the families as
//! columns, best counts, medians and standard deviations as rows.

use zispline::simulation::{Criterion, FamilyStats, GroupReport, Study, StudyReport, Summary};

use crate::format::{render_table, sig4};

fn group_rows(g: &GroupReport, with_mre: bool) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut push = |label: &str, cell: &dyn Fn(&FamilyStats) -> String| {
        let mut row = vec![label.to_string()];
        row.extend(g.families.iter().map(cell));
        rows.push(row);
    };
    let criterion = |push: &mut dyn FnMut(&str, &dyn Fn(&FamilyStats) -> String),
                     name: &str,
                     get: fn(&FamilyStats) -> Option<&Criterion>,
                     with_sd: bool| {
        push(&format!("{name} best"), &|f| get(f).map_or("-".into(), |c| c.best.to_string()));
        push(&format!("{name} med."), &|f| get(f).map_or("-".into(), |c| sig4(c.summary.median)));
        if with_sd {
            push(&format!("{name} sd"), &|f| {
                get(f).map_or("-".into(), |c| format!("({})", sig4(c.summary.sd)))
            });
        }
    };
    criterion(&mut push, "sup", |f| Some(&f.sup), true);
    criterion(&mut push, "L1", |f| Some(&f.l1), true);
    if with_mre {
        criterion(&mut push, "MRE", |f| f.mre.as_ref(), true);
    }
    criterion(&mut push, "AIC", |f| Some(&f.aic), true);
    criterion(&mut push, "BIC", |f| Some(&f.bic), false);
    let summary = |push: &mut dyn FnMut(&str, &dyn Fn(&FamilyStats) -> String),
                   name: &str,
                   get: fn(&FamilyStats) -> Summary| {
        push(&format!("{name} med."), &|f| sig4(get(f).median));
        push(&format!("{name} sd"), &|f| format!("({})", sig4(get(f).sd)));
    };
    summary(&mut push, "zero b0", |f| f.beta0_zero);
    summary(&mut push, "zero b1", |f| f.beta1_zero);
    push("failures", &|f| f.failures.to_string());
    push("not conv.", &|f| f.not_converged.to_string());
    rows
}

pub fn study_tables(report: &StudyReport, with_mre: bool) -> String {
    let title = match report.study {
        Study::One(c) => format!(
            "Study 1, alpha = {}, n = {}, {} replications, seed {}",
            c.alpha, c.n, c.replications, c.seed
        ),
        Study::Two(c) => format!(
            "Study 2, n = {}, {} replications, knots {}..{}, seed {}",
            c.n, c.replications, c.knot_range.0, c.knot_range.1, c.seed
        ),
    };
    let mut out = format!("{title}\n");
    for g in &report.groups {
        out.push_str(&format!("\n{} ({} replications tallied)\n", g.name, g.tallied));
        let mut header = vec![String::new()];
        header.extend(g.families.iter().map(|f| f.name.clone()));
        out.push_str(&render_table(&header, &group_rows(g, with_mre)));
    }
    out
}
