use std::fmt::Write;

use super::{Cmp, MilpModel, Sense, VarKind};

fn num(x: f64) -> String {
    format!("{x:.9}")
}

fn term(out: &mut String, coef: f64, name: &str, first: bool) {
    if coef < 0.0 {
        let _ = write!(out, " - {} {}", num(-coef), name);
    } else if first {
        let _ = write!(out, " {} {}", num(coef), name);
    } else {
        let _ = write!(out, " + {} {}", num(coef), name);
    }
}

/// Renders `model` in CPLEX LP format. Names are sanitized to `[A-Za-z0-9_]`
/// and suffixed with their index so they stay unique.
pub fn to_lp_format(model: &MilpModel) -> String {
    let names: Vec<String> = model
        .vars
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let clean: String = v
                .name
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                .collect();
            format!("v{i}_{clean}")
        })
        .collect();

    let mut out = String::new();
    out.push_str(match model.sense {
        Sense::Maximize => "Maximize\n",
        Sense::Minimize => "Minimize\n",
    });
    out.push_str(" obj:");
    let mut first = true;
    for (j, &c) in model.objective.iter().enumerate() {
        if c != 0.0 {
            term(&mut out, c, &names[j], first);
            first = false;
        }
    }
    if first {
        out.push_str(" 0");
    }
    out.push_str("\nSubject To\n");
    for (i, row) in model.constraints.iter().enumerate() {
        let _ = write!(out, " c{i}:");
        let mut first = true;
        for &(v, c) in &row.terms {
            term(&mut out, c, &names[v.0], first);
            first = false;
        }
        if first {
            let _ = write!(out, " 0 {}", names.first().map_or("x", String::as_str));
        }
        let op = match row.cmp {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        };
        let _ = writeln!(out, " {op} {}", num(row.rhs));
    }
    out.push_str("Bounds\n");
    for (v, name) in model.vars.iter().zip(&names) {
        let _ = writeln!(out, " {} <= {} <= {}", num(v.lower), name, num(v.upper));
    }
    let binaries: Vec<&str> = model
        .vars
        .iter()
        .zip(&names)
        .filter(|(v, _)| v.kind == VarKind::Binary)
        .map(|(_, n)| n.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for name in binaries {
            let _ = writeln!(out, " {name}");
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_fixed_point() {
        let mut m = MilpModel::new(Sense::Maximize);
        let a = m.add_binary("a[1]");
        let x = m.add_continuous("x", 0.0, 2.5);
        m.set_objective(a, 5.0);
        m.set_objective(x, -1.0 / 3.0);
        m.add_constraint("r", vec![(a, 1.0), (x, 1.0)], Cmp::Le, 1.0);
        let lp = to_lp_format(&m);
        assert!(lp.contains(" obj: 5.000000000 v0_a_1_ - 0.333333333 v1_x"));
        assert!(lp.contains(" c0: 1.000000000 v0_a_1_ + 1.000000000 v1_x <= 1.000000000"));
        assert!(lp.contains("Binaries\n v0_a_1_\n"));
        assert!(lp.ends_with("End\n"));
    }
}
