//! Side-by-side comparison of two trained maps on the same test set. No
//! winner is declared; the table reports per-map transport cost and
//! pushforward fidelity against the target samples.

use monge_core::costs::CostSpec;
use monge_core::oracles::discrete_ot_exact;
use monge_core::solver::{pad_source, Batch, TrainedMap};
use monge_core::{Error, Result, Tensor};

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub name: String,
    pub transport_cost: f64,
    pub pushforward_fidelity: f64,
}

const FIDELITY_N: usize = 512;

fn score(
    name: &str,
    map: &TrainedMap,
    x_test: &Batch,
    y_test: &Tensor,
    cost: &CostSpec,
) -> Result<CompareRow> {
    let pushed = map.apply(&x_test.points, x_test.labels.as_deref())?;
    let x_cost = match map.pad_to {
        Some(m) => pad_source(&x_test.points, m)?,
        None => x_test.points.clone(),
    };
    let mut acc = 0.0;
    for k in 0..x_cost.rows() {
        acc += cost.eval(x_cost.row(k), pushed.row(k), None)?;
    }
    let transport_cost = acc / x_cost.rows() as f64;

    let n = pushed.rows().min(y_test.rows()).min(FIDELITY_N);
    let quad = CostSpec::quadratic(pushed.cols());
    let fidelity = discrete_ot_exact(&pushed.head_rows(n), &y_test.head_rows(n), &quad)?.cost;

    Ok(CompareRow {
        name: name.to_string(),
        transport_cost,
        pushforward_fidelity: fidelity,
    })
}

pub fn compare_maps(
    a: (&str, &TrainedMap),
    b: (&str, &TrainedMap),
    x_test: &Batch,
    y_test: &Tensor,
    cost: &CostSpec,
) -> Result<Vec<CompareRow>> {
    if x_test.is_empty() {
        return Err(Error::Empty("comparison test set"));
    }
    if a.1.spec.input_dim != b.1.spec.input_dim || a.1.spec.output_dim != b.1.spec.output_dim {
        return Err(Error::InvalidConfig(
            "maps being compared must share input/output dimensions".into(),
        ));
    }
    Ok(vec![
        score(a.0, a.1, x_test, y_test, cost)?,
        score(b.0, b.1, x_test, y_test, cost)?,
    ])
}

pub fn rows_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("map,transport_cost,pushforward_fidelity\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.name, r.transport_cost, r.pushforward_fidelity
        ));
    }
    out
}
