//! Stage data from CSV.
//!
//! One row per participant with columns `stage`, `center`, `arm`,
//! `x_1` … `x_P` and `y`. `arm` is `intervention`/`control` (or `1`/`0`).
//! Rows of one center must share stage, arm and package; centers keep the
//! order in which they first appear.

use std::collections::HashMap;
use std::io::Read;

use crate::error::{invalid, LagoError, Result};
use crate::model::{Arm, Center, StageRecord};

fn parse_arm(s: &str) -> Option<Arm> {
    match s.trim().to_ascii_lowercase().as_str() {
        "intervention" | "1" | "treatment" => Some(Arm::Intervention),
        "control" | "0" => Some(Arm::Control),
        _ => None,
    }
}

/// Parses participant-level rows into stage records ordered by stage.
/// With `binary` set every `y` must be 0 or 1.
pub fn read_stage_csv<R: Read>(reader: R, binary: bool) -> Result<Vec<StageRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| LagoError::Invalid(format!("csv header: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (stage_i, center_i, arm_i, y_i) = match (col("stage"), col("center"), col("arm"), col("y")) {
        (Some(s), Some(c), Some(a), Some(y)) => (s, c, a, y),
        _ => return invalid("csv needs columns stage, center, arm, x_1..x_P, y"),
    };
    let mut x_cols = Vec::new();
    while let Some(i) = col(&format!("x_{}", x_cols.len() + 1)) {
        x_cols.push(i);
    }
    if x_cols.is_empty() {
        return invalid("csv needs at least one package column x_1");
    }

    struct Acc {
        stage: usize,
        arm: Arm,
        package: Vec<f64>,
        outcomes: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut centers: HashMap<String, Acc> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| LagoError::Invalid(format!("csv row {}: {e}", line + 2)))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LagoError::Invalid(format!("csv row {}: bad number {:?}", line + 2, field(i))))
        };
        let stage: usize = field(stage_i)
            .parse()
            .map_err(|_| LagoError::Invalid(format!("csv row {}: bad stage {:?}", line + 2, field(stage_i))))?;
        let arm = parse_arm(field(arm_i))
            .ok_or_else(|| LagoError::Invalid(format!("csv row {}: bad arm {:?}", line + 2, field(arm_i))))?;
        let package = x_cols.iter().map(|&i| num(i)).collect::<Result<Vec<_>>>()?;
        let y = num(y_i)?;
        let key = format!("{stage}\u{1f}{}", field(center_i));
        match centers.get_mut(&key) {
            Some(acc) => {
                if acc.arm != arm || acc.package != package {
                    return invalid(format!("csv row {}: center changes arm or package within a stage", line + 2));
                }
                acc.outcomes.push(y);
            }
            None => {
                order.push(key.clone());
                centers.insert(key, Acc { stage, arm, package, outcomes: vec![y] });
            }
        }
    }

    let mut by_stage: Vec<(usize, Vec<Center>)> = Vec::new();
    for key in order {
        let acc = &centers[&key];
        let center = if binary {
            Center::binary(acc.arm, acc.package.clone(), &acc.outcomes)?
        } else {
            Center::continuous(acc.arm, acc.package.clone(), &acc.outcomes)?
        };
        match by_stage.iter_mut().find(|(s, _)| *s == acc.stage) {
            Some((_, list)) => list.push(center),
            None => by_stage.push((acc.stage, vec![center])),
        }
    }
    by_stage.sort_by_key(|(s, _)| *s);
    by_stage.into_iter().map(|(stage, centers)| StageRecord::new(stage, centers)).collect()
}
