//! File writers. Every floating-point number goes out as `{:.16e}`, which
//! parses back to the identical `f64`.

use std::fs;
use std::path::Path;

use serde::Serialize;
use xtfc_hjb::train::LossRecord;
use xtfc_hjb::Trajectory;

use crate::error::{CliError, CliResult};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// `epoch,loss,stage,lr`; `lr` is NaN outside the Adam stage.
pub fn write_loss_history(path: &Path, history: &[LossRecord]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "loss", "stage", "lr"])?;
    for r in history {
        w.write_record([r.epoch.to_string(), num(r.loss), r.stage.name().to_string(), num(r.lr)])?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// `t,x1..xn,u1..um,cost_so_far`
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> CliResult<()> {
    let (n, m) = (traj.states.ncols(), traj.controls.ncols());
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.push("cost_so_far".into());
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let mut row = vec![num(traj.times[k])];
        row.extend(traj.states.row(k).iter().map(|&v| num(v)));
        row.extend(traj.controls.row(k).iter().map(|&v| num(v)));
        row.push(num(traj.cost_so_far[k]));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// One evaluated grid node.
pub struct GridRow {
    pub x: Vec<f64>,
    pub value: f64,
    pub exact: Option<f64>,
}

/// `x1..xn,v_xtfc,v_exact,abs_error`; the last two are empty without a
/// closed form.
pub fn write_grid(path: &Path, rows: &[GridRow]) -> CliResult<()> {
    let n = rows.first().map_or(0, |r| r.x.len());
    let mut w = writer(path)?;
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["v_xtfc", "v_exact", "abs_error"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut row: Vec<String> = r.x.iter().map(|&v| num(v)).collect();
        row.push(num(r.value));
        match r.exact {
            Some(e) => {
                row.push(num(e));
                row.push(num((r.value - e).abs()));
            }
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// `name,neurons,final_loss`
pub fn write_sweep_summary(path: &Path, rows: &[(String, usize, f64)]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["name", "neurons", "final_loss"])?;
    for (name, neurons, loss) in rows {
        w.write_record([name.clone(), neurons.to_string(), num(*loss)])?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}
