//! Output helpers. Floats are written in shortest round-trip form, so equal
//! values always produce equal bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::evolution::TrajectoryRecord;
use crate::spatial::GridFunction;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EnergySeriesRow {
    t: f64,
    l2_sq: f64,
    grad_lp_p: f64,
    hm0_sq: f64,
    wmq_q: f64,
    newton_iters: usize,
}

/// Energy series of a trajectory: `t, l2_sq, grad_lp_p, hm0_sq, wmq_q, newton_iters`.
pub fn write_energy_series(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    let rows: Vec<EnergySeriesRow> = rec
        .times
        .iter()
        .zip(&rec.energies)
        .zip(&rec.newton_iters)
        .map(|((&t, e), &it)| EnergySeriesRow {
            t,
            l2_sq: e.l2_sq,
            grad_lp_p: e.grad_lp_p,
            hm0_sq: e.hm0_sq,
            wmq_q: e.wmq_q,
            newton_iters: it,
        })
        .collect();
    write_csv(path, &rows)
}

/// Node coordinates and values, one row per interior node.
pub fn write_state(path: &Path, u: &GridFunction) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let grid = *u.grid();
    if grid.dim() == 1 {
        w.write_record(["x", "u"])?;
    } else {
        w.write_record(["x", "y", "u"])?;
    }
    for (idx, v) in u.values().iter().enumerate() {
        let x = grid.coords(idx);
        if grid.dim() == 1 {
            w.serialize((x[0], v))?;
        } else {
            w.serialize((x[0], x[1], v))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::Grid;

    #[test]
    fn state_round_trips_through_value_column() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(1, 5).unwrap();
        let u = GridFunction::from_fn(grid, |x| (3.0 * x[0]).sin() / 7.0);
        let path = dir.path().join("u.csv");
        write_state(&path, &u).unwrap();
        let mut rd = csv::Reader::from_path(&path).unwrap();
        let back: Vec<f64> = rd.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
        assert_eq!(back, u.values());
    }

    #[test]
    fn csv_rows_have_header() {
        #[derive(Serialize)]
        struct Row {
            n: u32,
            gap: f64,
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&path, &[Row { n: 2, gap: 0.125 }, Row { n: 4, gap: 0.0625 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "n,gap\n2,0.125\n4,0.0625\n");
    }
}
