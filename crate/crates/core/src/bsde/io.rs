//! Binary persistence for backward solutions.
//!
//! Same conventions as the path-ensemble format (little-endian integers and
//! floats behind a magic/version header), with its own magic so the two file
//! kinds cannot be confused:
//!
//! ```text
//! magic "PPDS" | version u32 | d_psi u32 | n_steps u32 | n_paths u64
//! iterations u32 | converged u8 | lambda f64 | bracket bound f64
//! start stats (2 f64) | start z SE (d_psi f64)
//! times (n_steps+1 f64) | clock weights (n_steps f64)
//! y (n_paths*(n_steps+1) f64) | z (n_paths*n_steps*d_psi f64)
//! m  (n_paths*n_steps f64)
//! n_iter_records u32 | distances | ratios(n-1) | driver_norms
//! slice y msd (n_iter_records * n_steps f64) | slice m msd (same)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::bsde::picard::BsdeSolution;
use crate::error::{CoreError, Result};
use crate::forward::binfmt::{read_f64s, read_u32, read_u64, write_f64s};
use crate::grid::TimeGrid;

pub const SOLUTION_MAGIC: [u8; 4] = *b"PPDS";
pub const SOLUTION_VERSION: u32 = 1;

pub fn write_solution(sol: &BsdeSolution, w: &mut impl Write) -> Result<()> {
    let grid = sol.grid();
    w.write_all(&SOLUTION_MAGIC)?;
    w.write_all(&SOLUTION_VERSION.to_le_bytes())?;
    w.write_all(&(sol.d_psi as u32).to_le_bytes())?;
    w.write_all(&(sol.n_steps as u32).to_le_bytes())?;
    w.write_all(&(sol.n_paths as u64).to_le_bytes())?;
    w.write_all(&(sol.iterations as u32).to_le_bytes())?;
    w.write_all(&[sol.converged as u8])?;
    write_f64s(w, &[sol.lambda, sol.psi_bracket_bound])?;
    write_f64s(w, &[sol.start_target_mean, sol.start_target_se])?;
    write_f64s(w, &sol.start_z_se)?;
    write_f64s(w, grid.times())?;
    write_f64s(w, grid.dv_weights())?;
    write_f64s(w, &sol.y)?;
    write_f64s(w, &sol.z)?;
    write_f64s(w, &sol.m_increments)?;
    let records = sol.distances.len();
    w.write_all(&(records as u32).to_le_bytes())?;
    write_f64s(w, &sol.distances)?;
    write_f64s(w, &sol.ratios)?;
    write_f64s(w, &sol.driver_norms)?;
    for msd in &sol.slice_y_msd {
        write_f64s(w, msd)?;
    }
    for msd in &sol.slice_m_msd {
        write_f64s(w, msd)?;
    }
    Ok(())
}

pub fn read_solution(r: &mut impl Read) -> Result<BsdeSolution> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != SOLUTION_MAGIC {
        return Err(CoreError::Config(format!(
            "bad magic {magic:?}, not a solution file"
        )));
    }
    let version = read_u32(r)?;
    if version != SOLUTION_VERSION {
        return Err(CoreError::Config(format!(
            "solution format version {version}, this build reads {SOLUTION_VERSION}"
        )));
    }
    let d_psi = read_u32(r)? as usize;
    let n_steps = read_u32(r)? as usize;
    let n_paths = read_u64(r)? as usize;
    let iterations = read_u32(r)? as usize;
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let converged = flag[0] != 0;
    if d_psi == 0 || n_steps == 0 || n_paths == 0 {
        return Err(CoreError::Config("solution header has a zero dimension".into()));
    }
    let head = read_f64s(r, 2)?;
    let (lambda, psi_bracket_bound) = (head[0], head[1]);
    let start = read_f64s(r, 2)?;
    let start_z_se = read_f64s(r, d_psi)?;
    let times = read_f64s(r, n_steps + 1)?;
    let dv = read_f64s(r, n_steps)?;
    let y = read_f64s(r, n_paths * (n_steps + 1))?;
    let z = read_f64s(r, n_paths * n_steps * d_psi)?;
    let m_increments = read_f64s(r, n_paths * n_steps)?;
    let records = read_u32(r)? as usize;
    let distances = read_f64s(r, records)?;
    let ratios = read_f64s(r, records.saturating_sub(1))?;
    let driver_norms = read_f64s(r, records)?;
    let mut slice_y_msd = Vec::with_capacity(records);
    for _ in 0..records {
        slice_y_msd.push(read_f64s(r, n_steps)?);
    }
    let mut slice_m_msd = Vec::with_capacity(records);
    for _ in 0..records {
        slice_m_msd.push(read_f64s(r, n_steps)?);
    }
    let grid = TimeGrid::from_times(times)?.with_clock_weights(dv)?;
    Ok(BsdeSolution {
        n_paths,
        n_steps,
        d_psi,
        grid,
        y,
        z,
        m_increments,
        lambda,
        psi_bracket_bound,
        distances,
        ratios,
        driver_norms,
        slice_y_msd,
        slice_m_msd,
        start_target_mean: start[0],
        start_target_se: start[1],
        start_z_se,
        converged,
        iterations,
    })
}

pub fn write_solution_file(sol: &BsdeSolution, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_solution(sol, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_solution_file(path: &Path) -> Result<BsdeSolution> {
    let mut r = BufReader::new(File::open(path)?);
    read_solution(&mut r)
}

pub fn write_slice_csv_file(sol: &BsdeSolution, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    sol.write_slice_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics_json_file(sol: &BsdeSolution, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    sol.write_diagnostics_json(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::basis::RegressionBasis;
    use crate::bsde::picard::{picard_solve, psi_martingale_increments, PicardConfig};
    use crate::bsde::types::{DriverSpec, TerminalSpec};
    use crate::forward::{simulate_diffusion, DiffusionModel};
    use crate::operators::PsiSystem;
    use std::sync::Arc;

    fn sample_solution() -> BsdeSolution {
        let model = DiffusionModel::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let ens = simulate_diffusion(&model, 0.0, &[0.3], &grid, 300, 5).unwrap();
        let system = PsiSystem::coordinates(&model);
        let psi = psi_martingale_increments(&ens, &system).unwrap();
        let driver = DriverSpec::new(
            Arc::new(|_, _: &[f64], y, _: &[f64]| -y),
            1.0,
            0.0,
            0.0,
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let terminal =
            TerminalSpec::with_polynomial_growth(Arc::new(|x: &[f64]| x[0] * x[0]), 2.0, 2)
                .unwrap();
        let cfg = PicardConfig { basis: RegressionBasis { degree: 3, ..Default::default() }, ..Default::default() };
        picard_solve(&ens, &psi, &driver, &terminal, &cfg).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let sol = sample_solution();
        let mut buf = Vec::new();
        write_solution(&sol, &mut buf).unwrap();
        assert_eq!(&buf[0..4], b"PPDS");
        let back = read_solution(&mut buf.as_slice()).unwrap();
        assert_eq!(back.n_paths, sol.n_paths);
        assert_eq!(back.y, sol.y);
        assert_eq!(back.z, sol.z);
        assert_eq!(back.m_increments, sol.m_increments);
        assert_eq!(back.distances, sol.distances);
        assert_eq!(back.ratios, sol.ratios);
        assert_eq!(back.driver_norms, sol.driver_norms);
        assert_eq!(back.slice_y_msd, sol.slice_y_msd);
        assert_eq!(back.slice_m_msd, sol.slice_m_msd);
        assert_eq!(back.lambda, sol.lambda);
        assert_eq!(back.converged, sol.converged);
        assert_eq!(back.iterations, sol.iterations);
        assert_eq!(back.grid().times(), sol.grid().times());
        assert_eq!(back.start_target_mean, sol.start_target_mean);
        assert_eq!(back.start_z_se, sol.start_z_se);
    }

    #[test]
    fn file_round_trip_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let sol = sample_solution();
        let bin = dir.path().join("solution.ppds");
        write_solution_file(&sol, &bin).unwrap();
        let back = read_solution_file(&bin).unwrap();
        assert_eq!(back.y, sol.y);

        let csv_path = dir.path().join("slices.csv");
        write_slice_csv_file(&sol, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("t,mean_y,se_y,mean_z_norm"));

        let json_path = dir.path().join("diag.json");
        write_diagnostics_json_file(&sol, &json_path).unwrap();
        let diag: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert!(diag["iterations"].as_u64().unwrap() >= 2);
    }

    #[test]
    fn ensemble_magic_is_rejected() {
        let model = DiffusionModel::brownian(1).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let ens = simulate_diffusion(&model, 0.0, &[0.0], &grid, 5, 1).unwrap();
        let mut buf = Vec::new();
        crate::forward::binfmt::write_ensemble(&ens, &mut buf).unwrap();
        let err = read_solution(&mut buf.as_slice());
        assert!(matches!(err, Err(CoreError::Config(_))));
    }
}
