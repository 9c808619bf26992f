//! CSV and JSON files.
//!
//! Matrices are stored with observations (or variables, for loadings) as
//! rows, one optional header row, `.` as the decimal separator and 17
//! significant digits so a write-then-read round trip is exact. A first row
//! with any cell that does not parse as a number is taken as the header.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{Matrix, ModelParameters, MultiStudyDataset, Vector};

/// Formats a value with 17 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Reads a numeric matrix and its header, if it has one.
pub fn read_matrix_csv(path: &Path) -> Result<(Matrix, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut header = None;
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if i == 0 && record.iter().any(|c| parse_cell(c).is_none()) {
            header = Some(record.iter().map(|c| c.trim().to_string()).collect::<Vec<_>>());
            ncols = Some(record.len());
            continue;
        }
        if *ncols.get_or_insert(record.len()) != record.len() {
            return Err(Error::Parse(format!(
                "{}: line {} has {} cells, expected {}",
                path.display(),
                i + 1,
                record.len(),
                ncols.unwrap_or(0)
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v = parse_cell(cell).ok_or_else(|| {
                Error::Parse(format!(
                    "{}: line {}, column {}: not a number: {cell:?}",
                    path.display(),
                    i + 1,
                    j + 1
                ))
            })?;
            values.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Ok((Matrix::from_row_slice(nrows, ncols, &values), header))
}

pub fn write_matrix_csv(path: &Path, m: &Matrix, header: Option<&[String]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if let Some(h) = header {
        writer.write_record(h)?;
    }
    for row in m.row_iter() {
        writer.write_record(row.iter().map(|&v| format_value(v)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a vector as a single column.
pub fn write_vector_csv(path: &Path, v: &Vector) -> Result<()> {
    write_matrix_csv(path, &Matrix::from_column_slice(v.len(), 1, v.as_slice()), None)
}

pub fn read_vector_csv(path: &Path) -> Result<Vector> {
    let (m, _) = read_matrix_csv(path)?;
    if m.ncols() != 1 {
        return Err(Error::Parse(format!("{}: expected one column", path.display())));
    }
    Ok(m.column(0).into_owned())
}

/// `X_1.csv, X_2.csv, ...` in `dir`, stopping at the first missing index.
pub fn study_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<PathBuf> = (1..)
        .map(|s| dir.join(format!("X_{s}.csv")))
        .take_while(|p| p.is_file())
        .collect();
    if files.is_empty() {
        return Err(Error::Io(format!("no X_1.csv in {}", dir.display())));
    }
    Ok(files)
}

/// Loads a dataset from one directory of `X_s.csv` files or from a list of
/// study files. Headers, when present, must agree across studies.
pub fn read_dataset(inputs: &[PathBuf]) -> Result<MultiStudyDataset> {
    let files = match inputs {
        [] => return Err(Error::InvalidDataset("no input files".into())),
        [dir] if dir.is_dir() => study_files(dir)?,
        _ => inputs.to_vec(),
    };
    let mut studies = Vec::with_capacity(files.len());
    let mut names: Option<Vec<String>> = None;
    for (s, file) in files.iter().enumerate() {
        let (x, header) = read_matrix_csv(file)?;
        if let Some(h) = header {
            match &names {
                Some(prev) if *prev != h => {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: header differs from the first study",
                        file.display()
                    )))
                }
                None if s > 0 => {
                    return Err(Error::DimensionMismatch(format!(
                        "{}: header present but the first study has none",
                        file.display()
                    )))
                }
                _ => names = Some(h),
            }
        }
        studies.push(x);
    }
    let ids = files
        .iter()
        .map(|f| f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    MultiStudyDataset::with_metadata(studies, names, ids)
}

pub fn write_dataset(dir: &Path, data: &MultiStudyDataset) -> Result<()> {
    for (s, x) in data.studies().iter().enumerate() {
        write_matrix_csv(&dir.join(format!("X_{}.csv", s + 1)), x, data.variable_names())?;
    }
    Ok(())
}

/// Loadings, means and scales as `A.csv`, `B_s.csv`, `mu_s.csv` and
/// `Lambda_s.csv` (vectors as one column). `nu` is not written.
pub fn write_parameters(dir: &Path, params: &ModelParameters) -> Result<()> {
    write_matrix_csv(&dir.join("A.csv"), &params.a, None)?;
    for s in 0..params.n_studies() {
        let k = s + 1;
        write_matrix_csv(&dir.join(format!("B_{k}.csv")), &params.b[s], None)?;
        write_vector_csv(&dir.join(format!("mu_{k}.csv")), &params.mu[s])?;
        write_vector_csv(&dir.join(format!("Lambda_{k}.csv")), &params.lambda[s])?;
    }
    Ok(())
}

/// Counts the studies in a parameter or truth directory by its `B_s.csv`
/// files.
pub fn count_studies(dir: &Path) -> usize {
    (1..).take_while(|s| dir.join(format!("B_{s}.csv")).is_file()).count()
}

pub fn read_parameters(dir: &Path, nu: f64) -> Result<ModelParameters> {
    let n_studies = count_studies(dir);
    if n_studies == 0 {
        return Err(Error::Io(format!("no B_1.csv in {}", dir.display())));
    }
    let (a, _) = read_matrix_csv(&dir.join("A.csv"))?;
    let mut params = ModelParameters {
        mu: Vec::with_capacity(n_studies),
        a,
        b: Vec::with_capacity(n_studies),
        lambda: Vec::with_capacity(n_studies),
        nu,
    };
    for k in 1..=n_studies {
        params.b.push(read_matrix_csv(&dir.join(format!("B_{k}.csv")))?.0);
        params.mu.push(read_vector_csv(&dir.join(format!("mu_{k}.csv")))?);
        params.lambda.push(read_vector_csv(&dir.join(format!("Lambda_{k}.csv")))?);
    }
    params.validate()?;
    Ok(params)
}

/// Factor scores as `F_s.csv` and `H_s.csv`.
pub fn write_scores(dir: &Path, f: &[Matrix], h: &[Matrix]) -> Result<()> {
    for (s, (fs, hs)) in f.iter().zip(h).enumerate() {
        write_matrix_csv(&dir.join(format!("F_{}.csv", s + 1)), fs, None)?;
        write_matrix_csv(&dir.join(format!("H_{}.csv", s + 1)), hs, None)?;
    }
    Ok(())
}

pub fn read_scores(dir: &Path, n_studies: usize) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
    let mut f = Vec::with_capacity(n_studies);
    let mut h = Vec::with_capacity(n_studies);
    for k in 1..=n_studies {
        f.push(read_matrix_csv(&dir.join(format!("F_{k}.csv")))?.0);
        h.push(read_matrix_csv(&dir.join(format!("H_{k}.csv")))?.0);
    }
    Ok((f, h))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}
