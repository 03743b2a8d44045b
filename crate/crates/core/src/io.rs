//! CSV interchange for click records, Wigner maps and density matrices.
//!
//! Every file starts with `#` comment lines (see [`crate::config`]); readers
//! skip them. Floats are written with 17 significant digits so values
//! survive a write/read cycle bit for bit.

use std::io::{Read, Write};

use crate::em::EmTrace;
use crate::fock::DiagonalDistribution;
use crate::measurement::{derive_setting, ClickRecord, DetectorPair};
use crate::wigner::{PhaseGrid, WignerEstimate};
use crate::{CMatrix, Error, Result, C64};

pub const RECORD_COLUMNS: [&str; 13] = [
    "point_index",
    "re_gamma",
    "im_gamma",
    "alpha",
    "re_beta",
    "im_beta",
    "nu_c",
    "nu_d",
    "nu_bar",
    "y",
    "n_runs",
    "n_noclick",
    "freq",
];

pub const WIGNER_COLUMNS: [&str; 7] = [
    "point_index",
    "re_gamma",
    "im_gamma",
    "w_rec",
    "w_exact",
    "w_variance",
    "em_final_loglik",
];

pub const RHO_COLUMNS: [&str; 4] = ["m", "n", "re", "im"];

pub const DISTRIBUTION_COLUMNS: [&str; 5] = ["point_index", "re_gamma", "im_gamma", "n", "r_n"];

pub const TRACE_COLUMNS: [&str; 3] = ["point_index", "iteration", "log_likelihood"];

/// Tolerance when checking stored derived quantities and coordinates.
const CONSISTENCY_TOL: f64 = 1e-9;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Data {
        row,
        message: e.to_string(),
    }
}

fn writer<W: Write>(mut out: W, header: &str, columns: &[&str]) -> Result<csv::Writer<W>> {
    out.write_all(header.as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns).map_err(csv_error)?;
    Ok(w)
}

/// Rows of a CSV body with a fixed column layout, tagged by line number.
fn read_rows<R: Read>(input: R, columns: &[&str]) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.is_empty() {
        return Err(Error::Input("file has no CSV header".into()));
    }
    if headers.iter().collect::<Vec<_>>() != columns {
        return Err(Error::Data {
            row: reader.position().line() as usize,
            message: format!(
                "expected columns {}, found {}",
                columns.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, record));
    }
    Ok(rows)
}

struct Fields<'a> {
    row: usize,
    record: &'a csv::StringRecord,
    columns: &'a [&'a str],
}

impl Fields<'_> {
    fn raw(&self, i: usize) -> &str {
        self.record.get(i).unwrap_or("")
    }

    fn err(&self, i: usize, what: &str) -> Error {
        Error::Data {
            row: self.row,
            message: format!("column {}: {what} {:?}", self.columns[i], self.raw(i)),
        }
    }

    fn f64(&self, i: usize) -> Result<f64> {
        self.raw(i)
            .parse()
            .map_err(|_| self.err(i, "not a number:"))
    }

    fn opt_f64(&self, i: usize) -> Result<Option<f64>> {
        if self.raw(i).is_empty() {
            Ok(None)
        } else {
            self.f64(i).map(Some)
        }
    }

    fn u64(&self, i: usize) -> Result<u64> {
        self.raw(i)
            .parse()
            .map_err(|_| self.err(i, "not a nonnegative integer:"))
    }

    fn data_err(&self, message: String) -> Error {
        Error::Data {
            row: self.row,
            message,
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CONSISTENCY_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Records of one grid point, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecords {
    pub point_index: usize,
    pub gamma: C64,
    pub records: Vec<ClickRecord>,
}

pub fn write_records<W: Write>(out: W, header: &str, points: &[PointRecords]) -> Result<()> {
    let mut w = writer(out, header, &RECORD_COLUMNS)?;
    for point in points {
        for rec in &point.records {
            let s = &rec.setting;
            w.write_record([
                point.point_index.to_string(),
                fmt_f64(point.gamma.re),
                fmt_f64(point.gamma.im),
                fmt_f64(s.alpha()),
                fmt_f64(s.beta().re),
                fmt_f64(s.beta().im),
                fmt_f64(s.detectors().nu_c),
                fmt_f64(s.detectors().nu_d),
                fmt_f64(s.nu_bar()),
                fmt_f64(s.y()),
                rec.n_runs.to_string(),
                rec.n_noclick.to_string(),
                fmt_f64(rec.freq),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a records file, grouping rows by point index (ascending).
pub fn read_records<R: Read>(input: R) -> Result<Vec<PointRecords>> {
    let rows = read_rows(input, &RECORD_COLUMNS)?;
    if rows.is_empty() {
        return Err(Error::Input("records file contains no rows".into()));
    }
    let mut points: Vec<PointRecords> = Vec::new();
    for (row, record) in &rows {
        let f = Fields {
            row: *row,
            record,
            columns: &RECORD_COLUMNS,
        };
        let point_index = f.u64(0)? as usize;
        let gamma = C64::new(f.f64(1)?, f.f64(2)?);
        let detectors =
            DetectorPair::new(f.f64(6)?, f.f64(7)?).map_err(|e| f.data_err(e.to_string()))?;
        let setting = derive_setting(f.f64(3)?, C64::new(f.f64(4)?, f.f64(5)?), detectors)
            .map_err(|e| f.data_err(e.to_string()))?;
        if !close(setting.nu_bar(), f.f64(8)?) || !close(setting.y(), f.f64(9)?) {
            return Err(
                f.data_err("nu_bar or y inconsistent with alpha, beta and efficiencies".into())
            );
        }
        if (setting.gamma() - gamma).norm() > CONSISTENCY_TOL * gamma.norm().max(1.0) {
            return Err(f.data_err(format!(
                "setting realizes gamma = {} but the row targets {gamma}",
                setting.gamma()
            )));
        }
        let (n_runs, n_noclick, freq) = (f.u64(10)?, f.u64(11)?, f.f64(12)?);
        if n_runs == 0 || n_noclick > n_runs || !(0.0..=1.0).contains(&freq) {
            return Err(f.data_err(format!(
                "need 0 <= n_noclick <= n_runs, n_runs >= 1 and freq in [0, 1]; got {n_noclick}/{n_runs}, {freq}"
            )));
        }
        let rec = ClickRecord {
            setting,
            n_runs,
            n_noclick,
            freq,
        };
        match points.iter_mut().find(|p| p.point_index == point_index) {
            Some(p) => {
                if p.gamma != gamma {
                    return Err(
                        f.data_err(format!("point {point_index} listed with two displacements"))
                    );
                }
                p.records.push(rec);
            }
            None => points.push(PointRecords {
                point_index,
                gamma,
                records: vec![rec],
            }),
        }
    }
    points.sort_by_key(|p| p.point_index);
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WignerRow {
    pub point_index: usize,
    pub gamma: C64,
    pub w_rec: f64,
    pub w_exact: Option<f64>,
    pub w_variance: Option<f64>,
    pub em_final_loglik: f64,
}

pub fn write_wigner<W: Write>(out: W, header: &str, rows: &[WignerRow]) -> Result<()> {
    let mut w = writer(out, header, &WIGNER_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.point_index.to_string(),
            fmt_f64(r.gamma.re),
            fmt_f64(r.gamma.im),
            fmt_f64(r.w_rec),
            fmt_opt(r.w_exact),
            fmt_opt(r.w_variance),
            fmt_f64(r.em_final_loglik),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_wigner<R: Read>(input: R) -> Result<Vec<WignerRow>> {
    let rows = read_rows(input, &WIGNER_COLUMNS)?;
    if rows.is_empty() {
        return Err(Error::Input("Wigner file contains no rows".into()));
    }
    rows.iter()
        .map(|(row, record)| {
            let f = Fields {
                row: *row,
                record,
                columns: &WIGNER_COLUMNS,
            };
            Ok(WignerRow {
                point_index: f.u64(0)? as usize,
                gamma: C64::new(f.f64(1)?, f.f64(2)?),
                w_rec: f.f64(3)?,
                w_exact: f.opt_f64(4)?,
                w_variance: f.opt_f64(5)?,
                em_final_loglik: f.f64(6)?,
            })
        })
        .collect()
}

/// Rows of a full scan over `grid`, checked against its nodes.
pub fn wigner_estimate_from_rows(rows: &[WignerRow], grid: PhaseGrid) -> Result<WignerEstimate> {
    grid.validate()?;
    let mut w_values = vec![f64::NAN; grid.len()];
    let mut log_likelihoods = vec![f64::NAN; grid.len()];
    let mut seen = vec![false; grid.len()];
    let has_variance = rows.iter().all(|r| r.w_variance.is_some());
    let mut variance = vec![f64::NAN; grid.len()];
    for (k, r) in rows.iter().enumerate() {
        let i = r.point_index;
        if i >= grid.len() || seen[i] {
            return Err(Error::Data {
                row: k + 1,
                message: format!("point index {i} is out of range or repeated"),
            });
        }
        let node = grid.point(i);
        if !close(node.re, r.gamma.re) || !close(node.im, r.gamma.im) {
            return Err(Error::Data {
                row: k + 1,
                message: format!("point {i} at {} does not match grid node {node}", r.gamma),
            });
        }
        seen[i] = true;
        w_values[i] = r.w_rec;
        log_likelihoods[i] = r.em_final_loglik;
        variance[i] = r.w_variance.unwrap_or(f64::NAN);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Input(format!(
            "Wigner map does not cover the grid; node {missing} is missing"
        )));
    }
    Ok(WignerEstimate {
        grid,
        w_values,
        w_variance: has_variance.then_some(variance),
        r_tables: None,
        log_likelihoods,
        failures: Vec::new(),
    })
}

pub fn write_rho<W: Write>(out: W, header: &str, rho: &CMatrix) -> Result<()> {
    let mut w = writer(out, header, &RHO_COLUMNS)?;
    for m in 0..rho.nrows() {
        for n in 0..rho.ncols() {
            let z = rho[(m, n)];
            w.write_record([m.to_string(), n.to_string(), fmt_f64(z.re), fmt_f64(z.im)])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per photon number of each reconstructed distribution.
pub fn write_distributions<W: Write>(
    out: W,
    header: &str,
    points: &[(usize, &DiagonalDistribution)],
) -> Result<()> {
    let mut w = writer(out, header, &DISTRIBUTION_COLUMNS)?;
    for (index, dist) in points {
        for (n, v) in dist.values.iter().enumerate() {
            w.write_record([
                index.to_string(),
                fmt_f64(dist.gamma.re),
                fmt_f64(dist.gamma.im),
                n.to_string(),
                fmt_f64(*v),
            ])
            .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Log-likelihood per iteration; iteration 0 is the initialization.
pub fn write_traces<W: Write>(out: W, header: &str, traces: &[(usize, &EmTrace)]) -> Result<()> {
    let mut w = writer(out, header, &TRACE_COLUMNS)?;
    for (index, trace) in traces {
        let values = std::iter::once(trace.initial_log_likelihood)
            .chain(trace.log_likelihood.iter().copied());
        for (k, ll) in values.enumerate() {
            w.write_record([index.to_string(), k.to_string(), fmt_f64(ll)])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Square matrix from `(m, n, re, im)` rows; absent entries are zero.
pub fn read_rho<R: Read>(input: R) -> Result<CMatrix> {
    let rows = read_rows(input, &RHO_COLUMNS)?;
    if rows.is_empty() {
        return Err(Error::Input("density-matrix file contains no rows".into()));
    }
    let mut entries = Vec::with_capacity(rows.len());
    let mut dim = 0;
    for (row, record) in &rows {
        let f = Fields {
            row: *row,
            record,
            columns: &RHO_COLUMNS,
        };
        let (m, n) = (f.u64(0)? as usize, f.u64(1)? as usize);
        dim = dim.max(m + 1).max(n + 1);
        entries.push((m, n, C64::new(f.f64(2)?, f.f64(3)?)));
    }
    let mut rho = CMatrix::zeros(dim, dim);
    for (m, n, z) in entries {
        rho[(m, n)] = z;
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{homogeneous, single_detector_schedule};

    fn records() -> Vec<PointRecords> {
        let gamma = C64::new(0.3, -0.7);
        let sched = single_detector_schedule(gamma, 0.05, &homogeneous(0.1, 0.9, 4)).unwrap();
        vec![PointRecords {
            point_index: 2,
            gamma,
            records: sched
                .settings
                .iter()
                .map(|s| ClickRecord::exact(*s, 0.123_456_789_012_345_67, 1000).unwrap())
                .collect(),
        }]
    }

    #[test]
    fn records_round_trip_bit_exact() {
        let mut buf = Vec::new();
        write_records(&mut buf, "# test\n", &records()).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, records());
    }

    #[test]
    fn malformed_row_names_its_line() {
        let mut buf = Vec::new();
        write_records(&mut buf, "# test\n## seed = 1\n", &records()).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("1000,", "abc,", 2);
        match read_records(text.as_bytes()) {
            Err(Error::Data { row, message }) => {
                assert_eq!(row, 4, "{message}");
                assert!(message.contains("n_runs"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_files_are_rejected() {
        assert!(matches!(read_records("".as_bytes()), Err(Error::Input(_))));
        let header_only = RECORD_COLUMNS.join(",") + "\n";
        assert!(matches!(
            read_records(header_only.as_bytes()),
            Err(Error::Input(_))
        ));
        assert!(read_records("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn inconsistent_setting_is_rejected() {
        let mut buf = Vec::new();
        write_records(&mut buf, "", &records()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cols: Vec<String> = lines[1].split(',').map(String::from).collect();
        cols[9] = "-0.5".into();
        lines[1] = cols.join(",");
        assert!(matches!(
            read_records(lines.join("\n").as_bytes()),
            Err(Error::Data { row: 2, .. })
        ));
    }

    #[test]
    fn wigner_round_trip_and_grid_check() {
        let grid = PhaseGrid::square(-1.0, 1.0, 2).unwrap();
        let rows: Vec<WignerRow> = (0..4)
            .map(|i| WignerRow {
                point_index: i,
                gamma: grid.point(i),
                w_rec: 0.1 * i as f64 - 0.05,
                w_exact: (i % 2 == 0).then_some(0.3),
                w_variance: None,
                em_final_loglik: -1234.5,
            })
            .collect();
        let mut buf = Vec::new();
        write_wigner(&mut buf, "# w\n", &rows).unwrap();
        let back = read_wigner(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let est = wigner_estimate_from_rows(&back, grid).unwrap();
        assert_eq!(est.w_values[3], rows[3].w_rec);
        assert!(est.w_variance.is_none());
        assert!(wigner_estimate_from_rows(&back[..3], grid).is_err());
        let shifted = PhaseGrid::square(-1.0, 1.2, 2).unwrap();
        assert!(wigner_estimate_from_rows(&back, shifted).is_err());
    }

    #[test]
    fn rho_round_trip() {
        let rho = CMatrix::from_fn(3, 3, |m, n| C64::new(m as f64 * 0.1, n as f64 * -0.2));
        let mut buf = Vec::new();
        write_rho(&mut buf, "", &rho).unwrap();
        assert_eq!(read_rho(buf.as_slice()).unwrap(), rho);
    }
}
