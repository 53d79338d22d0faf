//! Influent totals: the synthetic generator and CSV ingestion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{SeriesConfig, TotalsConfig};
use crate::error::{Error, Result};

/// One synthetic series over steps `1..=tau`. `stream` separates the noise
/// of different series drawn from the same seed.
pub fn synth_series(cfg: &SeriesConfig, tau: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noise = (cfg.noise_sd > 0.0).then(|| Normal::new(0.0, cfg.noise_sd).expect("finite sd"));
    (1..=tau)
        .map(|n| {
            let t = n as f64;
            let mut v = cfg.mean
                * (1.0
                    + cfg.diurnal_amplitude
                        * (2.0 * std::f64::consts::PI * (t + cfg.diurnal_phase) / cfg.diurnal_period).sin());
            if let Some(at) = cfg.spike_step {
                let z = (t - at as f64) / cfg.spike_width;
                v += cfg.spike_height * (-0.5 * z * z).exp();
            }
            if let Some(d) = &noise {
                v += d.sample(&mut rng);
            }
            v.max(0.0)
        })
        .collect()
}

/// Checks generator parameters; returns `(location, message)` pairs.
pub fn check_series(cfg: &SeriesConfig, loc: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut bad = |field: &str, msg: &str| out.push((format!("{loc}.{field}"), msg.to_string()));
    let finite = |v: f64| v.is_finite();
    if !(finite(cfg.mean) && cfg.mean >= 0.0) {
        bad("mean", "must be finite and nonnegative");
    }
    if !(finite(cfg.diurnal_amplitude) && cfg.diurnal_amplitude >= 0.0) {
        bad("diurnal-amplitude", "must be finite and nonnegative");
    }
    if !(finite(cfg.diurnal_period) && cfg.diurnal_period > 0.0) {
        bad("diurnal-period", "must be positive");
    }
    if !finite(cfg.diurnal_phase) {
        bad("diurnal-phase", "must be finite");
    }
    if !(finite(cfg.spike_height) && cfg.spike_height >= 0.0) {
        bad("spike-height", "must be finite and nonnegative");
    }
    if !(finite(cfg.spike_width) && cfg.spike_width > 0.0) {
        bad("spike-width", "must be positive");
    }
    if !(finite(cfg.noise_sd) && cfg.noise_sd >= 0.0) {
        bad("noise-sd", "must be finite and nonnegative");
    }
    out
}

/// All synthetic series of a totals section, in declaration order.
pub fn synth_totals(cfg: &TotalsConfig, tau: usize) -> Vec<(String, Vec<f64>)> {
    cfg.series
        .iter()
        .enumerate()
        .map(|(k, s)| (s.name.clone(), synth_series(s, tau, cfg.seed, k as u64)))
        .collect()
}

/// A numeric CSV table: header names and one column vector per name.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// Reads a CSV with a header row and numeric cells. A leading `step`
/// column, if present, is kept like any other column.
pub fn read_table(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::parse(1, "header row has an empty column name"));
    }
    if let Some(n) = names.iter().find(|n| n.starts_with('#')) {
        // written back, such a header would read as a comment line
        return Err(Error::parse(1, format!("column name {n:?} starts with '#'")));
    }
    for (k, n) in names.iter().enumerate() {
        if names[..k].contains(n) {
            return Err(Error::parse(1, format!("duplicate column {n:?}")));
        }
    }
    let mut columns = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != names.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(line, format!("column {:?}: {field:?} is not a number", names[k])))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("column {:?}: value must be finite", names[k])));
            }
            columns[k].push(v);
        }
    }
    Ok(Table { names, columns })
}

pub fn write_table(table: &Table) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.names).expect("in-memory write");
    for row in 0..table.rows() {
        w.write_record(table.columns.iter().map(|c| format!("{}", c[row])))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: &str) -> SeriesConfig {
        SeriesConfig {
            name: name.into(),
            mean: 50.0,
            diurnal_amplitude: 0.0,
            diurnal_period: 96.0,
            diurnal_phase: 0.0,
            spike_step: None,
            spike_height: 0.0,
            spike_width: 1.0,
            noise_sd: 0.0,
            values: Vec::new(),
        }
    }

    #[test]
    fn zero_amplitudes_give_constant_totals() {
        assert!(synth_series(&series("a"), 200, 1, 0).iter().all(|&v| v == 50.0));
    }

    #[test]
    fn spike_is_the_maximum() {
        let mut s = series("a");
        s.diurnal_amplitude = 0.2;
        s.spike_step = Some(70);
        s.spike_height = 80.0;
        s.spike_width = 3.0;
        let v = synth_series(&s, 96, 1, 0);
        let argmax = (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        assert_eq!(argmax + 1, 70);
    }

    #[test]
    fn noise_is_seeded() {
        let mut s = series("a");
        s.noise_sd = 2.0;
        assert_eq!(synth_series(&s, 50, 7, 0), synth_series(&s, 50, 7, 0));
        assert_ne!(synth_series(&s, 50, 7, 0), synth_series(&s, 50, 7, 1));
        assert_ne!(synth_series(&s, 50, 7, 0), synth_series(&s, 50, 8, 0));
    }

    #[test]
    fn csv_round_trip_with_1345_rows() {
        let n = 1345;
        let table = Table {
            names: vec!["BOD".into(), "NH4".into()],
            columns: vec![
                (0..n).map(|k| 40.0 + (k as f64 * 0.37).sin()).collect(),
                (0..n).map(|k| 20.0 + k as f64 / 1e3).collect(),
            ],
        };
        let text = write_table(&table);
        let back = read_table(&text).unwrap();
        assert_eq!(back, table);
        assert_eq!(back.column("NH4").unwrap().len(), n);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = read_table("a,b\n1,2\n3,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(read_table("a,a\n1,2\n").is_err());
        assert!(read_table("a,b\n1,2,3\n").is_err());
    }

    #[test]
    fn header_names_that_would_read_back_as_comments_are_rejected() {
        assert!(read_table("  #   \0\n").is_err());
        assert!(read_table("a, #b\n1,2\n").is_err());
    }
}
