//! Versioned CSV for episode logs and recordings.

use std::io::{Read, Write};

use super::episode::LogRow;
use crate::data::{Recording, Sample};
use crate::error::{ensure, Error, Result};

pub const EPISODE_VERSION: &str = "# steerlab-episode v1";
pub const RECORDING_VERSION: &str = "# steerlab-recording v1";

pub const EPISODE_COLUMNS: [&str; 10] = [
    "t",
    "s",
    "x",
    "y",
    "heading",
    "speed",
    "cmd_deg",
    "eff_deg",
    "deviation_m",
    "crash_flag",
];

fn io_err(e: std::io::Error) -> Error {
    Error::io("<csv stream>", e)
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn write_version(w: &mut impl Write, line: &str) -> Result<()> {
    writeln!(w, "{line}").map_err(io_err)
}

fn row_fields(r: &LogRow) -> [String; 10] {
    [
        fmt(r.t),
        fmt(r.s),
        fmt(r.x),
        fmt(r.y),
        fmt(r.heading),
        fmt(r.speed),
        fmt(r.cmd_deg),
        fmt(r.eff_deg),
        fmt(r.deviation_m),
        u8::from(r.crash).to_string(),
    ]
}

pub fn write_episode_csv(mut w: impl Write, rows: &[LogRow]) -> Result<()> {
    write_version(&mut w, EPISODE_VERSION)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(EPISODE_COLUMNS)?;
    for r in rows {
        out.write_record(row_fields(r))?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

fn reader(r: impl Read, version: &str) -> Result<csv::Reader<std::io::BufReader<impl Read>>> {
    use std::io::BufRead;
    let mut buf = std::io::BufReader::new(r);
    let mut first = String::new();
    buf.read_line(&mut first).map_err(io_err)?;
    ensure!(
        first.trim_end() == version,
        Data,
        "expected header {version:?}, found {:?}",
        first.trim_end()
    );
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(buf))
}

fn parse(field: Option<&str>, name: &str) -> Result<f64> {
    let f = field.ok_or_else(|| Error::Data(format!("missing column {name}")))?;
    f.parse().map_err(|_| Error::Data(format!("bad number {f:?} in column {name}")))
}

pub fn read_episode_csv(r: impl Read) -> Result<Vec<LogRow>> {
    let mut rd = reader(r, EPISODE_VERSION)?;
    let headers = rd.headers()?.clone();
    ensure!(
        headers.iter().eq(EPISODE_COLUMNS.iter().copied()),
        Data,
        "unexpected episode columns {headers:?}"
    );
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v = |i: usize| parse(rec.get(i), EPISODE_COLUMNS[i]);
        rows.push(LogRow {
            t: v(0)?,
            s: v(1)?,
            x: v(2)?,
            y: v(3)?,
            heading: v(4)?,
            speed: v(5)?,
            cmd_deg: v(6)?,
            eff_deg: v(7)?,
            deviation_m: v(8)?,
            crash: v(9)? != 0.0,
        });
    }
    Ok(rows)
}

/// Episode columns (cmd = label, deviation 0) followed by
/// `label_deg, fork_window, track_seed, obs_0 ..`.
pub fn write_recording_csv(mut w: impl Write, rec: &Recording) -> Result<()> {
    write_version(&mut w, RECORDING_VERSION)?;
    let mut out = csv::Writer::from_writer(w);
    let dim = rec.samples.first().map_or(0, |s| s.observation.len());
    let mut header: Vec<String> = EPISODE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(["label_deg", "fork_window", "track_seed"].map(String::from));
    header.extend((0..dim).map(|i| format!("obs_{i}")));
    out.write_record(&header)?;
    for s in &rec.samples {
        let row = LogRow {
            t: s.t,
            s: s.s,
            x: s.x,
            y: s.y,
            heading: s.heading,
            speed: s.speed,
            cmd_deg: s.label,
            eff_deg: s.eff_deg,
            deviation_m: 0.0,
            crash: false,
        };
        let mut fields: Vec<String> = row_fields(&row).into();
        fields.push(fmt(s.label));
        fields.push(u8::from(s.fork_window).to_string());
        fields.push(rec.track_seed.to_string());
        fields.extend(s.observation.iter().map(|&v| fmt(v)));
        out.write_record(&fields)?;
    }
    out.flush().map_err(io_err)?;
    Ok(())
}

pub fn read_recording_csv(r: impl Read, dt: f64) -> Result<Recording> {
    let mut rd = reader(r, RECORDING_VERSION)?;
    let headers = rd.headers()?.clone();
    ensure!(
        headers.len() >= 13 && headers.iter().take(10).eq(EPISODE_COLUMNS.iter().copied()),
        Data,
        "unexpected recording columns"
    );
    let dim = headers.len() - 13;
    let mut samples = Vec::new();
    let mut seed = 0;
    for rec in rd.records() {
        let rec = rec?;
        let v = |i: usize| parse(rec.get(i), headers.get(i).unwrap_or("?"));
        seed = rec
            .get(12)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Data("bad track_seed".into()))?;
        samples.push(Sample {
            t: v(0)?,
            s: v(1)?,
            x: v(2)?,
            y: v(3)?,
            heading: v(4)?,
            speed: v(5)?,
            eff_deg: v(7)?,
            label: v(10)?,
            fork_window: v(11)? != 0.0,
            observation: (0..dim).map(|i| v(13 + i)).collect::<Result<_>>()?,
        });
    }
    let rec = Recording {
        track_seed: seed,
        dt,
        samples,
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_round_trip_is_exact() {
        let rows = vec![
            LogRow {
                t: 0.0,
                s: 0.1,
                x: 1.0 / 3.0,
                y: -2.5e-7,
                heading: 0.3,
                speed: 11.2,
                cmd_deg: -4.0,
                eff_deg: -3.9,
                deviation_m: 0.01,
                crash: false,
            },
            LogRow {
                t: 0.1,
                crash: true,
                deviation_m: 2.2,
                ..LogRow {
                    t: 0.0,
                    s: 0.2,
                    x: 0.0,
                    y: 0.0,
                    heading: 0.0,
                    speed: 1.0,
                    cmd_deg: 0.0,
                    eff_deg: 0.0,
                    deviation_m: 0.0,
                    crash: false,
                }
            },
        ];
        let mut buf = Vec::new();
        write_episode_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(EPISODE_VERSION));
        assert!(text.lines().nth(1).unwrap() == EPISODE_COLUMNS.join(","));
        assert_eq!(read_episode_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_episode_csv(&b"t,s\n1,2\n"[..]).is_err());
    }

    #[test]
    fn recording_round_trip_is_exact() {
        let rec = Recording {
            track_seed: 42,
            dt: 0.1,
            samples: (0..3)
                .map(|i| Sample {
                    t: i as f64 * 0.1,
                    s: i as f64,
                    x: 0.5,
                    y: 0.25,
                    heading: 0.1,
                    speed: 9.0,
                    eff_deg: 1.5,
                    label: 2.0 + i as f64,
                    fork_window: i == 1,
                    observation: vec![0.1, 0.2, 9.0],
                })
                .collect(),
        };
        let mut buf = Vec::new();
        write_recording_csv(&mut buf, &rec).unwrap();
        assert_eq!(read_recording_csv(buf.as_slice(), 0.1).unwrap(), rec);
    }
}
