//! JSON Lines corpus format, one session per line:
//!
//! ```text
//! {"user_id":3,"group":"bd1","hdrs":12,"label":1,"alpha":[[f,f,f,f],...],"special":[[0,1,0,0,0,0],...],"accel":[[f,f,f],...]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Group, Label, SessionSample};
use crate::encoder::{ViewKind, ViewSequence};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    user_id: u32,
    group: Group,
    hdrs: u32,
    label: u8,
    alpha: Vec<[f64; 4]>,
    special: Vec<[u8; 6]>,
    accel: Vec<[f64; 3]>,
}

impl From<&SessionSample> for Record {
    fn from(s: &SessionSample) -> Self {
        Record {
            user_id: s.user_id,
            group: s.group,
            hdrs: s.hdrs,
            label: s.label.class_index() as u8,
            alpha: s
                .alphanumeric
                .steps()
                .map(|x| [x[0], x[1], x[2], x[3]])
                .collect(),
            special: s
                .special
                .steps()
                .map(|x| std::array::from_fn(|i| u8::from(x[i] != 0.0)))
                .collect(),
            accel: s.accelerometer.steps().map(|x| [x[0], x[1], x[2]]).collect(),
        }
    }
}

impl Record {
    fn into_sample(self, id: usize) -> Result<SessionSample> {
        let label = Label::from_class_index(usize::from(self.label))
            .ok_or_else(|| Error::Data(format!("label must be 0 or 1, got {}", self.label)))?;
        if self.special.iter().flatten().any(|&v| v > 1) {
            return Err(Error::Data("special view entries must be 0 or 1".into()));
        }
        let sample = SessionSample {
            id,
            user_id: self.user_id,
            group: self.group,
            hdrs: self.hdrs,
            label,
            alphanumeric: ViewSequence::from_flat(
                ViewKind::Alphanumeric,
                self.alpha.into_iter().flatten().collect(),
            )?,
            special: ViewSequence::from_flat(
                ViewKind::Special,
                self.special.into_iter().flatten().map(f64::from).collect(),
            )?,
            accelerometer: ViewSequence::from_flat(
                ViewKind::Accelerometer,
                self.accel.into_iter().flatten().collect(),
            )?,
        };
        sample.validate()?;
        Ok(sample)
    }
}

pub fn write_dataset<W: Write>(writer: W, samples: &[SessionSample]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for s in samples {
        serde_json::to_writer(&mut w, &Record::from(s)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus; sample ids are line positions among non-blank lines.
pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<SessionSample>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let id = out.len();
        let sample = record.into_sample(id).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn save_dataset(samples: &[SessionSample], path: impl AsRef<Path>) -> Result<()> {
    write_dataset(File::create(path)?, samples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SessionSample>> {
    read_dataset(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_cohort, generate_synthetic, GeneratorConfig};

    fn corpus() -> Vec<SessionSample> {
        let cfg = GeneratorConfig {
            sessions_per_user: 5,
            ..GeneratorConfig::default().with_users(4)
        };
        generate_synthetic(&default_cohort(&cfg, 5).unwrap(), &cfg, 5).unwrap()
    }

    #[test]
    fn round_trip() {
        let samples = corpus();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), samples.len());
        assert!(text.starts_with("{\"user_id\":0,\"group\":\"normal\",\"hdrs\":"));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn empty_file() {
        assert!(read_dataset(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_names_line_number() {
        let samples = corpus();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &samples[..2]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated = format!("{}{}", text, &text[..text.len() / 3]);
        match read_dataset(truncated.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_label_rejected() {
        let line = r#"{"user_id":0,"group":"normal","hdrs":9,"label":0,"alpha":[[0.1,0.2,0.0,0.0]],"special":[[0,1,0,0,0,0]],"accel":[[0.0,0.5,0.8]]}"#;
        assert!(matches!(read_dataset(line.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
