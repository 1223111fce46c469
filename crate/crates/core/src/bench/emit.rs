use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{BenchError, OutputFormat};

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io(format!("{}: {e}", path.display()))
}

/// Writes `records` as JSONL (one object per line) or CSV (header plus one
/// row each; absent optionals are empty cells). Reals use the shortest
/// representation that parses back to the same value.
pub fn emit<R: Serialize + DeserializeOwned>(records: &[R], path: impl AsRef<Path>, format: OutputFormat) -> Result<(), BenchError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    match format {
        OutputFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for r in records {
                serde_json::to_writer(&mut w, r).map_err(|e| io_err(path, e))?;
                w.write_all(b"\n").map_err(|e| io_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            if records.is_empty() {
                w.write_record(field_names::<R>()).map_err(|e| io_err(path, e))?;
            }
            for r in records {
                w.serialize(r).map_err(|e| io_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))
        }
    }
}

pub fn read_records<R: DeserializeOwned>(path: impl AsRef<Path>, format: OutputFormat) -> Result<Vec<R>, BenchError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    match format {
        OutputFormat::Jsonl => BufReader::new(file)
            .lines()
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|(i, line)| {
                let line = line.map_err(|e| io_err(path, e))?;
                serde_json::from_str(&line).map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))
            })
            .collect(),
        OutputFormat::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(|e| io_err(path, e)))
            .collect(),
    }
}

/// Struct field names of `R`, recovered by a serde pass over a dummy
/// deserializer.
fn field_names<R: DeserializeOwned>() -> Vec<&'static str> {
    struct Names(Vec<&'static str>);
    #[derive(Debug)]
    struct Stop;
    impl std::fmt::Display for Stop {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("stop")
        }
    }
    impl std::error::Error for Stop {}
    impl serde::de::Error for Stop {
        fn custom<T: std::fmt::Display>(_: T) -> Self {
            Stop
        }
    }
    impl<'de> serde::Deserializer<'de> for &mut Names {
        type Error = Stop;
        fn deserialize_any<V: serde::de::Visitor<'de>>(self, _: V) -> Result<V::Value, Stop> {
            Err(Stop)
        }
        fn deserialize_struct<V: serde::de::Visitor<'de>>(
            self,
            _: &'static str,
            fields: &'static [&'static str],
            _: V,
        ) -> Result<V::Value, Stop> {
            self.0.extend_from_slice(fields);
            Err(Stop)
        }
        serde::forward_to_deserialize_any! {
            bool i8 i16 i32 i64 i128 u8 u16 u32 u64 u128 f32 f64 char str string bytes byte_buf option unit
            unit_struct newtype_struct seq tuple tuple_struct map enum identifier ignored_any
        }
    }
    let mut names = Names(Vec::new());
    let _ = R::deserialize(&mut names);
    names.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{MetricRecord, RecordKind};
    use crate::optim::GuardEvent;

    fn sample() -> Vec<MetricRecord> {
        let mut a = MetricRecord::new(RecordKind::Step, 1, 1, 0.125);
        a.train_loss = Some(0.1 + 0.2);
        a.alpha = Some(1.0 / 3.0);
        a.lambda = Some(1e-8);
        a.rho = Some(-2.5e-300);
        a.guard_event = Some(GuardEvent::NonConvexDirection);
        let mut b = MetricRecord::new(RecordKind::Eval, 1, 1, 0.25);
        b.train_loss = Some(std::f64::consts::PI);
        b.val_loss = Some(1e308);
        b.val_acc = Some(0.875);
        vec![a, b]
    }

    #[test]
    fn round_trips_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        for (name, fmt) in [("r.jsonl", OutputFormat::Jsonl), ("r.csv", OutputFormat::Csv)] {
            let path = dir.path().join(name);
            emit(&sample(), &path, fmt).unwrap();
            assert_eq!(read_records::<MetricRecord>(&path, fmt).unwrap(), sample());
        }
    }

    #[test]
    fn empty_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("e.jsonl");
        emit::<MetricRecord>(&[], &j, OutputFormat::Jsonl).unwrap();
        assert_eq!(std::fs::read_to_string(&j).unwrap(), "");
        let c = dir.path().join("e.csv");
        emit::<MetricRecord>(&[], &c, OutputFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("kind,step,epoch,wall_time_s,train_loss,"));
        assert!(read_records::<MetricRecord>(&c, OutputFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn keys_and_enum_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.jsonl");
        emit(&sample()[..1], &path, OutputFormat::Jsonl).unwrap();
        let v: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&path).unwrap().trim()).unwrap();
        assert_eq!(v["guard_event"], "NonConvexDirection");
        assert_eq!(v["kind"], "step");
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), field_names::<MetricRecord>().len());
        let csv_path = dir.path().join("k.csv");
        emit(&sample()[..1], &csv_path, OutputFormat::Csv).unwrap();
        assert!(std::fs::read_to_string(&csv_path).unwrap().contains(",NonConvexDirection"));
    }

    #[test]
    fn io_errors_surface() {
        assert!(matches!(emit(&sample(), "/nonexistent/dir/x.jsonl", OutputFormat::Jsonl), Err(BenchError::Io(_))));
        assert!(read_records::<MetricRecord>("/nonexistent.jsonl", OutputFormat::Jsonl).is_err());
    }
}
