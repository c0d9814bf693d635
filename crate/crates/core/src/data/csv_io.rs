use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ArchetypeLabels, DeviceSequence, InteractionLog};
use crate::error::{Error, Result};

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}

const COLUMNS: [&str; 3] = ["device_id", "item_id", "timestamp"];

/// Reads a `device_id,item_id,timestamp` file. Device and item ids are
/// remapped to dense ids in ascending order of the original id; rows are
/// stably sorted by timestamp within each device.
pub fn load_csv(path: &Path) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|e| io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format { line: 1, msg: e.to_string() })?
        .clone();
    let mut idx = [0usize; 3];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format { line: 1, msg: format!("missing column `{name}`") })?;
    }

    let mut rows: Vec<(i64, i64, i64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Format { line, msg: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut vals = [0i64; 3];
        for ((v, &i), name) in vals.iter_mut().zip(&idx).zip(COLUMNS) {
            let field = record
                .get(i)
                .filter(|f| !f.is_empty())
                .ok_or_else(|| Error::Format { line, msg: format!("missing field `{name}`") })?;
            *v = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("`{name}` is not an integer: {field:?}") })?;
        }
        rows.push((vals[0], vals[1], vals[2]));
    }

    let dense = |ids: &mut dyn Iterator<Item = i64>| -> (BTreeMap<i64, u32>, Vec<i64>) {
        let set: BTreeMap<i64, u32> = ids.map(|i| (i, 0)).collect();
        let originals: Vec<i64> = set.keys().copied().collect();
        let map = originals.iter().enumerate().map(|(d, &o)| (o, d as u32)).collect();
        (map, originals)
    };
    let (dev_map, device_ids) = dense(&mut rows.iter().map(|r| r.0));
    let (item_map, item_ids) = dense(&mut rows.iter().map(|r| r.1));

    let mut per_device: Vec<Vec<(i64, u32)>> = vec![Vec::new(); device_ids.len()];
    for (d, i, t) in rows {
        per_device[dev_map[&d] as usize].push((t, item_map[&i]));
    }
    let devices = per_device
        .into_iter()
        .enumerate()
        .map(|(d, mut evs)| {
            evs.sort_by_key(|e| e.0); // stable: ties keep file order
            DeviceSequence {
                device_id: d as u32,
                timestamps: evs.iter().map(|e| e.0).collect(),
                items: evs.iter().map(|e| e.1).collect(),
            }
        })
        .collect();
    Ok(InteractionLog { devices, vocab_size: item_ids.len(), item_ids: Some(item_ids), device_ids: Some(device_ids) })
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    io(path, std::io::Error::other(e))
}

/// Writes the log in the loader's format, using original ids when known.
pub fn write_csv(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in log.records() {
        let dev = log.device_ids.as_ref().map_or(r.device_id as i64, |m| m[r.device_id as usize]);
        let item = log.item_ids.as_ref().map_or(r.item_id as i64, |m| m[r.item_id as usize]);
        w.write_record([dev.to_string(), item.to_string(), r.timestamp.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Sidecar of true archetypes: `device_id,event_index,archetype`.
pub fn write_labels(labels: &ArchetypeLabels, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["device_id", "event_index", "archetype"]).map_err(|e| csv_err(path, e))?;
    for (d, evs) in labels.per_event.iter().enumerate() {
        for (t, a) in evs.iter().enumerate() {
            w.write_record([d.to_string(), t.to_string(), a.to_string()]).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io(path, e))
}

/// Reads a file written by [`write_labels`].
pub fn load_labels(path: &Path) -> Result<ArchetypeLabels> {
    let file = File::open(path).map_err(|e| io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut per_event: Vec<Vec<u16>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Format { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<u64> {
            record
                .get(i)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| Error::Parse { line, msg: format!("bad field {i} in {:?}", record.as_slice()) })
        };
        let (d, t, a) = (field(0)? as usize, field(1)? as usize, field(2)?);
        if d >= per_event.len() {
            per_event.resize(d + 1, Vec::new());
        }
        if t != per_event[d].len() {
            return Err(Error::Format { line, msg: format!("device {d}: event {t} out of order") });
        }
        per_event[d].push(u16::try_from(a).map_err(|_| Error::Parse { line, msg: format!("archetype {a} too large") })?);
    }
    Ok(ArchetypeLabels { per_event })
}

/// Persists the dense-id mapping as `kind,original_id,dense_id`.
pub fn write_mapping(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["kind", "original_id", "dense_id"]).map_err(|e| csv_err(path, e))?;
    for (kind, ids) in [("device", &log.device_ids), ("item", &log.item_ids)] {
        if let Some(ids) = ids {
            for (dense, orig) in ids.iter().enumerate() {
                w.write_record([kind.to_string(), orig.to_string(), dense.to_string()])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    let mut inner = w.into_inner().map_err(|e| io(path, std::io::Error::other(e.to_string())))?;
    inner.flush().map_err(|e| io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("log.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "device_id,item_id,timestamp\n7,100,1\n7,200,2\n9,100,5\n");
        let log = load_csv(&p).unwrap();
        assert_eq!(log.interaction_count(), 3);
        assert_eq!(log.vocab_size, 2);
        assert_eq!(log.device_count(), 2);
        assert_eq!(log.item_ids.as_deref(), Some(&[100, 200][..]));
        log.validate().unwrap();
    }

    #[test]
    fn shuffled_timestamps_sorted_and_ties_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "device_id,item_id,timestamp\n1,5,30\n1,6,10\n1,7,20\n1,8,10\n");
        let log = load_csv(&p).unwrap();
        let d = &log.devices[0];
        assert_eq!(d.timestamps, vec![10, 10, 20, 30]);
        // items 6 and 8 share timestamp 10 and keep file order
        let orig: Vec<i64> = d.items.iter().map(|&i| log.item_ids.as_ref().unwrap()[i as usize]).collect();
        assert_eq!(orig, vec![6, 8, 7, 5]);
    }

    #[test]
    fn column_order_is_free() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "timestamp,item_id,device_id\n3,1,1\n");
        let log = load_csv(&p).unwrap();
        assert_eq!(log.devices[0].timestamps, vec![3]);
    }

    #[test]
    fn missing_column_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "device_id,item_id\n1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Format { line: 1, .. })));
        let p = write(&dir, "device_id,item_id,timestamp\n1,2,3\n1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Format { line: 3, .. })));
    }

    #[test]
    fn non_integer_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "device_id,item_id,timestamp\n1,2,3\n1,x,4\n");
        assert!(matches!(load_csv(&p), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_csv(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.csv"));
    }

    #[test]
    fn export_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = super::super::MixtureSpec { devices_per_archetype: 2, seq_len: 8, vocab_size: 40, ..Default::default() };
        let (log, labels) = super::super::gen_synthetic(&spec).unwrap();
        let p = dir.path().join("syn.csv");
        write_csv(&log, &p).unwrap();
        write_labels(&labels, &dir.path().join("labels.csv")).unwrap();
        let back = load_csv(&p).unwrap();
        assert_eq!(back.interaction_count(), log.interaction_count());
        // remapping is a bijection onto the observed items
        let ids = back.item_ids.clone().unwrap();
        for (a, b) in log.devices.iter().zip(&back.devices) {
            let orig: Vec<u32> = b.items.iter().map(|&i| ids[i as usize] as u32).collect();
            assert_eq!(a.items, orig);
        }
        write_mapping(&back, &dir.path().join("map.csv")).unwrap();
        let labels_text = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
        assert_eq!(labels_text.lines().count(), 1 + log.interaction_count());
        assert_eq!(load_labels(&dir.path().join("labels.csv")).unwrap(), labels);
    }
}
