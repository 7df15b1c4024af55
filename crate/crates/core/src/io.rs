//! Output helpers: sorted-key JSON, label tables and content digests.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::panel::EntityMeta;

/// Pretty JSON with object keys sorted at every level.
pub fn to_sorted_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json's default map is ordered by key
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_sorted_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_sorted_json(value)?)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn write_labels_csv<W: Write>(w: W, entities: &[EntityMeta], labels: &[usize]) -> Result<()> {
    if entities.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: entities.len(),
            found: labels.len(),
        });
    }
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["entity_id", "cluster"])?;
    for (e, l) in entities.iter().zip(labels) {
        w.write_record([e.entity_id.as_str(), &l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `entity_id,cluster` rows in file order.
pub fn read_labels_csv<R: Read>(r: R) -> Result<Vec<(String, usize)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing required column '{name}'"),
        })
    };
    let (c_id, c_cl) = (col("entity_id")?, col("cluster")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let raw = rec.get(c_cl).unwrap_or("");
        let cl = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("cluster '{raw}' is not a non-negative integer"),
        })?;
        out.push((rec.get(c_id).unwrap_or("").to_string(), cl));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn keys_are_sorted() {
        let mut m = HashMap::new();
        m.insert("zeta", 1);
        m.insert("alpha", 2);
        m.insert("mid", 3);
        let s = to_sorted_json(&m).unwrap();
        let (a, b, c) = (s.find("alpha").unwrap(), s.find("mid").unwrap(), s.find("zeta").unwrap());
        assert!(a < b && b < c);
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn labels_round_trip() {
        let ents = vec![EntityMeta::new("a", "X"), EntityMeta::new("b", "Y")];
        let mut buf = Vec::new();
        write_labels_csv(&mut buf, &ents, &[3, 0]).unwrap();
        let back = read_labels_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![("a".to_string(), 3), ("b".to_string(), 0)]);
    }
}
