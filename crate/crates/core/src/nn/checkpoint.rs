//! Flat key -> tensor checkpoint files.
//!
//! Layout: an ASCII header listing `name dim0 dim1 ...` per parameter
//! (sorted by name), an `end` sentinel line, then the raw values as
//! little-endian 64-bit floats in header order.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::Tensor;

use super::ParamStore;

const MAGIC: &str = "mirockpt 1";

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{MAGIC}")?;
    for (name, param) in store.iter() {
        if name.contains(char::is_whitespace) {
            return Err(Error::contract(format!(
                "parameter name `{name}` contains whitespace"
            )));
        }
        write!(w, "{name}")?;
        for d in param.value.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "end")?;
    for (_, param) in store.iter() {
        for v in param.value.values() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);

    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::parse(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }

    let mut entries: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::parse("checkpoint header missing `end`".to_string()));
        }
        let line = line.trim_end();
        if line == "end" {
            break;
        }
        let mut parts = line.split(' ');
        let name = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse("empty checkpoint header line".to_string()))?
            .to_string();
        let shape = parts
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| Error::parse(format!("bad dimension `{p}` for `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push((name, shape));
    }

    let mut store = ParamStore::new();
    for (name, shape) in entries {
        let numel: usize = shape.iter().product();
        let mut values = vec![0.0f64; numel];
        r.read_f64_into::<LittleEndian>(&mut values)
            .map_err(|e| Error::parse(format!("checkpoint payload truncated: {e}")))?;
        store.insert(&name, Tensor::from_vec(shape, values)?)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::parse(format!(
            "checkpoint has {} trailing bytes",
            rest.len()
        )));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, BlockMlp, BlockMlpSpec};
    use crate::rng::derived_rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = BlockMlp::new(
            BlockMlpSpec { input_dim: 3, widths: vec![4, 2], activation: Activation::Relu },
            "f",
        )
        .unwrap();
        let mut store = ParamStore::new();
        let mut rng = derived_rng(21, "init", 0);
        model.init_params(&mut store, &mut rng).unwrap();
        store.insert("scalar", Tensor::scalar(-0.125)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.len(), store.len());
        for (name, param) in store.iter() {
            let got = loaded.value(name).unwrap();
            assert_eq!(got.shape(), param.value.shape());
            for (a, b) in got.values().iter().zip(param.value.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        // forward through the loaded parameters matches bit-exactly
        let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0]]).unwrap();
        let before = model.features_nograd(&store, &x).unwrap();
        let after = model.features_nograd(&loaded, &x).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::filled(vec![4], 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save_checkpoint(&store, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
