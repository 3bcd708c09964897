//! Text serialization for parameter stores.
//!
//! Values are written with 17 significant digits, which round-trips every
//! finite f64 exactly, so a store survives save and load bit for bit.

use std::fmt::Write as _;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Appends all parameters to `out` in name order.
pub fn write_params(out: &mut String, store: &ParamStore) {
    writeln!(out, "params {}", store.len()).expect("string write");
    for (name, tensor) in store.iter() {
        writeln!(out, "param {} {} {}", name, tensor.rows(), tensor.cols()).expect("string write");
        for r in 0..tensor.rows() {
            let row: Vec<String> = tensor.row_slice(r).iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", row.join(" ")).expect("string write");
        }
    }
}

/// Parses what [`write_params`] wrote, consuming exactly its lines.
pub fn read_params<'a, I>(lines: &mut I) -> Result<Vec<(String, Tensor)>>
where
    I: Iterator<Item = &'a str>,
{
    let header = lines.next().ok_or_else(|| parse_err("missing params header"))?;
    let count: usize = header
        .strip_prefix("params ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(&format!("bad params header: {header:?}")))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| parse_err("missing param header"))?;
        let rest = line
            .strip_prefix("param ")
            .ok_or_else(|| parse_err(&format!("bad param header: {line:?}")))?;
        let mut parts = rest.split_whitespace();
        let name = parts.next().ok_or_else(|| parse_err("param name missing"))?.to_string();
        let rows: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("param rows missing"))?;
        let cols: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("param cols missing"))?;
        if parts.next().is_some() {
            return Err(parse_err(&format!("trailing tokens in param header: {line:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let row = lines.next().ok_or_else(|| parse_err("missing tensor row"))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(&format!("bad float {tok:?} in {name}")))?;
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(parse_err(&format!(
                    "tensor {name} row has {} values, expected {cols}",
                    data.len() - before
                )));
            }
        }
        let tensor = Tensor::from_vec(rows, cols, data)?;
        out.push((name, tensor));
    }
    Ok(out)
}

/// Content hash of a store's serialized parameters.
pub fn params_hash(store: &ParamStore) -> String {
    let mut text = String::new();
    write_params(&mut text, store);
    crate::util::sha256_hex(text.as_bytes())
}

fn parse_err(msg: &str) -> Error {
    Error::Parse(format!("checkpoint: {msg}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::params::glorot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn sample_store() -> ParamStore {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let mut store = ParamStore::new();
        store.insert("layer.w", glorot(&mut rng, 4, 3)).unwrap();
        store.insert("layer.b", Tensor::zeros(1, 3)).unwrap();
        store.insert("head.w", glorot(&mut rng, 3, 2)).unwrap();
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample_store();
        let mut text = String::new();
        write_params(&mut text, &store);
        let parsed = read_params(&mut text.lines()).unwrap();
        assert_eq!(parsed.len(), store.len());
        for (name, tensor) in &parsed {
            let orig = store.tensor(name);
            assert_eq!(tensor.shape(), orig.shape());
            for (a, b) in tensor.data().iter().zip(orig.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "param {name}");
            }
        }
    }

    #[test]
    fn read_leaves_following_lines_untouched() {
        let store = sample_store();
        let mut text = String::new();
        write_params(&mut text, &store);
        text.push_str("trailer après\n");
        let mut lines = text.lines();
        read_params(&mut lines).unwrap();
        assert_eq!(lines.next(), Some("trailer après"));
    }

    #[test]
    fn hash_differs_when_a_value_changes() {
        let store = sample_store();
        let h1 = params_hash(&store);
        let mut store2 = store.clone();
        let v = store2.param_elem("layer.w", 0);
        store2.set_param_elem("layer.w", 0, v + 1e-9);
        assert_ne!(h1, params_hash(&store2));
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn malformed_inputs_are_parse_errors() {
        for text in [
            "",
            "params x\n",
            "params 1\nparam w 2 2\n1.0 2.0\n3.0\n",
            "params 1\nparam w 1 2\n1.0 nope\n",
            "params 1\nweights w 1 1\n0.0\n",
        ] {
            let err = read_params(&mut text.lines()).unwrap_err();
            assert!(matches!(err, Error::Parse(_)), "input {text:?} gave {err:?}");
        }
    }

    #[test]
    fn subnormal_and_negative_zero_round_trip() {
        let mut store = ParamStore::new();
        store
            .insert(
                "edge",
                Tensor::from_vec(1, 4, vec![-0.0, f64::MIN_POSITIVE / 8.0, 1.0e-300, -2.5e17])
                    .unwrap(),
            )
            .unwrap();
        let mut text = String::new();
        write_params(&mut text, &store);
        let parsed = read_params(&mut text.lines()).unwrap();
        for (a, b) in parsed[0].1.data().iter().zip(store.tensor("edge").data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
