//! Share files and checkpoints.
//!
//! Integer share vectors are stored in QSHR containers:
//!
//! ```text
//! magic "QSHR" | version u16 BE | sigma u8 | rank u32 BE | dims u32 BE ... |
//! values, little-endian, sigma/8 bytes each
//! ```
//!
//! Values are ring words modulo `2^sigma`, written in row-major order.
//! Boolean share vectors ride the same container at `sigma = 8` with one
//! byte per bit.
//!
//! A checkpoint directory holds one QSHR file per tensor plus a text
//! manifest naming the tensors and recording the iteration counter, the
//! optimizer, the shared batch seed, and the owning party, so an
//! interrupted run resumes deterministically.

use crate::error::CliError;
use quotient_core::nn::Model;
use quotient_core::secure::{
    OptimizerKind, SecureDataset, SecureModelShares, SecureOptimizerState, SHARE_RING,
};
use quotient_core::shares::{from_ring, ring_mask, ArithShare, BoolShare, SharedTernaryMatrix};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const QSHR_MAGIC: &[u8; 4] = b"QSHR";
pub const QSHR_VERSION: u16 = 1;

/// A decoded QSHR container.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QshrFile {
    pub sigma: u8,
    pub shape: Vec<usize>,
    pub values: Vec<u64>,
}

impl QshrFile {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn word_bytes(sigma: u8) -> Result<usize, CliError> {
    match sigma {
        8 | 16 | 32 | 64 => Ok(usize::from(sigma / 8)),
        other => Err(CliError::config(format!(
            "share files support ring widths 8, 16, 32, and 64 bits, not {other}"
        ))),
    }
}

/// Writes one share vector with its logical shape.
pub fn write_qshr(
    path: &Path,
    sigma: u8,
    shape: &[usize],
    values: &[u64],
) -> Result<(), CliError> {
    let bytes = word_bytes(sigma)?;
    let expected: usize = shape.iter().product();
    if expected != values.len() {
        return Err(CliError::config(format!(
            "shape {shape:?} holds {expected} values, got {}",
            values.len()
        )));
    }
    let mask = ring_mask(sigma);
    let mut out = Vec::with_capacity(11 + 4 * shape.len() + bytes * values.len());
    out.extend_from_slice(QSHR_MAGIC);
    out.extend_from_slice(&QSHR_VERSION.to_be_bytes());
    out.push(sigma);
    out.extend_from_slice(&(shape.len() as u32).to_be_bytes());
    for &dim in shape {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v & mask).to_le_bytes()[..bytes]);
    }
    let mut file = fs::File::create(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    file.write_all(&out)
        .map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Reads one share vector, validating the header and byte count.
pub fn read_qshr(path: &Path) -> Result<QshrFile, CliError> {
    let bad = |msg: String| CliError::config(format!("{}: {msg}", path.display()));
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    if bytes.len() < 11 || &bytes[0..4] != QSHR_MAGIC {
        return Err(bad("not a QSHR share file".to_string()));
    }
    let version = u16::from_be_bytes(bytes[4..6].try_into().expect("2-byte slice"));
    if version != QSHR_VERSION {
        return Err(bad(format!(
            "share file version {version}, this build reads {QSHR_VERSION}"
        )));
    }
    let sigma = bytes[6];
    let word = word_bytes(sigma)?;
    let rank = u32::from_be_bytes(bytes[7..11].try_into().expect("4-byte slice")) as usize;
    let dims_end = 11 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(bad("truncated shape header".to_string()));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| {
            u32::from_be_bytes(
                bytes[11 + 4 * i..15 + 4 * i].try_into().expect("4-byte slice"),
            ) as usize
        })
        .collect();
    let count: usize = shape.iter().product();
    let body = &bytes[dims_end..];
    if body.len() != count * word {
        return Err(bad(format!(
            "{} value bytes for shape {shape:?} at {sigma}-bit words",
            body.len()
        )));
    }
    let values: Vec<u64> = body
        .chunks_exact(word)
        .map(|chunk| {
            let mut buf = [0u8; 8];
            buf[..word].copy_from_slice(chunk);
            u64::from_le_bytes(buf)
        })
        .collect();
    Ok(QshrFile { sigma, shape, values })
}

/// Writes an arithmetic share with its logical shape.
pub fn write_share(path: &Path, share: &ArithShare, shape: &[usize]) -> Result<(), CliError> {
    write_qshr(path, share.sigma, shape, &share.values)
}

/// Reads an arithmetic share, assigning it to `party`.
pub fn read_share(path: &Path, party: u8) -> Result<(ArithShare, Vec<usize>), CliError> {
    let file = read_qshr(path)?;
    Ok((
        ArithShare { values: file.values, sigma: file.sigma, party },
        file.shape,
    ))
}

/// Writes a Boolean share as one byte per bit.
pub fn write_bool_share(path: &Path, share: &BoolShare, shape: &[usize]) -> Result<(), CliError> {
    let values: Vec<u64> = share.bits.iter().map(|&b| u64::from(b)).collect();
    write_qshr(path, 8, shape, &values)
}

/// Reads a Boolean share written by [`write_bool_share`].
pub fn read_bool_share(path: &Path, party: u8) -> Result<(BoolShare, Vec<usize>), CliError> {
    let file = read_qshr(path)?;
    for &v in &file.values {
        if v > 1 {
            return Err(CliError::config(format!(
                "{}: value {v} in a Boolean share file",
                path.display()
            )));
        }
    }
    Ok((
        BoolShare { bits: file.values.iter().map(|&v| v == 1).collect(), party },
        file.shape,
    ))
}

fn dataset_file(dir: &Path, prefix: &str, party: u8, what: &str) -> PathBuf {
    dir.join(format!("{prefix}.p{party}.{what}.qshr"))
}

/// Writes both parties' input and label shares for a dataset split.
pub fn write_dataset_shares(
    dir: &Path,
    prefix: &str,
    parts: (&SecureDataset, &SecureDataset),
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    for (party, data) in [(1u8, parts.0), (2u8, parts.1)] {
        write_share(
            &dataset_file(dir, prefix, party, "inputs"),
            &data.inputs,
            &[data.samples, data.input_len],
        )?;
        write_share(
            &dataset_file(dir, prefix, party, "labels"),
            &data.labels,
            &[data.samples, data.label_len],
        )?;
    }
    Ok(())
}

/// Loads one party's dataset shares.
pub fn read_dataset_shares(
    dir: &Path,
    prefix: &str,
    party: u8,
) -> Result<SecureDataset, CliError> {
    let (inputs, in_shape) = read_share(&dataset_file(dir, prefix, party, "inputs"), party)?;
    let (labels, lb_shape) = read_share(&dataset_file(dir, prefix, party, "labels"), party)?;
    if in_shape.len() != 2 || lb_shape.len() != 2 || in_shape[0] != lb_shape[0] {
        return Err(CliError::config(format!(
            "dataset share shapes {in_shape:?} and {lb_shape:?} do not pair up"
        )));
    }
    if inputs.sigma != SHARE_RING || labels.sigma != SHARE_RING {
        return Err(CliError::config(format!(
            "dataset shares must live in the {SHARE_RING}-bit ring"
        )));
    }
    Ok(SecureDataset {
        inputs,
        labels,
        samples: in_shape[0],
        input_len: in_shape[1],
        label_len: lb_shape[1],
    })
}

/// Checkpoint metadata carried by the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub optimizer: OptimizerKind,
    pub batch_seed: u64,
    pub party: u8,
}

pub fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::AmsGrad => "amsgrad",
    }
}

pub fn optimizer_from_name(name: &str) -> Result<OptimizerKind, CliError> {
    match name {
        "sgd" => Ok(OptimizerKind::Sgd),
        "amsgrad" => Ok(OptimizerKind::AmsGrad),
        other => Err(CliError::config(format!(
            "unknown optimizer {other:?}, expected sgd or amsgrad"
        ))),
    }
}

const MANIFEST_NAME: &str = "manifest.txt";

/// Writes one party's model, moment, and progress state into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    model: &SecureModelShares,
    state: &SecureOptimizerState,
    meta: &CheckpointMeta,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    let mut manifest = String::new();
    manifest.push_str("version 1\n");
    manifest.push_str(&format!("iteration {}\n", meta.iteration));
    manifest.push_str(&format!("optimizer {}\n", optimizer_name(meta.optimizer)));
    manifest.push_str(&format!("batch-seed {}\n", meta.batch_seed));
    manifest.push_str(&format!("party {}\n", meta.party));

    let mut record = |name: String, write: &mut dyn FnMut(&Path) -> Result<(), CliError>| {
        let file = format!("{name}.qshr");
        write(&dir.join(&file))?;
        manifest.push_str(&format!("tensor {name} {file}\n"));
        Ok::<(), CliError>(())
    };

    for (i, layer) in model.weights.iter().enumerate() {
        let Some(layer) = layer else { continue };
        let (rows, cols) = (layer.ternary.rows, layer.ternary.cols);
        let shape = [rows, cols];
        record(format!("stored.{i}"), &mut |p| {
            write_share(p, &layer.stored, &shape)
        })?;
        record(format!("plus.{i}"), &mut |p| {
            write_bool_share(p, &layer.ternary.plus, &shape)
        })?;
        record(format!("minus.{i}"), &mut |p| {
            write_bool_share(p, &layer.ternary.minus, &shape)
        })?;
        for (tag, moments) in [("m", &state.m), ("v", &state.v), ("vhat", &state.v_hat)] {
            if let Some(share) = &moments[i] {
                record(format!("{tag}.{i}"), &mut |p| write_share(p, share, &shape))?;
            }
        }
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn manifest_field<'a>(lines: &'a [Vec<&str>], key: &str) -> Result<&'a str, CliError> {
    lines
        .iter()
        .find(|l| l.first() == Some(&key))
        .and_then(|l| l.get(1).copied())
        .ok_or_else(|| CliError::config(format!("checkpoint manifest is missing {key:?}")))
}

/// Loads one party's checkpoint into a model built from the public plan.
/// `template` supplies the layer plan and precision configuration; weight
/// and moment values come from the share files. Missing moment files load
/// as zeros, so a plain-SGD checkpoint also serves prediction.
pub fn load_checkpoint(
    dir: &Path,
    template: &SecureModelShares,
) -> Result<(SecureModelShares, SecureOptimizerState, CheckpointMeta), CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let lines: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().collect())
        .collect();
    let version = manifest_field(&lines, "version")?;
    if version != "1" {
        return Err(CliError::config(format!(
            "checkpoint manifest version {version}, this build reads 1"
        )));
    }
    let parse_u64 = |key: &str| -> Result<u64, CliError> {
        manifest_field(&lines, key)?
            .parse::<u64>()
            .map_err(|_| CliError::config(format!("checkpoint manifest has a malformed {key}")))
    };
    let meta = CheckpointMeta {
        iteration: parse_u64("iteration")? as usize,
        optimizer: optimizer_from_name(manifest_field(&lines, "optimizer")?)?,
        batch_seed: parse_u64("batch-seed")?,
        party: parse_u64("party")? as u8,
    };

    let listed: Vec<(&str, &str)> = lines
        .iter()
        .filter(|l| l.first() == Some(&"tensor") && l.len() == 3)
        .map(|l| (l[1], l[2]))
        .collect();
    let file_of = |name: String| -> Option<PathBuf> {
        listed
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| dir.join(f))
    };

    let mut model = template.clone();
    let mut state = SecureOptimizerState::zeros(template, meta.party);
    for (i, slot) in model.weights.iter_mut().enumerate() {
        let Some(layer) = slot else { continue };
        let (rows, cols) = (layer.ternary.rows, layer.ternary.cols);
        let want = [rows, cols];
        let expect = |name: String| -> Result<PathBuf, CliError> {
            file_of(name.clone())
                .ok_or_else(|| CliError::config(format!("checkpoint lacks tensor {name:?}")))
        };
        let check_shape = |shape: &[usize], name: &str| -> Result<(), CliError> {
            if shape != want {
                return Err(CliError::config(format!(
                    "checkpoint tensor {name} has shape {shape:?}, the plan expects {want:?}"
                )));
            }
            Ok(())
        };

        let (stored, shape) = read_share(&expect(format!("stored.{i}"))?, meta.party)?;
        check_shape(&shape, "stored")?;
        let (plus, shape) = read_bool_share(&expect(format!("plus.{i}"))?, meta.party)?;
        check_shape(&shape, "plus")?;
        let (minus, shape) = read_bool_share(&expect(format!("minus.{i}"))?, meta.party)?;
        check_shape(&shape, "minus")?;
        layer.stored = stored;
        layer.ternary = SharedTernaryMatrix { plus, minus, rows, cols };

        for (tag, moments) in [
            ("m", &mut state.m),
            ("v", &mut state.v),
            ("vhat", &mut state.v_hat),
        ] {
            if let Some(path) = file_of(format!("{tag}.{i}")) {
                let (share, shape) = read_share(&path, meta.party)?;
                check_shape(&shape, tag)?;
                moments[i] = Some(share);
            }
        }
    }
    Ok((model, state, meta))
}

/// Writes a revealed plaintext model's stored weights, one file per layer.
pub fn save_plain_weights(dir: &Path, model: &Model) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
    let mut manifest = String::from("version 1\n");
    for (i, weights) in model.weights_stored.iter().enumerate() {
        let Some(w) = weights else { continue };
        let values: Vec<u64> = w.data.iter().map(|&v| (v as u32) as u64).collect();
        let file = format!("weights.{i}.qshr");
        write_qshr(&dir.join(&file), 32, &w.shape, &values)?;
        manifest.push_str(&format!("tensor weights.{i} {file}\n"));
    }
    let path = dir.join("weights.txt");
    fs::write(&path, manifest).map_err(|e| CliError::io(path.display().to_string(), e))
}

/// Loads stored weights written by [`save_plain_weights`] into a model
/// built from the same plan, refreshing the ternary projection.
pub fn load_plain_weights(dir: &Path, model: &mut Model) -> Result<(), CliError> {
    for i in 0..model.layers.len() {
        let Some(w) = model.weights_stored[i].as_mut() else { continue };
        let path = dir.join(format!("weights.{i}.qshr"));
        let file = read_qshr(&path)?;
        if file.sigma != 32 || file.shape != w.shape {
            return Err(CliError::config(format!(
                "{}: weight tensor does not match the model plan",
                path.display()
            )));
        }
        for (slot, &v) in w.data.iter_mut().zip(&file.values) {
            *slot = from_ring(v, 32) as i32;
        }
    }
    model.refresh_ternary();
    Ok(())
}
