//! Self-describing model checkpoints.
//!
//! Layout: a magic line, one line of JSON header, then every tensor as
//! little-endian `f64` in [`Weights::named`] order. Optimizer moments, if
//! saved, follow the weights in the same order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Aligner, EncoderConfig, Model, Verbalizer, Weights};
use crate::error::{Error, Result};
use crate::sequence::Template;
use crate::tokenizer::Tokenizer;

const MAGIC: &str = "kg-entail checkpoint";
pub const FORMAT_VERSION: u32 = 1;
pub const ENCODER_KIND: &str = "reference";

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Weights,
    pub v: Weights,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    /// Opaque training state for resuming.
    pub state: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    encoder: String,
    config: EncoderConfig,
    vocab_hash: String,
    tokenizer: Tokenizer,
    verbalizer: Verbalizer,
    template: String,
    aligner: Aligner,
    tensors: Vec<(String, [usize; 2])>,
    optimizer_step: Option<u64>,
    state: Option<serde_json::Value>,
}

fn write_tensors(w: &mut impl Write, weights: &Weights) -> std::io::Result<()> {
    for t in weights.tensors() {
        for x in t.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_tensors(r: &mut impl Read, into: &mut Weights) -> std::io::Result<()> {
    let mut buf = [0u8; 8];
    for t in into.tensors_mut() {
        for x in t.iter_mut() {
            r.read_exact(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    Ok(())
}

pub fn save(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let m = &ck.model;
    let header = Header {
        version: FORMAT_VERSION,
        encoder: ENCODER_KIND.to_string(),
        config: m.config,
        vocab_hash: m.tokenizer.vocab_hash(),
        tokenizer: m.tokenizer.clone(),
        verbalizer: m.verbalizer,
        template: m.template.to_string(),
        aligner: m.aligner,
        tensors: m
            .weights
            .named()
            .into_iter()
            .map(|(n, t)| (n, [t.nrows(), t.ncols()]))
            .collect(),
        optimizer_step: ck.optimizer.as_ref().map(|o| o.step),
        state: ck.state.clone(),
    };
    let io = |e| Error::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
        writeln!(w, "{MAGIC} v{FORMAT_VERSION}").map_err(io)?;
        serde_json::to_writer(&mut w, &header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        writeln!(w).map_err(io)?;
        write_tensors(&mut w, &m.weights).map_err(io)?;
        if let Some(o) = &ck.optimizer {
            write_tensors(&mut w, &o.m).map_err(io)?;
            write_tensors(&mut w, &o.v).map_err(io)?;
        }
        w.flush().map_err(io)?;
    }
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io)?;
    if line.trim_end() != format!("{MAGIC} v{FORMAT_VERSION}") {
        return Err(bad(format!("unrecognised header {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line).map_err(io)?;
    let h: Header = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
    if h.encoder != ENCODER_KIND {
        return Err(bad(format!(
            "encoder kind {:?} is not supported",
            h.encoder
        )));
    }
    if h.tokenizer.vocab_hash() != h.vocab_hash {
        return Err(bad(
            "vocabulary hash does not match the stored tokenizer".into()
        ));
    }
    let template: Template = h.template.parse().map_err(|e: Error| bad(e.to_string()))?;
    let mut model = Model::new(h.config, h.tokenizer, template, h.aligner, h.verbalizer, 0)?;
    let expected: Vec<(String, [usize; 2])> = model
        .weights
        .named()
        .into_iter()
        .map(|(n, t)| (n, [t.nrows(), t.ncols()]))
        .collect();
    if expected != h.tensors {
        return Err(bad(
            "tensor layout does not match the encoder configuration".into(),
        ));
    }
    read_tensors(&mut r, &mut model.weights).map_err(|e| bad(format!("truncated weights: {e}")))?;
    let optimizer = match h.optimizer_step {
        Some(step) => {
            let mut m = model.weights.zeros_like();
            let mut v = model.weights.zeros_like();
            read_tensors(&mut r, &mut m)
                .map_err(|e| bad(format!("truncated optimizer state: {e}")))?;
            read_tensors(&mut r, &mut v)
                .map_err(|e| bad(format!("truncated optimizer state: {e}")))?;
            Some(OptimizerState { step, m, v })
        }
        None => None,
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        state: h.state,
    })
}
