//! Word tables, the visual encoder, and the context projector.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamSet, Tensor, Var};

pub const WORDS_SCHEMA: &str = "cuefsl.words.v1";

/// Frozen class-name embeddings, one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct WordTable {
    vocabulary: Vec<String>,
    vectors: Tensor,
    index: HashMap<String, usize>,
}

impl WordTable {
    pub fn new(vocabulary: Vec<String>, vectors: Tensor) -> Result<Self> {
        let (rows, _) = vectors.dims2()?;
        if rows != vocabulary.len() || vectors.shape().len() != 2 {
            return Err(Error::Format(format!(
                "{} names but vectors of shape {:?}",
                vocabulary.len(),
                vectors.shape()
            )));
        }
        let mut index = HashMap::with_capacity(vocabulary.len());
        for (i, name) in vocabulary.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate word {name:?}")));
            }
        }
        Ok(WordTable {
            vocabulary,
            vectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn lookup(&self, name: &str) -> Result<&[f64]> {
        self.index
            .get(name)
            .map(|&i| self.vectors.row_slice(i))
            .ok_or_else(|| Error::UnknownWord(name.to_string()))
    }

    /// Stacks the vectors of `names` as rows (`n x d_w`).
    pub fn matrix_for<S: AsRef<str>>(&self, names: &[S]) -> Result<Tensor> {
        let rows = names
            .iter()
            .map(|n| self.lookup(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(Tensor::zeros(&[0, self.dim()]));
        }
        Tensor::from_rows(&rows)
    }

    /// Parses `<name>\t<v1> <v2> ...` records. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut vocabulary = Vec::new();
        let mut data = Vec::new();
        let mut dim: Option<usize> = None;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: line_no,
                message: "expected <name>\\t<values>".into(),
            })?;
            if name.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty name".into(),
                });
            }
            let values = rest
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad number {tok:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "no values".into(),
                });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Format(format!(
                        "line {line_no}: expected {d} values, found {}",
                        values.len()
                    )))
                }
                _ => {}
            }
            vocabulary.push(name.to_string());
            data.extend(values);
        }
        let rows = vocabulary.len();
        let vectors = Tensor::matrix(rows, dim.unwrap_or(0), data)?;
        WordTable::new(vocabulary, vectors)
    }

    /// Writes the table in the format accepted by [`WordTable::read`];
    /// values use the shortest representation that parses back exactly.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {WORDS_SCHEMA}")?;
        for (i, name) in self.vocabulary.iter().enumerate() {
            write!(out, "{name}\t")?;
            for (j, v) in self.vectors.row_slice(i).iter().enumerate() {
                if j > 0 {
                    out.write_all(b" ")?;
                }
                write!(out, "{v:?}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `u·v / (‖u‖‖v‖)`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine_similarity", &[u.len()], &[v.len()]));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Two-layer visual encoder: `W2 · tanh(W1 · x + b1) + b2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl EncoderParams {
    pub fn register(
        ps: &mut ParamSet,
        d_f: usize,
        hidden: usize,
        d_x: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(EncoderParams {
            w1: ps.insert_glorot("encoder.w1", hidden, d_f, rng)?,
            b1: ps.insert_zeros("encoder.b1", &[1, hidden])?,
            w2: ps.insert_glorot("encoder.w2", d_x, hidden, rng)?,
            b2: ps.insert_zeros("encoder.b2", &[1, d_x])?,
        })
    }

    pub fn input_dim(&self, ps: &ParamSet) -> usize {
        ps.value(self.w1).cols()
    }

    pub fn output_dim(&self, ps: &ParamSet) -> usize {
        ps.value(self.w2).rows()
    }

    /// Encodes every row of `x` (`n x d_f`).
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let d_f = self.input_dim(g.params());
        if g.value(x).cols() != d_f {
            return Err(Error::dim("encode_visual", g.value(x).shape(), &[d_f]));
        }
        let h = g.linear(x, self.w1, Some(self.b1))?;
        let h = g.tanh(h);
        g.linear(h, self.w2, Some(self.b2))
    }
}

/// Context projection `g`: `tanh(W · c + b)`, mapping `d_w` to `d_x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectorParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl ProjectorParams {
    pub fn register(ps: &mut ParamSet, d_w: usize, d_x: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(ProjectorParams {
            w: ps.insert_glorot("projector.w", d_x, d_w, rng)?,
            b: ps.insert_zeros("projector.b", &[1, d_x])?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, c: Var) -> Result<Var> {
        let d_w = g.params().value(self.w).cols();
        if g.value(c).cols() != d_w {
            return Err(Error::dim("project_context", g.value(c).shape(), &[d_w]));
        }
        let y = g.linear(c, self.w, Some(self.b))?;
        Ok(g.tanh(y))
    }
}

/// Visual embedding of one raw feature vector.
pub fn encode_visual(raw: &[f64], ps: &ParamSet, enc: &EncoderParams) -> Result<Vec<f64>> {
    let mut g = Graph::new(ps);
    let x = g.constant(Tensor::row(raw.to_vec()));
    let y = enc.forward(&mut g, x)?;
    Ok(g.value(y).data().to_vec())
}

/// Projection of one pooled context vector into the visual space.
pub fn project_context(c: &[f64], ps: &ParamSet, proj: &ProjectorParams) -> Result<Vec<f64>> {
    let mut g = Graph::new(ps);
    let x = g.constant(Tensor::row(c.to_vec()));
    let y = proj.forward(&mut g, x)?;
    Ok(g.value(y).data().to_vec())
}
