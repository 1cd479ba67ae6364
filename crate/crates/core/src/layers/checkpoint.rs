//! Versioned plain-text checkpoints.
//!
//! ```text
//! maxgain-checkpoint 1
//! input_shape 2
//! stages 3
//! stage dense
//! tensor weight 4 2
//! <8 values>
//! tensor bias 4
//! <4 values>
//! stage relu
//! ...
//! ```
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every finite `f64` bit-exactly. Residual blocks nest as
//! `stage residual`, `main <n>` followed by `n` stages, then `shortcut
//! identity` or `shortcut <m>` followed by `m` stages.

use std::fmt::Write as _;
use std::path::Path;

use super::{BatchNorm, Conv2d, Dense, Dropout, MaxPool, Network, Residual, Stage};
use crate::{Error, Result, Tensor};

const MAGIC: &str = "maxgain-checkpoint";
const VERSION: u32 = 1;

pub fn to_text(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "input_shape {}", join(net.input_shape()));
    let _ = writeln!(out, "stages {}", net.stages().len());
    for s in net.stages() {
        write_stage(&mut out, s);
    }
    out
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text, path)
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_tensor(out: &mut String, name: &str, t: &Tensor) {
    let _ = writeln!(out, "tensor {name} {}", join(t.shape()));
    let values: Vec<String> = t.data().iter().map(|&v| float(v)).collect();
    let _ = writeln!(out, "{}", values.join(" "));
}

fn write_stage(out: &mut String, stage: &Stage) {
    match stage {
        Stage::Dense(d) => {
            let _ = writeln!(out, "stage dense");
            write_tensor(out, "weight", &d.weight);
            write_tensor(out, "bias", &d.bias);
        }
        Stage::Conv2d(c) => {
            let _ = writeln!(out, "stage conv2d {} {} {}", c.stride, c.padding.0, c.padding.1);
            write_tensor(out, "kernel", &c.kernel);
            write_tensor(out, "bias", &c.bias);
        }
        Stage::BatchNorm(b) => {
            let _ = writeln!(out, "stage batch_norm {} {}", float(b.momentum), float(b.eps));
            write_tensor(out, "alpha", &b.alpha);
            write_tensor(out, "beta", &b.beta);
            write_tensor(out, "running_mean", &b.running_mean);
            write_tensor(out, "running_var", &b.running_var);
        }
        Stage::Dropout(d) => {
            let _ = writeln!(out, "stage dropout {}", float(d.rate));
        }
        Stage::Relu => {
            let _ = writeln!(out, "stage relu");
        }
        Stage::MaxPool(p) => {
            let _ = writeln!(out, "stage max_pool {} {}", p.size, p.stride);
        }
        Stage::Flatten => {
            let _ = writeln!(out, "stage flatten");
        }
        Stage::Residual(r) => {
            let _ = writeln!(out, "stage residual");
            let _ = writeln!(out, "main {}", r.main.len());
            for s in &r.main {
                write_stage(out, s);
            }
            match &r.shortcut {
                None => {
                    let _ = writeln!(out, "shortcut identity");
                }
                Some(sc) => {
                    let _ = writeln!(out, "shortcut {}", sc.len());
                    for s in sc {
                        write_stage(out, s);
                    }
                }
            }
        }
    }
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line_no: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::format(self.path, format!("line {}: {msg}", self.line_no))
    }

    fn next_line(&mut self) -> Result<&'a str> {
        loop {
            let Some((i, line)) = self.lines.next() else {
                return Err(Error::format(self.path, "unexpected end of checkpoint"));
            };
            self.line_no = i + 1;
            if !line.trim().is_empty() {
                return Ok(line);
            }
        }
    }

    /// Reads a line whose first token is `keyword`; returns the rest.
    fn expect(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some(k) if k == keyword => Ok(tokens.collect()),
            other => Err(self.err(format!("expected `{keyword}`, found {other:?}"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, token: &str) -> Result<T> {
        token
            .parse()
            .map_err(|_| self.err(format!("cannot parse {token:?}")))
    }

    fn usizes(&self, tokens: &[&str]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.parse(t)).collect()
    }

    fn tensor(&mut self, name: &str) -> Result<Tensor> {
        let header = self.expect("tensor")?;
        match header.split_first() {
            Some((n, dims)) if *n == name => {
                let shape = self.usizes(dims)?;
                let values = self
                    .next_line()?
                    .split_whitespace()
                    .map(|t| self.parse::<f64>(t))
                    .collect::<Result<Vec<_>>>()?;
                Tensor::new(shape, values).map_err(|e| self.err(e))
            }
            _ => Err(self.err(format!("expected tensor `{name}`"))),
        }
    }

    fn stage(&mut self) -> Result<Stage> {
        let args = self.expect("stage")?;
        let (&kind, rest) = args.split_first().ok_or_else(|| self.err("missing stage type"))?;
        let want_args = |n: usize| -> Result<()> {
            if rest.len() == n {
                Ok(())
            } else {
                Err(self.err(format!("stage {kind} takes {n} arguments, got {}", rest.len())))
            }
        };
        let stage = match kind {
            "dense" => {
                want_args(0)?;
                let w = self.tensor("weight")?;
                let b = self.tensor("bias")?;
                Stage::Dense(Dense::new(w, b).map_err(|e| self.err(e))?)
            }
            "conv2d" => {
                want_args(3)?;
                let v = self.usizes(rest)?;
                let k = self.tensor("kernel")?;
                let b = self.tensor("bias")?;
                Stage::Conv2d(Conv2d::new(k, b, v[0], (v[1], v[2])).map_err(|e| self.err(e))?)
            }
            "batch_norm" => {
                want_args(2)?;
                let momentum = self.parse(rest[0])?;
                let eps = self.parse(rest[1])?;
                let bn = BatchNorm {
                    alpha: self.tensor("alpha")?,
                    beta: self.tensor("beta")?,
                    running_mean: self.tensor("running_mean")?,
                    running_var: self.tensor("running_var")?,
                    momentum,
                    eps,
                };
                bn.validate().map_err(|e| self.err(e))?;
                Stage::BatchNorm(bn)
            }
            "dropout" => {
                want_args(1)?;
                Stage::Dropout(Dropout::new(self.parse(rest[0])?).map_err(|e| self.err(e))?)
            }
            "relu" => {
                want_args(0)?;
                Stage::Relu
            }
            "max_pool" => {
                want_args(2)?;
                let v = self.usizes(rest)?;
                Stage::MaxPool(MaxPool::new(v[0], v[1]).map_err(|e| self.err(e))?)
            }
            "flatten" => {
                want_args(0)?;
                Stage::Flatten
            }
            "residual" => {
                want_args(0)?;
                let n_main = self.expect("main")?;
                let n_main: usize = self.parse(n_main.first().ok_or_else(|| self.err("missing count"))?)?;
                let main = (0..n_main).map(|_| self.stage()).collect::<Result<Vec<_>>>()?;
                let sc = self.expect("shortcut")?;
                let shortcut = match sc.first().copied() {
                    Some("identity") => None,
                    Some(n) => {
                        let n: usize = self.parse(n)?;
                        Some((0..n).map(|_| self.stage()).collect::<Result<Vec<_>>>()?)
                    }
                    None => return Err(self.err("missing shortcut description")),
                };
                Stage::Residual(Residual { main, shortcut })
            }
            other => return Err(self.err(format!("unknown stage type {other:?}"))),
        };
        Ok(stage)
    }
}

pub fn from_text(text: &str, path: &Path) -> Result<Network> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
        path,
        line_no: 0,
    };
    let header = r.expect(MAGIC)?;
    match header.as_slice() {
        [v] if r.parse::<u32>(v)? == VERSION => {}
        _ => return Err(r.err(format!("unsupported checkpoint version {header:?}"))),
    }
    let dims = r.expect("input_shape")?;
    let input_shape = r.usizes(&dims)?;
    let count = r.expect("stages")?;
    let count: usize = r.parse(count.first().ok_or_else(|| r.err("missing stage count"))?)?;
    let stages = (0..count).map(|_| r.stage()).collect::<Result<Vec<_>>>()?;
    Network::new(input_shape, stages).map_err(|e| Error::format(path, e.to_string()))
}
