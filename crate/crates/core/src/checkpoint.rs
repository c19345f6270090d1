//! Binary parameter snapshots.
//!
//! Layout (all integers little-endian `u64`, floats as their IEEE-754 bits):
//!
//! ```text
//! magic "SOEBMCKP" | version | epochs_done | label_dim | dropout
//! | layer count | per layer: inputs, outputs, weights, bias
//! | has_adam (0/1) [| step, lr, beta1, beta2, eps, m layers, v layers]
//! ```
//!
//! Floats are stored bit-for-bit, so a save/load cycle is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::predictor::{AdamState, Gradients, Layer, MlpParams};

const MAGIC: &[u8; 8] = b"SOEBMCKP";
pub const FORMAT_VERSION: u64 = 1;
/// Refuse absurd sizes from corrupt headers before allocating.
const MAX_LEN: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub adam: Option<AdamState>,
    pub epochs_done: u64,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.u64(v.to_bits())
    }

    fn floats(&mut self, v: &[f64]) -> Result<()> {
        v.iter().try_for_each(|x| self.f64(*x))
    }

    fn layers(&mut self, layers: &[Layer]) -> Result<()> {
        self.u64(layers.len() as u64)?;
        for l in layers {
            self.u64(l.inputs as u64)?;
            self.u64(l.outputs as u64)?;
            self.floats(&l.weights)?;
            self.floats(&l.bias)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > MAX_LEN {
            return Err(Error::Parse(format!(
                "checkpoint length field {v} is implausible"
            )));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn layers(&mut self) -> Result<Vec<Layer>> {
        let n = self.len()?;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let inputs = self.len()?;
            let outputs = self.len()?;
            let weights = self.floats(inputs * outputs)?;
            let bias = self.floats(outputs)?;
            out.push(Layer {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = Writer(out);
        w.0.write_all(MAGIC)?;
        w.u64(FORMAT_VERSION)?;
        w.u64(self.epochs_done)?;
        w.u64(self.params.label_dim as u64)?;
        w.f64(self.params.dropout)?;
        w.layers(&self.params.layers)?;
        match &self.adam {
            None => w.u64(0)?,
            Some(a) => {
                w.u64(1)?;
                w.u64(a.step)?;
                w.f64(a.learning_rate)?;
                w.f64(a.beta1)?;
                w.f64(a.beta2)?;
                w.f64(a.eps)?;
                w.layers(&a.m.layers)?;
                w.layers(&a.v.layers)?;
            }
        }
        w.0.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader(input);
        let mut magic = [0u8; 8];
        r.0.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u64()?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let epochs_done = r.u64()?;
        let label_dim = r.len()?;
        let dropout = r.f64()?;
        let params = MlpParams {
            layers: r.layers()?,
            dropout,
            label_dim,
        };
        params
            .validate()
            .map_err(|e| Error::Parse(format!("checkpoint parameters invalid: {e}")))?;
        let adam = match r.u64()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (learning_rate, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let m = Gradients {
                    layers: r.layers()?,
                };
                let v = Gradients {
                    layers: r.layers()?,
                };
                let shapes = |g: &Gradients| {
                    g.layers
                        .iter()
                        .map(|l| (l.inputs, l.outputs))
                        .collect::<Vec<_>>()
                };
                let expected = shapes(&Gradients::zeros_like(&params));
                if shapes(&m) != expected || shapes(&v) != expected {
                    return Err(Error::Parse(
                        "optimizer state shape does not match parameters".into(),
                    ));
                }
                Some(AdamState {
                    m,
                    v,
                    step,
                    learning_rate,
                    beta1,
                    beta2,
                    eps,
                })
            }
            t => return Err(Error::Parse(format!("bad optimizer tag {t}"))),
        };
        let mut trailing = [0u8; 1];
        if r.0.read(&mut trailing)? != 0 {
            return Err(Error::Parse("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            params,
            adam,
            epochs_done,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Purpose, RngStream};

    fn sample() -> Checkpoint {
        let params = MlpParams::init(
            &[5, 7, 3],
            2,
            0.2,
            0.5,
            &mut RngStream::keyed(1, 0, 0, Purpose::Init),
        )
        .unwrap();
        let mut adam = AdamState::new(&params, 1e-3);
        let mut p2 = params.clone();
        let mut g = Gradients::zeros_like(&params);
        g.layers[0].weights[3] = 0.25;
        g.layers[1].bias[1] = -1.0 / 3.0;
        adam.step(&mut p2, &g).unwrap();
        Checkpoint {
            params: p2,
            adam: Some(adam),
            epochs_done: 7,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let bits = |p: &MlpParams| p.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&c.params));

        let plain = Checkpoint { adam: None, ..c };
        let mut buf = Vec::new();
        plain.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(buf.as_slice()).unwrap(), plain);
    }

    #[test]
    fn corrupt_input_rejected() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(bad.as_slice()),
            Err(Error::Parse(_))
        ));
        let mut extra = buf;
        extra.push(0);
        assert!(Checkpoint::read_from(extra.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(Error::Io(_))
        ));
    }
}
