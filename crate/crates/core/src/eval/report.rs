use std::fmt::Write as _;

use serde::Serialize;

use super::EVAL_CHUNK;
use crate::data::Dataset;
use crate::gain::{gain_stats, instance_gains, GainStats};
use crate::{Error, Network, NormOrder, Result};

/// Per learned layer gain distributions on two splits, aligned by index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub p: NormOrder,
    pub train: Vec<GainStats>,
    pub test: Vec<GainStats>,
}

impl GainReport {
    /// Columns `layer_index,split,n,min,lq,median,uq,max`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_index,split,n,min,lq,median,uq,max\n");
        for (split, rows) in [("train", &self.train), ("test", &self.test)] {
            for (j, s) in rows.iter().enumerate() {
                let _ = write!(out, "{j},{split},{}", s.n);
                for v in s.fields() {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Eval-mode per-instance gains of every learned layer.
pub(crate) fn layer_gains(net: &Network, data: &Dataset, p: NormOrder) -> Result<Vec<Vec<f64>>> {
    let mut gains = vec![Vec::with_capacity(data.len()); net.learned_count()];
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(chunk)?;
        let (_, caches) = net.forward_eval(&x)?;
        for (g, c) in gains.iter_mut().zip(&caches.layers) {
            g.extend(instance_gains(&c.inputs, &c.outputs, p)?);
        }
    }
    Ok(gains)
}

pub fn gain_report(net: &Network, train: &Dataset, test: &Dataset, p: NormOrder) -> Result<GainReport> {
    if net.learned_count() == 0 {
        return Err(Error::EmptySample("network has no learned layers".into()));
    }
    let summarize = |d: &Dataset| -> Result<Vec<GainStats>> {
        layer_gains(net, d, p)?.iter().map(|g| gain_stats(g)).collect()
    };
    Ok(GainReport {
        p,
        train: summarize(train)?,
        test: summarize(test)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Dense, Stage};
    use crate::{Rng, Tensor};

    #[test]
    fn doubling_layer_has_constant_gain() {
        let d = Dense::new(Tensor::eye(3).scale(2.0), Tensor::filled(&[3], 0.5)).unwrap();
        let net = Network::new(vec![3], vec![Stage::Dense(d), Stage::Relu]).unwrap();
        let x = Rng::seeded(1).normal_tensor(&[10, 3]);
        let data = Dataset::new(x, vec![0; 10], 1).unwrap();
        for p in NormOrder::ALL {
            let r = gain_report(&net, &data, &data, p).unwrap();
            assert_eq!(r.train, r.test);
            for v in r.train[0].fields() {
                assert!((v - 2.0).abs() < 1e-15);
            }
            assert_eq!(r.train[0].n, 10);
        }
        let csv = gain_report(&net, &data, &data, NormOrder::L2).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,train,10,2,"));
    }

    #[test]
    fn needs_learned_layers() {
        let net = Network::new(vec![2], vec![Stage::Relu]).unwrap();
        let data = Dataset::new(Tensor::zeros(&[1, 2]), vec![0], 1);
        let data = data.unwrap();
        assert!(matches!(gain_report(&net, &data, &data, NormOrder::L2), Err(Error::EmptySample(_))));
    }
}
