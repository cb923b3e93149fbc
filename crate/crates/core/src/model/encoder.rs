use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::model::layers::{Conv, Ctx, Norm, NormKind};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// conv7 -> norm -> ReLU, then two stride-2 conv3 -> norm -> ReLU stages.
///
/// Output spatial size is a quarter of the input along each axis.
#[derive(Clone, Debug)]
pub struct Encoder {
    in_channels: usize,
    convs: Vec<Conv>,
    norms: Vec<Norm>,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        widths: &[usize],
        norm: NormKind,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(3);
        let mut norms = Vec::with_capacity(3);
        let mut cin = in_channels;
        for (i, &cout) in widths.iter().enumerate() {
            let (k, stride) = if i == 0 { (7, 1) } else { (3, 2) };
            convs.push(Conv::new(store, &format!("{name}.conv{i}"), cin, cout, k, stride, false, std, rng)?);
            norms.push(Norm::new(store, &format!("{name}.norm{i}"), norm, cout)?);
            cin = cout;
        }
        Ok(Encoder { in_channels, convs, norms })
    }

    pub fn count(in_channels: usize, widths: &[usize]) -> usize {
        let mut cin = in_channels;
        let mut total = 0;
        for (i, &cout) in widths.iter().enumerate() {
            let k = if i == 0 { 7 } else { 3 };
            total += Conv::count(cin, cout, k, false) + Norm::count(cout);
            cin = cout;
        }
        total
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let shape = cx.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::config(format!(
                "encoder expects {} input channels, got shape {shape:?}",
                self.in_channels
            )));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 {
            return Err(Error::config(format!(
                "encoder input {}x{} is not divisible by 4",
                shape[2], shape[3]
            )));
        }
        let mut h = x;
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            h = conv.forward(cx, h)?;
            h = norm.forward(cx, h)?;
            h = cx.graph.relu(h);
        }
        Ok(h)
    }
}
