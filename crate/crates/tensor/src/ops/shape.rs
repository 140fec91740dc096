use crate::error::{invalid, shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{Scalar, Tensor};

fn split_last(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    let c = *shape.last().ok_or_else(|| shape_err(op, "rank-0 input"))?;
    Ok((shape.iter().product::<usize>() / c.max(1), c))
}

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, Op::Reshape(x), &[x], 0)
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (batch, r, c) = match *shape.as_slice() {
            [r, c] => (1, r, c),
            [b, r, c] => (b, r, c),
            _ => return Err(shape_err("transpose", format!("rank-2/3 expected, got {shape:?}"))),
        };
        let xv = self.data(x);
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..batch {
            let src = &xv[b * r * c..][..r * c];
            let dst = &mut out[b * r * c..][..r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut new_shape = shape;
        let rank = new_shape.len();
        new_shape.swap(rank - 2, rank - 1);
        let out = Tensor::new(new_shape, out)?;
        self.push("transpose", out, Op::Transpose(x), &[x], 0)
    }

    /// Concatenate along the last axis; leading axes must match.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(shape_err("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (rows, ca) = split_last(&sa, "concat")?;
        let cb = *sb.last().unwrap();
        let (va, vb) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for r in 0..rows {
            out.extend_from_slice(&va[r * ca..][..ca]);
            out.extend_from_slice(&vb[r * cb..][..cb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let out = Tensor::new(shape, out)?;
        self.push("concat", out, Op::ConcatLast(a, b), &[a, b], 0)
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, c) = split_last(&shape, "slice_last")?;
        if start + len > c || len == 0 {
            return Err(shape_err("slice_last", format!("[{start}, {}) out of {c}", start + len)));
        }
        let xv = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * c + start..][..len]);
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len;
        let out = Tensor::new(new_shape, out)?;
        self.push("slice_last", out, Op::SliceLast { x, start }, &[x], 0)
    }

    /// Repeat a size-1 last axis `c` times.
    pub fn expand_last(&mut self, x: Var, c: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.last() != Some(&1) {
            return Err(shape_err("expand_last", format!("last axis must be 1, got {shape:?}")));
        }
        let out: Vec<T> = self
            .data(x)
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, c))
            .collect();
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = c;
        let out = Tensor::new(new_shape, out)?;
        self.push("expand_last", out, Op::ExpandLast { x }, &[x], 0)
    }

    /// Output channel `j` takes input channel `perm[j]`.
    pub fn permute_last(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, c) = split_last(&shape, "permute_last")?;
        if perm.len() != c {
            return Err(shape_err("permute_last", format!("perm of {} for {c} channels", perm.len())));
        }
        let mut seen = vec![false; c];
        for &p in perm {
            if p >= c || std::mem::replace(&mut seen[p], true) {
                return Err(invalid("permute_last", format!("{perm:?} is not a permutation")));
            }
        }
        let xv = self.data(x);
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let row = &xv[r * c..][..c];
            out.extend(perm.iter().map(|&p| row[p]));
        }
        let out = Tensor::new(shape, out)?;
        self.push(
            "permute_last",
            out,
            Op::PermuteLast {
                x,
                perm: perm.to_vec(),
            },
            &[x],
            0,
        )
    }
}
