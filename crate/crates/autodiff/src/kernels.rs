//! Raw loops behind the taped operators. Everything here works on flat
//! row-major slices; shape checking happens in the graph layer.

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, with
/// explicit strides so transposes are free.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    let span = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, a_strides));
    assert!(b.len() >= span(k, n, b_strides));
    // SAFETY: the asserts above guarantee every index reached through the
    // given strides lies inside the borrowed slices, and `c` is uniquely
    // borrowed for the duration of the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub t_in: usize,
    pub t_out: usize,
}

impl ConvGeom {
    fn cin_pg(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_pg(&self) -> usize {
        self.c_out / self.groups
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.groups == 1 && self.pad_left == 0 && self.t_in == self.t_out
    }

    /// Output index range `[lo, hi)` whose tap `k` lands inside the input.
    fn valid_range(&self, k: usize) -> (isize, usize, usize) {
        let off = (k * self.dilation) as isize - self.pad_left as isize;
        let lo = (-off).max(0) as usize;
        let hi = ((self.t_in as isize - off).max(0) as usize).min(self.t_out);
        (off, lo.min(hi), hi)
    }
}

pub(crate) fn conv1d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.c_out * g.t_out];
    let (cin_pg, cout_pg, kk) = (g.cin_pg(), g.cout_pg(), g.kernel);
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.t_in..(b + 1) * g.c_in * g.t_in];
        let ob = &mut out[b * g.c_out * g.t_out..(b + 1) * g.c_out * g.t_out];
        if let Some(bias) = bias {
            for (co, row) in ob.chunks_exact_mut(g.t_out).enumerate() {
                row.fill(bias[co]);
            }
        }
        if g.pointwise() {
            gemm(
                g.c_out,
                g.c_in,
                g.t_out,
                w,
                (g.c_in as isize, 1),
                xb,
                (g.t_in as isize, 1),
                1.0,
                ob,
            );
            continue;
        }
        for co in 0..g.c_out {
            let grp = co / cout_pg;
            let orow = &mut ob[co * g.t_out..(co + 1) * g.t_out];
            for cil in 0..cin_pg {
                let ci = grp * cin_pg + cil;
                let xrow = &xb[ci * g.t_in..(ci + 1) * g.t_in];
                for k in 0..kk {
                    let wv = w[(co * cin_pg + cil) * kk + k];
                    let (off, lo, hi) = g.valid_range(k);
                    let src = &xrow[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (o, &v) in orow[lo..hi].iter_mut().zip(src) {
                        *o += wv * v;
                    }
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub db: Option<Vec<f64>>,
}

pub(crate) fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need: (bool, bool, bool),
) -> ConvGrads {
    let (cin_pg, cout_pg, kk) = (g.cin_pg(), g.cout_pg(), g.kernel);
    let mut dx = need.0.then(|| vec![0.0; x.len()]);
    let mut dw = need.1.then(|| vec![0.0; w.len()]);
    let mut db = need.2.then(|| vec![0.0; g.c_out]);
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.t_in..(b + 1) * g.c_in * g.t_in];
        let dyb = &dy[b * g.c_out * g.t_out..(b + 1) * g.c_out * g.t_out];
        if let Some(db) = db.as_mut() {
            for (co, row) in dyb.chunks_exact(g.t_out).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if g.pointwise() {
            if let Some(dw) = dw.as_mut() {
                // dW += dY_b · X_bᵀ
                gemm(
                    g.c_out,
                    g.t_out,
                    g.c_in,
                    dyb,
                    (g.t_out as isize, 1),
                    xb,
                    (1, g.t_in as isize),
                    1.0,
                    dw,
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dX_b = Wᵀ · dY_b
                let dxb = &mut dx[b * g.c_in * g.t_in..(b + 1) * g.c_in * g.t_in];
                gemm(
                    g.c_in,
                    g.c_out,
                    g.t_out,
                    w,
                    (1, g.c_in as isize),
                    dyb,
                    (g.t_out as isize, 1),
                    0.0,
                    dxb,
                );
            }
            continue;
        }
        for co in 0..g.c_out {
            let grp = co / cout_pg;
            let dyrow = &dyb[co * g.t_out..(co + 1) * g.t_out];
            for cil in 0..cin_pg {
                let ci = grp * cin_pg + cil;
                for k in 0..kk {
                    let widx = (co * cin_pg + cil) * kk + k;
                    let (off, lo, hi) = g.valid_range(k);
                    let (s0, s1) = ((lo as isize + off) as usize, (hi as isize + off) as usize);
                    if let Some(dw) = dw.as_mut() {
                        let xrow = &xb[ci * g.t_in..(ci + 1) * g.t_in];
                        dw[widx] += dyrow[lo..hi]
                            .iter()
                            .zip(&xrow[s0..s1])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    if let Some(dx) = dx.as_mut() {
                        let wv = w[widx];
                        let base = b * g.c_in * g.t_in + ci * g.t_in;
                        for (d, &gy) in dx[base + s0..base + s1].iter_mut().zip(&dyrow[lo..hi]) {
                            *d += wv * gy;
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}
