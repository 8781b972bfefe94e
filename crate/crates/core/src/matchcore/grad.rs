//! Analytic gradients of the matching loss and a finite-difference checker.

use ndarray::{Array1, Array2, Axis};

use super::heads::{AlignmentHeads, LinearGrad, Mlp};
use super::loss::{loss_and_grad, LossKind};
use super::{match_frames, norm, MatchError, MatchProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub vid: Vec<LinearGrad>,
    pub frm: Vec<LinearGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemGrads {
    pub heads: HeadGrads,
    pub h_vid: Array1<f64>,
    /// Matched frame index at the evaluated parameters.
    pub t_match: usize,
}

impl HeadGrads {
    pub fn zeros_like(heads: &AlignmentHeads) -> Self {
        let z = |m: &Mlp| {
            m.layers
                .iter()
                .map(|l| LinearGrad {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect()
        };
        HeadGrads {
            vid: z(&heads.vid),
            frm: z(&heads.frm),
        }
    }

    pub fn add_scaled(&mut self, other: &HeadGrads, k: f64) {
        for (a, b) in self
            .vid
            .iter_mut()
            .chain(self.frm.iter_mut())
            .zip(other.vid.iter().chain(other.frm.iter()))
        {
            a.w.scaled_add(k, &b.w);
            a.b.scaled_add(k, &b.b);
        }
    }
}

pub fn problem_loss(
    heads: &AlignmentHeads,
    p: &MatchProblem,
    kind: LossKind,
) -> Result<f64, MatchError> {
    let gv = heads.vid.forward(p.h_vid.view())?;
    let gf = heads.frm.forward(p.h_frm.view())?;
    let (s, _) = match_frames(gv.view(), gf.view())?;
    Ok(loss_and_grad(s.view(), p.labels().view(), kind)?.0)
}

/// Loss with gradients for every head parameter and for `h_vid`.
pub fn problem_loss_and_grad(
    heads: &AlignmentHeads,
    p: &MatchProblem,
    kind: LossKind,
) -> Result<(f64, ProblemGrads), MatchError> {
    let (gv, cache_v) = heads.vid.forward_cached(p.h_vid.view())?;
    let (gf, cache_f) = heads.frm.forward_cached(p.h_frm.view())?;
    let (s, t_match) = match_frames(gv.view(), gf.view())?;
    let (loss, ds) = loss_and_grad(s.view(), p.labels().view(), kind)?;

    let v = gv.row(0);
    let nv = norm(v);
    let mut dgv = Array1::<f64>::zeros(v.len());
    let mut dgf = Array2::<f64>::zeros(gf.raw_dim());
    for (t, f) in gf.axis_iter(Axis(0)).enumerate() {
        let nf = norm(f);
        if nf == 0.0 || ds[t] == 0.0 {
            continue;
        }
        // ds/dv = f/(|v||f|) − s·v/|v|², and symmetrically for f.
        dgv.scaled_add(ds[t] / (nv * nf), &f);
        dgv.scaled_add(-ds[t] * s[t] / (nv * nv), &v);
        let mut row = dgf.row_mut(t);
        row.scaled_add(ds[t] / (nv * nf), &v);
        row.scaled_add(-ds[t] * s[t] / (nf * nf), &f);
    }
    let (gvid, dh_vid) = heads.vid.backward(&cache_v, dgv.insert_axis(Axis(0)));
    let (gfrm, _) = heads.frm.backward(&cache_f, dgf);
    Ok((
        loss,
        ProblemGrads {
            heads: HeadGrads {
                vid: gvid,
                frm: gfrm,
            },
            h_vid: dh_vid.row(0).to_owned(),
            t_match,
        },
    ))
}

/// One scalar that the loss depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    VidW(usize, usize, usize),
    VidB(usize, usize),
    FrmW(usize, usize, usize),
    FrmB(usize, usize),
    HVid(usize),
}

impl Coord {
    /// Every coordinate of the heads and of `h_vid`.
    pub fn all(heads: &AlignmentHeads) -> Vec<Coord> {
        let mut out = Vec::new();
        for (is_vid, m) in [(true, &heads.vid), (false, &heads.frm)] {
            for (l, layer) in m.layers.iter().enumerate() {
                for ((i, j), _) in layer.w.indexed_iter() {
                    out.push(if is_vid {
                        Coord::VidW(l, i, j)
                    } else {
                        Coord::FrmW(l, i, j)
                    });
                }
                for j in 0..layer.b.len() {
                    out.push(if is_vid {
                        Coord::VidB(l, j)
                    } else {
                        Coord::FrmB(l, j)
                    });
                }
            }
        }
        out.extend((0..heads.vid.d_in()).map(Coord::HVid));
        out
    }

    fn slot<'a>(self, heads: &'a mut AlignmentHeads, p: &'a mut MatchProblem) -> &'a mut f64 {
        match self {
            Coord::VidW(l, i, j) => &mut heads.vid.layers[l].w[[i, j]],
            Coord::VidB(l, j) => &mut heads.vid.layers[l].b[j],
            Coord::FrmW(l, i, j) => &mut heads.frm.layers[l].w[[i, j]],
            Coord::FrmB(l, j) => &mut heads.frm.layers[l].b[j],
            Coord::HVid(j) => &mut p.h_vid[[0, j]],
        }
    }

    fn read(self, g: &ProblemGrads) -> f64 {
        match self {
            Coord::VidW(l, i, j) => g.heads.vid[l].w[[i, j]],
            Coord::VidB(l, j) => g.heads.vid[l].b[j],
            Coord::FrmW(l, i, j) => g.heads.frm[l].w[[i, j]],
            Coord::FrmB(l, j) => g.heads.frm[l].b[j],
            Coord::HVid(j) => g.h_vid[j],
        }
    }
}

/// Denominator floor for relative errors, so that near-zero gradients are
/// judged by absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)`
/// over `coords`, using central differences with step `eps`.
pub fn grad_check(
    heads: &AlignmentHeads,
    p: &MatchProblem,
    kind: LossKind,
    eps: f64,
    coords: &[Coord],
) -> Result<f64, MatchError> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(MatchError::BadProblem(format!(
            "step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let (_, g) = problem_loss_and_grad(heads, p, kind)?;
    let mut h = heads.clone();
    let mut q = p.clone();
    let mut worst: f64 = 0.0;
    for &c in coords {
        let orig = *c.slot(&mut h, &mut q);
        *c.slot(&mut h, &mut q) = orig + eps;
        let hi = problem_loss(&h, &q, kind)?;
        *c.slot(&mut h, &mut q) = orig - eps;
        let lo = problem_loss(&h, &q, kind)?;
        *c.slot(&mut h, &mut q) = orig;
        let numeric = (hi - lo) / (2.0 * eps);
        let analytic = c.read(&g);
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}
