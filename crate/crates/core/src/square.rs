//! Continuous, tensor, partial, discrete and localized square functions.

use num_complex::Complex64;

use crate::decomposition::CoefficientMap;
use crate::error::{LabError, Result};
use crate::filters::{FilterBank, Spectrum, TensorFilterBank};
use crate::grid::{Collection, DyadicCube, GridFunction, GridSpec};
use crate::par;

/// Number of bands whose squared magnitudes are held in memory at once.
const BAND_CHUNK: usize = 8;

/// Nonnegative square-function samples with a note on what produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareFunctionResult {
    pub function: GridFunction,
    pub provenance: String,
}

impl SquareFunctionResult {
    fn from_squares(spec: GridSpec, vshape: Vec<usize>, squares: Vec<f64>, provenance: String) -> Self {
        let values = squares.into_iter().map(|s| Complex64::new(s.sqrt(), 0.0)).collect();
        let function = GridFunction::new(spec, vshape, values).expect("square sums are finite");
        SquareFunctionResult { function, provenance }
    }

    pub fn values(&self) -> Vec<f64> {
        self.function.real_parts()
    }
}

/// `(sum_k |f * psi_k|^2)^{1/2}` for a single bank spanning all axes.
pub fn square_function(f: &GridFunction, bank: &FilterBank) -> Result<SquareFunctionResult> {
    let tbank = TensorFilterBank::new(vec![bank.clone()])?;
    let mut r = tensor_square_function(f, &tbank)?;
    r.provenance = format!("S_{} over scales {:?}", bank.dim(), bank.scales());
    Ok(r)
}

/// `(sum_{k in Z^N} |f * Psi_k|^2)^{1/2}`.
pub fn tensor_square_function(f: &GridFunction, tbank: &TensorFilterBank) -> Result<SquareFunctionResult> {
    let all: Vec<usize> = (0..tbank.factors().len()).collect();
    let mut r = partial_square_function(f, tbank, &all)?;
    r.provenance = format!("tensor S over {} factors", tbank.factors().len());
    Ok(r)
}

/// Square sum over the scales of the selected factors only; the other
/// factors are left unfiltered.
pub fn partial_square_function(
    f: &GridFunction,
    tbank: &TensorFilterBank,
    factors: &[usize],
) -> Result<SquareFunctionResult> {
    tbank.check_grid(f.spec())?;
    if factors.is_empty() {
        return Err(LabError::Config("partial square function needs at least one factor".into()));
    }
    let nf = tbank.factors().len();
    if let Some(&bad) = factors.iter().find(|&&j| j >= nf) {
        return Err(LabError::Config(format!("factor {bad} out of range (bank has {nf})")));
    }
    let mut selected = vec![false; nf];
    factors.iter().for_each(|&j| selected[j] = true);

    let mut tuples: Vec<Vec<Option<u32>>> = vec![vec![]];
    for (j, fb) in tbank.factors().iter().enumerate() {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                let opts: Vec<Option<u32>> =
                    if selected[j] { fb.scales().map(Some).collect() } else { vec![None] };
                opts.into_iter().map(move |o| {
                    let mut t = t.clone();
                    t.push(o);
                    t
                })
            })
            .collect();
    }

    let spectrum = Spectrum::new(f);
    let mut acc = vec![0.0; f.values().len()];
    for chunk in tuples.chunks(BAND_CHUNK) {
        let bands = par::map(chunk, |t| {
            spectrum.apply(&tbank.multiplier(t)).values().iter().map(|v| v.norm_sqr()).collect::<Vec<f64>>()
        });
        for b in bands {
            acc.iter_mut().zip(&b).for_each(|(a, x)| *a += x);
        }
    }
    Ok(SquareFunctionResult::from_squares(
        f.spec().clone(),
        f.vshape().to_vec(),
        acc,
        format!("partial S over factors {factors:?}"),
    ))
}

/// `(sum_{I in c} |a_I|^2 / |I| 1_I)^{1/2}` per vector index.
pub fn discrete_square_function(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
) -> Result<SquareFunctionResult> {
    for q in coeffs.cubes() {
        if !c.contains(q) {
            return Err(LabError::NotInCollection(q.to_string()));
        }
    }
    let n = spec.len();
    let ncomp = coeffs.ncomp();
    let mut acc = vec![0.0; n * ncomp];
    for (q, a) in coeffs.iter() {
        if !spec.resolves(q) {
            return Err(LabError::BelowResolution(vec![q.to_string()]));
        }
        let inv = 1.0 / q.measure();
        let cells = spec.cube_cells(q);
        for (v, av) in a.iter().enumerate() {
            let w = av.norm_sqr() * inv;
            if w == 0.0 {
                continue;
            }
            let comp = &mut acc[v * n..(v + 1) * n];
            for &i in &cells {
                comp[i] += w;
            }
        }
    }
    Ok(SquareFunctionResult::from_squares(
        spec.clone(),
        coeffs.vshape().to_vec(),
        acc,
        format!("discrete S over {} cubes", c.len()),
    ))
}

/// Discrete square function over the members of `c` inside `q0`.
pub fn localized_square_function(
    spec: &GridSpec,
    coeffs: &CoefficientMap,
    c: &Collection,
    q0: &DyadicCube,
) -> Result<SquareFunctionResult> {
    let local = c.restrict(q0);
    let mut r = discrete_square_function(spec, &coeffs.restricted(&local), &local)?;
    r.provenance = format!("discrete S localized to {q0}");
    Ok(r)
}
