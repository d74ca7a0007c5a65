//! UDDM: adapted-model container.
//!
//! ```text
//! "UDDM" | u32 version=1 | sections until EOF
//! section = 4-byte tag | payload
//! SRCD, TGTD  d x K unit-norm dictionaries
//! SCLS        2 x K per-atom scales (row 0 source, row 1 target)
//! CPLG        1 x L_t selected source column per target feature
//! CODE        row 0 = [L_t, K, 0], then one row (column, atom, value) per nonzero
//! SVMW        C x (F+1) classifier weights, bias in the last column (optional)
//! META        u64 byte length | UTF-8 `key = value` lines
//! ```
//! Matrix payloads use the DMAT block layout (u64 rows, u64 cols, row-major f64).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2};
use uddl::data::{read_matrix_block, write_matrix_block};
use uddl::linalg::frobenius_sq;
use uddl::{
    apply_coupling, joint_objective, AdaptedDictionaries, CouplingMatrix, Dictionary,
    FeatureMatrix, LinearSvmModel, SparseCode, SparseCodeMatrix, SvmParams,
};

use crate::error::{format_err, CliError, CliResult};

pub const UDDM_MAGIC: &[u8; 4] = b"UDDM";
pub const UDDM_VERSION: u32 = 1;
pub const BLOCK_IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedModel {
    pub dictionaries: AdaptedDictionaries<f64>,
    pub coupling: CouplingMatrix,
    pub codes: SparseCodeMatrix<f64>,
    pub svm: Option<LinearSvmModel<f64>>,
    /// Ordered `key = value` metadata (config echo, objective trace, ...).
    pub meta: Vec<(String, String)>,
}

impl AdaptedModel {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_f64(&self, key: &str) -> CliResult<f64> {
        let v = self
            .meta_value(key)
            .ok_or_else(|| format_err(format!("model metadata lacks {key}")))?;
        v.parse()
            .map_err(|_| format_err(format!("model metadata {key} = {v:?} is not a number")))
    }

    /// Per-iteration objective trace stored under `objective_trace`.
    pub fn objective_trace(&self) -> CliResult<Vec<f64>> {
        parse_list(self.meta_value("objective_trace").unwrap_or(""))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read(&mut r)
    }

    pub fn write(&self, w: &mut impl Write) -> CliResult<()> {
        let d = &self.dictionaries;
        w.write_all(UDDM_MAGIC)?;
        w.write_all(&UDDM_VERSION.to_le_bytes())?;

        w.write_all(b"SRCD")?;
        write_matrix_block(w, d.source_dict.atoms())?;
        w.write_all(b"TGTD")?;
        write_matrix_block(w, d.target_dict.atoms())?;

        let k = d.num_atoms();
        let mut scales = Array2::zeros((2, k));
        scales
            .row_mut(0)
            .assign(&Array1::from(d.source_scales.clone()));
        scales
            .row_mut(1)
            .assign(&Array1::from(d.target_scales.clone()));
        w.write_all(b"SCLS")?;
        write_matrix_block(w, scales.view())?;

        let sel = Array2::from_shape_fn((1, self.coupling.cols()), |(_, j)| {
            self.coupling.selected_source()[j] as f64
        });
        w.write_all(b"CPLG")?;
        write_matrix_block(w, sel.view())?;

        let nnz: usize = self.codes.columns().iter().map(SparseCode::nnz).sum();
        let mut code = Array2::zeros((nnz + 1, 3));
        code[[0, 0]] = self.codes.len() as f64;
        code[[0, 1]] = self.codes.num_atoms() as f64;
        let mut row = 1;
        for (j, c) in self.codes.columns().iter().enumerate() {
            for (atom, v) in c.iter() {
                code[[row, 0]] = j as f64;
                code[[row, 1]] = atom as f64;
                code[[row, 2]] = v;
                row += 1;
            }
        }
        w.write_all(b"CODE")?;
        write_matrix_block(w, code.view())?;

        if let Some(svm) = &self.svm {
            let (c, f) = svm.weights.dim();
            let mut m = Array2::zeros((c, f + 1));
            m.slice_mut(s![.., ..f]).assign(&svm.weights);
            m.column_mut(f).assign(&svm.biases);
            w.write_all(b"SVMW")?;
            write_matrix_block(w, m.view())?;
        }

        let mut meta = self.meta.clone();
        meta.push(("source_features".into(), self.coupling.rows().to_string()));
        meta.push((
            "stacked_dict_atoms_unit_norm".into(),
            d.stacked_dict_atoms_unit_norm.to_string(),
        ));
        meta.push(("repaired_source".into(), join(&d.repaired_source)));
        meta.push(("repaired_target".into(), join(&d.repaired_target)));
        if let Some(svm) = &self.svm {
            meta.push(("svm_lambda".into(), format!("{:?}", svm.reg_lambda)));
            meta.push(("svm_epochs".into(), svm.epochs.to_string()));
            meta.push(("svm_seed".into(), svm.seed.to_string()));
        }
        let text: String = meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        w.write_all(b"META")?;
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> CliResult<Self> {
        let mut head = [0u8; 8];
        read_exact(r, &mut head, "header")?;
        if &head[..4] != UDDM_MAGIC {
            return Err(format_err(format!(
                "bad magic {:?}, expected \"UDDM\"",
                &head[..4]
            )));
        }
        let version = u32::from_le_bytes(head[4..].try_into().expect("4 bytes"));
        if version != UDDM_VERSION {
            return Err(format_err(format!("unsupported UDDM version {version}")));
        }

        let (mut srcd, mut tgtd, mut scls, mut cplg, mut code, mut svmw, mut meta_text) =
            (None, None, None, None, None, None, None);
        loop {
            let mut tag = [0u8; 4];
            match r.read(&mut tag[..1])? {
                0 => break,
                _ => read_exact(r, &mut tag[1..], "section tag")?,
            }
            match &tag {
                b"SRCD" => srcd = Some(read_matrix_block::<f64>(r)?),
                b"TGTD" => tgtd = Some(read_matrix_block::<f64>(r)?),
                b"SCLS" => scls = Some(read_matrix_block::<f64>(r)?),
                b"CPLG" => cplg = Some(read_matrix_block::<f64>(r)?),
                b"CODE" => code = Some(read_matrix_block::<f64>(r)?),
                b"SVMW" => svmw = Some(read_matrix_block::<f64>(r)?),
                b"META" => {
                    let mut len = [0u8; 8];
                    read_exact(r, &mut len, "META length")?;
                    let len = u64::from_le_bytes(len);
                    let mut bytes = Vec::new();
                    r.take(len).read_to_end(&mut bytes)?;
                    if bytes.len() as u64 != len {
                        return Err(format_err("truncated META section"));
                    }
                    meta_text = Some(
                        String::from_utf8(bytes)
                            .map_err(|_| format_err("META section is not valid UTF-8"))?,
                    );
                }
                other => {
                    return Err(format_err(format!(
                        "unknown section tag {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        let need = |name: &str| format_err(format!("model lacks {name} section"));
        let srcd = srcd.ok_or_else(|| need("SRCD"))?;
        let tgtd = tgtd.ok_or_else(|| need("TGTD"))?;
        let scls = scls.ok_or_else(|| need("SCLS"))?;
        let cplg = cplg.ok_or_else(|| need("CPLG"))?;
        let code = code.ok_or_else(|| need("CODE"))?;
        let meta_text = meta_text.ok_or_else(|| need("META"))?;
        let mut meta =
            crate::config::parse_pairs(&meta_text).map_err(|e| format_err(format!("META: {e}")))?;

        let k = srcd.ncols();
        if tgtd.dim() != srcd.dim() || scls.dim() != (2, k) {
            return Err(shape_err(format!(
                "inconsistent sections: SRCD {:?}, TGTD {:?}, SCLS {:?}",
                srcd.dim(),
                tgtd.dim(),
                scls.dim()
            )));
        }

        let mut take_meta = |key: &str| -> Option<String> {
            let i = meta.iter().position(|(k, _)| k == key)?;
            Some(meta.remove(i).1)
        };
        let source_features =
            take_meta("source_features").ok_or_else(|| format_err("META lacks source_features"))?;
        let source_features: usize = parse_num(&source_features, "source_features")?;
        let unit =
            take_meta("stacked_dict_atoms_unit_norm").unwrap_or_else(|| "true".into()) == "true";
        let repaired_source = parse_indices(&take_meta("repaired_source").unwrap_or_default())?;
        let repaired_target = parse_indices(&take_meta("repaired_target").unwrap_or_default())?;
        let svm_lambda = take_meta("svm_lambda");
        let svm_epochs = take_meta("svm_epochs");
        let svm_seed = take_meta("svm_seed");

        let dictionaries = AdaptedDictionaries {
            source_dict: Dictionary::new(srcd)?,
            target_dict: Dictionary::new(tgtd)?,
            source_scales: scls.row(0).to_vec(),
            target_scales: scls.row(1).to_vec(),
            stacked_dict_atoms_unit_norm: unit,
            repaired_source,
            repaired_target,
        };

        if cplg.nrows() != 1 {
            return Err(shape_err(format!(
                "CPLG must have one row, found {}",
                cplg.nrows()
            )));
        }
        let selected = cplg
            .row(0)
            .iter()
            .map(|&v| as_index(v, "coupling index"))
            .collect::<CliResult<Vec<_>>>()?;
        let coupling = CouplingMatrix::new(source_features, selected)?;

        let codes = decode_codes(&code)?;
        if codes.len() != coupling.cols() || codes.num_atoms() != k {
            return Err(shape_err(format!(
                "CODE is {}x{} but coupling has {} target columns and dictionaries {} atoms",
                codes.num_atoms(),
                codes.len(),
                coupling.cols(),
                k
            )));
        }

        let svm = match svmw {
            None => None,
            Some(m) => {
                if m.ncols() < 1 {
                    return Err(shape_err("SVMW has no bias column"));
                }
                let f = m.ncols() - 1;
                let parse_meta = |v: Option<String>, key: &str| -> CliResult<String> {
                    v.ok_or_else(|| format_err(format!("SVMW present but META lacks {key}")))
                };
                let params = SvmParams {
                    reg_lambda: parse_num(&parse_meta(svm_lambda, "svm_lambda")?, "svm_lambda")?,
                    epochs: parse_num(&parse_meta(svm_epochs, "svm_epochs")?, "svm_epochs")?,
                    seed: parse_num(&parse_meta(svm_seed, "svm_seed")?, "svm_seed")?,
                };
                Some(LinearSvmModel::new(
                    m.slice(s![.., ..f]).to_owned(),
                    m.column(f).to_owned(),
                    params,
                )?)
            }
        };

        Ok(Self {
            dictionaries,
            coupling,
            codes,
            svm,
            meta,
        })
    }

    /// Recomputes `‖Y_s·P − D_s·X‖²` and `‖Y_t − D_t·X‖²` and checks their sum
    /// against the stacked objective recorded at fit time.
    pub fn verify_block_identity(
        &self,
        source: &FeatureMatrix<f64>,
        target: &FeatureMatrix<f64>,
    ) -> CliResult<BlockIdentity> {
        let stacked = self.meta_f64("stacked_objective")?;
        let (term_source, term_target) = joint_objective(
            source,
            target,
            &self.coupling,
            &self.dictionaries,
            &self.codes,
        )?;
        let sum = term_source + term_target;
        // Below round-off of the signal energy the objective carries no digits.
        let coupled = apply_coupling(source, &self.coupling)?;
        let energy = frobenius_sq(coupled.values()) + frobenius_sq(target.values());
        let scale = stacked
            .abs()
            .max(energy * f64::EPSILON)
            .max(f64::MIN_POSITIVE);
        let check = BlockIdentity {
            stacked,
            term_source,
            term_target,
            relative_error: (stacked - sum).abs() / scale,
        };
        if check.relative_error > BLOCK_IDENTITY_TOL {
            return Err(CliError::Core(uddl::Error::Numeric(format!(
                "block identity violated: stacked {stacked:e} vs terms {sum:e} (relative {:e})",
                check.relative_error
            ))));
        }
        Ok(check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockIdentity {
    pub stacked: f64,
    pub term_source: f64,
    pub term_target: f64,
    pub relative_error: f64,
}

fn decode_codes(code: &Array2<f64>) -> CliResult<SparseCodeMatrix<f64>> {
    if code.ncols() != 3 || code.nrows() < 1 {
        return Err(shape_err(format!(
            "CODE must be (nnz+1) x 3, found {:?}",
            code.dim()
        )));
    }
    let cols = as_index(code[[0, 0]], "CODE column count")?;
    let k = as_index(code[[0, 1]], "CODE atom count")?;
    let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); cols];
    for row in code.rows().into_iter().skip(1) {
        let j = as_index(row[0], "CODE column")?;
        let atom = as_index(row[1], "CODE atom")?;
        if j >= cols {
            return Err(shape_err(format!("CODE column {j} out of range {cols}")));
        }
        entries[j].push((atom, row[2]));
    }
    let columns = entries
        .into_iter()
        .map(|e| SparseCode::new(e, k))
        .collect::<uddl::Result<Vec<_>>>()?;
    Ok(SparseCodeMatrix::new(k, columns)?)
}

fn as_index(v: f64, what: &str) -> CliResult<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(format_err(format!("{what} {v} is not a valid index")))
    }
}

fn shape_err(msg: impl Into<String>) -> CliError {
    CliError::Core(uddl::Error::Shape(msg.into()))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> CliResult<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(format!("truncated while reading {what}")),
        _ => CliError::Io(e),
    })
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| format_err(format!("META {key} = {v:?} is invalid")))
}

fn join(ids: &[usize]) -> String {
    ids.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_indices(v: &str) -> CliResult<Vec<usize>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(s.trim(), "index list"))
        .collect()
}

/// Parses a comma-separated list of floats.
pub fn parse_list(v: &str) -> CliResult<Vec<f64>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(s.trim(), "number list"))
        .collect()
}

/// Formats floats with round-trip precision.
pub fn format_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}
