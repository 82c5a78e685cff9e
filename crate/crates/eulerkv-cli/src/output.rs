//! Run artifacts: the ledger/monitor CSV and binary coefficient
//! snapshots. Both are deterministic byte-for-byte: floats print through
//! Rust's shortest round-trip formatter and snapshots store raw
//! little-endian coefficient grids, so rerunning a scenario reproduces
//! identical files.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use eulerkv::{GalerkinBasis, SimState};

pub const CSV_HEADER: &str = "t,e_kin,e_sto,d_cum,w_cum,residual,v_l2,f_l2,grad_f_l2,\
                              grad_v_linf,grad_ev_lp,min_det_f,det_defect,return_defect";

/// One ledger row. The two defect columns stay empty where they are not
/// defined: the determinant defect needs a centered difference (so never
/// on the first or last sample), the return defect needs tracking on.
#[derive(Clone, Debug, Default)]
pub struct CsvRow {
    pub t: f64,
    pub e_kin: f64,
    pub e_sto: f64,
    pub d_cum: f64,
    pub w_cum: f64,
    pub residual: f64,
    pub v_l2: f64,
    pub f_l2: f64,
    pub grad_f_l2: f64,
    pub grad_v_linf: f64,
    pub grad_ev_lp: f64,
    pub min_det_f: f64,
    pub det_defect: Option<f64>,
    pub return_defect: Option<f64>,
}

fn push_f64(line: &mut String, v: f64) {
    line.push(',');
    line.push_str(&format!("{v}"));
}

pub fn csv_text(rows: &[CsvRow]) -> String {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in rows {
        let mut line = format!("{}", r.t);
        for v in [
            r.e_kin,
            r.e_sto,
            r.d_cum,
            r.w_cum,
            r.residual,
            r.v_l2,
            r.f_l2,
            r.grad_f_l2,
            r.grad_v_linf,
            r.grad_ev_lp,
            r.min_det_f,
        ] {
            push_f64(&mut line, v);
        }
        for opt in [r.det_defect, r.return_defect] {
            match opt {
                Some(v) => push_f64(&mut line, v),
                None => line.push(','),
            }
        }
        text.push_str(&line);
        text.push('\n');
    }
    text
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> std::io::Result<()> {
    std::fs::write(path, csv_text(rows))
}

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"VFSN";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a snapshot: magic {found:?}")]
    Magic { found: [u8; 4] },
    #[error("unsupported snapshot version {found}")]
    Version { found: u32 },
    #[error("snapshot truncated: {context}")]
    Truncated { context: &'static str },
    #[error("field name is not utf-8")]
    FieldName,
    #[error("payload holds {found} bytes where the header promises {expected}")]
    Payload { expected: usize, found: usize },
}

/// Spectral state of one time level in portable form: the header records
/// the basis signature (modes, grid, domain) and the payload stores one
/// row-major little-endian f64 coefficient grid per named field.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub nx: u32,
    pub ny: u32,
    pub mx: u32,
    pub my: u32,
    pub lx: f64,
    pub ly: f64,
    pub t: f64,
    pub fields: Vec<(String, Array2<f64>)>,
}

impl Snapshot {
    pub fn from_state(basis: &GalerkinBasis, s: &SimState) -> Self {
        let mut fields: Vec<(String, Array2<f64>)> = vec![
            ("v1".into(), s.v[0].clone()),
            ("v2".into(), s.v[1].clone()),
            ("f11".into(), s.f[0].clone()),
            ("f12".into(), s.f[1].clone()),
            ("f21".into(), s.f[2].clone()),
            ("f22".into(), s.f[3].clone()),
        ];
        if let Some(z) = &s.zeta {
            fields.push(("zeta1".into(), z[0].clone()));
            fields.push(("zeta2".into(), z[1].clone()));
        }
        let (nx, ny) = basis.coeff_shape();
        let (mx, my) = basis.grid_shape();
        Self {
            nx: nx as u32,
            ny: ny as u32,
            mx: mx as u32,
            my: my as u32,
            lx: basis.domain.lx,
            ly: basis.domain.ly,
            t: s.t,
            fields,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.nx as usize * self.ny as usize;
        let mut buf = Vec::with_capacity(64 + self.fields.len() * (16 + 8 * cells));
        buf.extend_from_slice(&SNAPSHOT_MAGIC);
        buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        for n in [self.nx, self.ny, self.mx, self.my] {
            buf.extend_from_slice(&n.to_le_bytes());
        }
        for x in [self.lx, self.ly, self.t] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for (name, _) in &self.fields {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
        }
        for (_, grid) in &self.fields {
            for &v in grid.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut cur = Cursor { bytes, at: 0 };
        let magic: [u8; 4] = cur.take::<4>("magic")?;
        if magic != SNAPSHOT_MAGIC {
            return Err(SnapshotError::Magic { found: magic });
        }
        let version = u32::from_le_bytes(cur.take::<4>("version")?);
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version { found: version });
        }
        let nx = u32::from_le_bytes(cur.take::<4>("nx")?);
        let ny = u32::from_le_bytes(cur.take::<4>("ny")?);
        let mx = u32::from_le_bytes(cur.take::<4>("mx")?);
        let my = u32::from_le_bytes(cur.take::<4>("my")?);
        let lx = f64::from_le_bytes(cur.take::<8>("lx")?);
        let ly = f64::from_le_bytes(cur.take::<8>("ly")?);
        let t = f64::from_le_bytes(cur.take::<8>("t")?);
        let n_fields = u32::from_le_bytes(cur.take::<4>("field count")?) as usize;
        let mut names = Vec::with_capacity(n_fields);
        for _ in 0..n_fields {
            let len = u32::from_le_bytes(cur.take::<4>("name length")?) as usize;
            let raw = cur.take_slice(len, "field name")?;
            names.push(
                String::from_utf8(raw.to_vec()).map_err(|_| SnapshotError::FieldName)?,
            );
        }
        let cells = nx as usize * ny as usize;
        let expected = n_fields * cells * 8;
        let found = bytes.len() - cur.at;
        if found != expected {
            return Err(SnapshotError::Payload { expected, found });
        }
        let mut fields = Vec::with_capacity(n_fields);
        for name in names {
            let mut data = Vec::with_capacity(cells);
            for _ in 0..cells {
                data.push(f64::from_le_bytes(cur.take::<8>("payload")?));
            }
            let grid = Array2::from_shape_vec((nx as usize, ny as usize), data)
                .expect("length checked above");
            fields.push((name, grid));
        }
        Ok(Self {
            nx,
            ny,
            mx,
            my,
            lx,
            ly,
            t,
            fields,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), SnapshotError> {
        let io = |source| SnapshotError::Io {
            path: path.into(),
            source,
        };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, SnapshotError> {
        let bytes = std::fs::read(path).map_err(|source| SnapshotError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self, context: &'static str) -> Result<[u8; N], SnapshotError> {
        let raw = self.take_slice(N, context)?;
        Ok(raw.try_into().expect("length matches"))
    }

    fn take_slice(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], SnapshotError> {
        if self.at + n > self.bytes.len() {
            return Err(SnapshotError::Truncated { context });
        }
        let raw = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(raw)
    }
}
