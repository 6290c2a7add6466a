//! Network files: `{"d": 2, "neurons": [[…], …]}` with every weight written
//! to 17 significant digits, so a write/read cycle is exact.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{StudentNetwork, TeacherNetwork, WeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub d: usize,
    pub neurons: Vec<Vec<f64>>,
}

impl NetworkFile {
    pub fn from_neurons(d: usize, neurons: &[WeightVector]) -> Self {
        NetworkFile {
            d,
            neurons: neurons.iter().map(|w| w.to_vec()).collect(),
        }
    }

    fn checked_rows(self) -> Result<Vec<Vec<f64>>> {
        for row in &self.neurons {
            if row.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: row.len(),
                });
            }
        }
        Ok(self.neurons)
    }

    pub fn into_student(self) -> Result<StudentNetwork> {
        StudentNetwork::from_rows(self.checked_rows()?)
    }

    pub fn into_teacher(self) -> Result<TeacherNetwork> {
        TeacherNetwork::from_rows(self.checked_rows()?)
    }

    pub fn to_json(&self) -> String {
        let mut out = format!("{{\"d\":{},\"neurons\":[", self.d);
        for (i, row) in self.neurons.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{x:.16e}").expect("writing to a String cannot fail");
            }
            out.push(']');
        }
        out.push_str("]}");
        out
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        out.write_all(self.to_json().as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(input: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(input)?)
    }
}

pub fn write_student(s: &StudentNetwork, out: impl Write) -> Result<()> {
    NetworkFile::from_neurons(s.dim(), s.neurons()).write(out)
}

pub fn write_teacher(t: &TeacherNetwork, out: impl Write) -> Result<()> {
    NetworkFile::from_neurons(t.dim(), t.neurons()).write(out)
}

pub fn read_student(input: impl Read) -> Result<StudentNetwork> {
    NetworkFile::read(input)?.into_student()
}

pub fn read_teacher(input: impl Read) -> Result<TeacherNetwork> {
    NetworkFile::read(input)?.into_teacher()
}
