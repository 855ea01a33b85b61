use anyhow::{Context, Result};
use persuasion_core::laminar::Mechanism;
use persuasion_core::model::Problem;
use persuasion_core::reduced_form::{binding_groups, Atom, BindingBlock, Diagnostics, MenuSolution, SolveMode};
use persuasion_core::verify::ic_report;
use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use std::io::{self, Write};
use std::path::Path;

/// Pretty JSON with every float written as `d.dddddddddddddddde±x`
/// (17 significant digits), so output bytes only depend on the values.
struct Canonical<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident $(, $arg:ident : $ty:ty)*;)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for Canonical<'_> {
    delegate! {
        begin_array;
        end_array;
        begin_array_value, first: bool;
        end_array_value;
        begin_object;
        end_object;
        begin_object_key, first: bool;
        begin_object_value;
        end_object_value;
    }

    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Canonical(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Debug, Clone, serde::Serialize, Deserialize)]
pub struct AtomEntry {
    pub action: usize,
    pub label: String,
    pub p: f64,
    pub mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, serde::Serialize, Deserialize)]
pub struct TypeEntry {
    pub label: String,
    pub truthful_value: f64,
    pub atoms: Vec<AtomEntry>,
    pub binding_groups: Vec<BindingBlock>,
}

#[derive(Debug, Clone, serde::Serialize, Deserialize)]
pub struct SolutionDoc {
    pub version: u32,
    pub mode: SolveMode,
    pub objective: f64,
    pub eps_bind: f64,
    pub types: Vec<TypeEntry>,
    pub ic_matrix: Vec<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

impl SolutionDoc {
    pub fn new(problem: &Problem, sol: &MenuSolution) -> Result<Self> {
        let ic = ic_report(problem, sol);
        let types = (0..sol.num_types())
            .map(|t| {
                Ok(TypeEntry {
                    label: problem.types[t].label.clone(),
                    truthful_value: ic.truthful[t],
                    atoms: sol.atoms[t]
                        .iter()
                        .map(|a| AtomEntry {
                            action: a.action,
                            label: problem.actions[a.action].clone(),
                            p: a.p,
                            mean: a.mean(),
                            z: a.z,
                        })
                        .collect(),
                    binding_groups: binding_groups(sol, t, sol.eps_bind)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            version: crate::problem_file::VERSION,
            mode: sol.mode,
            objective: sol.objective,
            eps_bind: sol.eps_bind,
            types,
            ic_matrix: ic.matrix,
            diagnostics: sol.diagnostics.clone(),
        })
    }

    /// Rebuilds the solver's view; payoffs are recomputed from the atoms.
    pub fn to_solution(&self, problem: &Problem) -> Result<MenuSolution> {
        let atoms = self
            .types
            .iter()
            .map(|t| {
                t.atoms
                    .iter()
                    .map(|a| Atom {
                        action: a.action,
                        p: a.p,
                        z: a.z,
                    })
                    .collect()
            })
            .collect();
        let mut sol = MenuSolution::from_atoms(problem, self.mode, atoms)?;
        sol.eps_bind = self.eps_bind;
        sol.diagnostics = self.diagnostics.clone();
        Ok(sol)
    }
}

#[derive(Debug, Clone, serde::Serialize, Deserialize)]
pub struct MechanismDoc {
    pub version: u32,
    pub mechanism: Mechanism,
}
